"""LMI convergence certificates evaluated at a single step.

The stacked vector is ``phi = [z, u, delta, alpha, 1]`` with ``z`` the
class-K image of the per-task barriers, ``u`` every virtual robot's input in
layout order and ``delta``/``alpha`` in the allocator's virtual-robot-major
order. A certificate holds at a step if some positive ``tau`` makes
``tau1 B1 + tau2 B2 + tau3 B3 - B0`` positive semidefinite (``B0_prime``
replaces ``B0`` for the velocity-controlled UAV model).

Block indices below are 1-based to match the block layout of ``phi``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .allocator import AllocationSolution, MiqpProblem
from .cbf import lie_terms
from .dynamics import UavState, drift, input_matrix, rotation

PROPOSITION_1 = 1  # first-order barrier rows
PROPOSITION_2 = 2  # integral (second-order) barrier rows


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class PhiLayout:
    n_t: int
    n_u: int
    n_delta: int
    n_alpha: int

    def __post_init__(self):
        for name in ("n_t", "n_u", "n_delta", "n_alpha"):
            if getattr(self, name) < 1:
                raise CertificateError(f"PhiLayout.{name} must be positive")

    @classmethod
    def from_problem(cls, problem: MiqpProblem) -> "PhiLayout":
        lay = problem.layout
        return cls(lay.n_t, lay.n_u, lay.n_pairs, lay.n_pairs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_t, self.n_u, self.n_delta, self.n_alpha, 1)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes[:-1])]))

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def block(self, k: int) -> slice:
        """Slice of block ``k`` (1-based)."""
        o = self.offsets[k - 1]
        return slice(o, o + self.sizes[k - 1])

    def stack(self, z, u, delta, alpha) -> np.ndarray:
        parts = [np.asarray(p, dtype=float).reshape(-1) for p in (z, u, delta, alpha)]
        for k, p in enumerate(parts):
            if p.size != self.sizes[k]:
                raise CertificateError(f"phi block {k + 1}: expected {self.sizes[k]} entries, "
                                       f"got {p.size}")
        return np.concatenate(parts + [np.ones(1)])


@dataclass
class CertificateMatrices:
    layout: PhiLayout
    B0: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    B0_prime: np.ndarray
    A_alpha: np.ndarray
    b_alpha: np.ndarray
    A_delta: np.ndarray
    b_delta: np.ndarray
    c: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def lhs(self, which: int) -> np.ndarray:
        if which == PROPOSITION_1:
            return self.B0
        if which == PROPOSITION_2:
            return self.B0_prime
        raise CertificateError(f"unknown proposition {which!r}")


class _Blocks:
    """Fill upper-triangular blocks, mirror them on exit."""

    def __init__(self, name: str, layout: PhiLayout):
        self.name = name
        self.layout = layout
        self.M = np.zeros((layout.dim, layout.dim))

    def set(self, i: int, j: int, value):
        if i > j:
            raise CertificateError(f"{self.name}({i},{j}): only upper blocks are assembled")
        rows, cols = self.layout.sizes[i - 1], self.layout.sizes[j - 1]
        val = np.asarray(value, dtype=float)
        if val.ndim < 2:
            val = val.reshape(rows, cols) if val.size == rows * cols else val
        if val.shape != (rows, cols):
            raise CertificateError(f"{self.name}({i},{j}): expected shape {(rows, cols)}, "
                                   f"got {val.shape}")
        bi, bj = self.layout.block(i), self.layout.block(j)
        if i == j:
            self.M[bi, bj] = 0.5 * (val + val.T)
        else:
            self.M[bi, bj] = val
            self.M[bj, bi] = val.T

    def done(self) -> np.ndarray:
        return self.M


def quadratic_constraint_forms(problem: MiqpProblem):
    """``(A_alpha, b_alpha, A_delta, b_delta)`` from the counting and slack-box rows.

    The counting rows (one task per robot, capability requirement, per-task
    limits) are taken in the ``<=`` form used by the allocator, restricted to
    the alpha columns. The slack box becomes ``[I; -I] delta <= delta_max``.
    """
    lay = problem.layout
    asl = lay.alpha_slice
    rows = [problem.rows(name) for name in ("alpha_sum", "requirement", "limits")]
    A_alpha = np.vstack([G[:, asl] for G, _ in rows])
    b_alpha = np.concatenate([h for _, h in rows])
    eye = np.eye(lay.n_pairs)
    A_delta = np.vstack([eye, -eye])
    b_delta = np.full(2 * lay.n_pairs, problem.params.delta_max)
    return A_alpha, b_alpha, A_delta, b_delta


def task_barriers(tasks, states, assignment):
    """Per-task barrier ``h_j`` summed over the robots assigned to task ``j``.

    ``assignment[j]`` lists ``(robot, virtual robot)`` pairs. Returns the
    vector ``h`` and the matching vector of first derivatives ``L``.
    """
    h = np.zeros(len(tasks))
    L = np.zeros(len(tasks))
    for j, task in enumerate(tasks):
        for i, _ in assignment[j]:
            hj, _, Lj, _, _ = lie_terms(task, states[i])
            h[j] += hj
            L[j] += Lj
    return h, L


def assignment_from_alpha(alpha: np.ndarray, robot_of) -> list[list[tuple[int, int]]]:
    """``alpha`` is ``n_t x n_vr``; returns per task the assigned ``(robot, v)`` pairs."""
    alpha = np.asarray(alpha)
    return [[(int(robot_of[v]), int(v)) for v in np.flatnonzero(alpha[j] > 0.5)]
            for j in range(alpha.shape[0])]


def assemble_certificate_matrices(states, problem: MiqpProblem, phi: PhiLayout, tasks, modes,
                                  alpha, k_v: float, c: float = 1.0, c1: float = 1.0,
                                  c2: float = 1.0) -> CertificateMatrices:
    """Certificate matrices at ``states`` for the allocation ``alpha`` (``n_t x n_vr``).

    ``tasks`` gives the class-K slopes of the barrier block; ``modes`` the
    mode of every virtual robot.
    """
    lay = problem.layout
    if phi != PhiLayout.from_problem(problem):
        raise CertificateError("phi layout does not match the allocation problem")
    if len(tasks) != lay.n_t or len(modes) != lay.n_vr:
        raise CertificateError("task or mode count does not match the allocation problem")
    for name, val in (("c", c), ("c1", c1), ("c2", c2)):
        if not val > 0:
            raise CertificateError(f"{name} must be positive")
    n_t, n_pairs = lay.n_t, lay.n_pairs
    alpha = np.asarray(alpha)
    assignment = assignment_from_alpha(alpha, problem.robot_of)
    slopes = np.array([t.gamma1.derivative() for t in tasks])
    A_alpha, b_alpha, A_delta, b_delta = quadratic_constraint_forms(problem)

    # first-order certificate: phi' B0 phi = c |z|^2 + d/dt |z|^2
    b0 = _Blocks("B0", phi)
    b0.set(1, 1, c * np.eye(n_t))
    dz_du = np.zeros((n_t, lay.n_u))  # positions do not depend on u for this model
    b0.set(1, 2, dz_du)
    _, L = task_barriers(tasks, states, assignment)
    b0.set(1, 5, (slopes * L).reshape(n_t, 1))

    # second-order certificate in h = z / slope
    E_g = np.zeros((n_t, lay.n_u))
    drift_terms = np.zeros(n_t)
    for j, task in enumerate(tasks):
        for i, v in assignment[j]:
            s = states[i]
            _, _, _, dL_dx, dL_deta = lie_terms(task, s)
            f = rotation(s.theta) @ s.velocity
            E_g[j, lay.u_slice(v)] += dL_deta @ input_matrix(modes[v], k_v)
            drift_terms[j] += float(dL_dx @ f) + float(dL_deta @ drift(s.eta, k_v))
    inv = 1.0 / slopes
    bp = _Blocks("B0_prime", phi)
    bp.set(1, 1, np.diag(-c1 * c2 * inv ** 2))
    bp.set(1, 2, -inv[:, None] * E_g)
    bp.set(1, 5, (-inv * (drift_terms + (c1 + c2) * L)).reshape(n_t, 1))
    bp.set(5, 5, [[-2.0 * float(L @ L)]])

    # slack rows: phi' B1 phi = -sum delta_vj * residual_vj
    b1 = _Blocks("B1", phi)
    m13 = np.zeros((n_t, n_pairs))
    m23 = np.zeros((lay.n_u, n_pairs))
    m35 = np.zeros((n_pairs, 1))
    for v in range(lay.n_vr):
        for j in range(n_t):
            row = problem.cbf_rows[v][j]
            d = lay.delta_index(v, j) - lay.delta_slice.start
            m23[lay.u_slice(v), d] = -0.5 * row.a
            if len(assignment[j]) == 1 and assignment[j][0][1] == v:
                m13[j, d] = -0.5 * row.gamma_weight
                m35[d, 0] = 0.5 * (row.b + row.gamma_weight * row.gamma_value)
            else:
                m35[d, 0] = 0.5 * row.b
    b1.set(1, 3, m13)
    b1.set(2, 3, m23)
    b1.set(3, 3, -np.eye(n_pairs))
    b1.set(3, 5, m35)

    pr = problem.prioritization
    b2 = _Blocks("B2", phi)
    b2.set(3, 4, 0.5 * pr.Theta.T @ pr.Phi)
    b2.set(4, 4, pr.Phi.T @ pr.Phi)
    b2.set(4, 5, (-0.5 * pr.Phi.T @ pr.Psi).reshape(-1, 1))

    b3 = _Blocks("B3", phi)
    b3.set(3, 3, A_delta.T @ A_delta)
    b3.set(3, 5, (-0.5 * A_delta.T @ b_delta).reshape(-1, 1))
    b3.set(4, 4, A_alpha.T @ A_alpha)
    b3.set(4, 5, (-0.5 * A_alpha.T @ b_alpha).reshape(-1, 1))

    return CertificateMatrices(phi, b0.done(), b1.done(), b2.done(), b3.done(), bp.done(),
                               A_alpha, b_alpha, A_delta, b_delta, float(c), float(c1), float(c2))


# -- eigenvalues --------------------------------------------------------------

def jacobi_eigh(M, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    (columns).
    """
    A = np.array(M, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    if n < 2:
        return np.diag(A).copy(), V
    scale = max(float(np.linalg.norm(A)), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(max(float(np.sum(A * A) - np.sum(np.diag(A) ** 2)), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-100 * abs(diff):
                    t = apq / diff  # tan of a negligible angle
                else:
                    tau = diff / (2.0 * apq)
                    t = np.copysign(1.0, tau) / (abs(tau) + np.hypot(1.0, tau))
                cs = 1.0 / np.hypot(1.0, t)
                sn = t * cs
                # A <- J^T A J with J the (p, q) rotation
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = cs * ap - sn * aq
                A[:, q] = sn * ap + cs * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = cs * ap - sn * aq
                A[q, :] = sn * ap + cs * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = cs * vp - sn * vq
                V[:, q] = sn * vp + cs * vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def _check_symmetric(M, tol=1e-12) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size and np.max(np.abs(M - M.T)) > tol * max(1.0, float(np.max(np.abs(M)))):
        raise ValueError("matrix is not symmetric")
    return M


def psd_margin(M) -> float:
    """Smallest eigenvalue of a symmetric matrix; ``M`` is PSD iff it is >= -tol."""
    M = _check_symmetric(M)
    if M.size == 0:
        raise ValueError("empty matrix")
    return float(jacobi_eigh(0.5 * (M + M.T))[0][0])


# -- tau search ----------------------------------------------------------------

@dataclass
class CertificateReport:
    proposition: int
    tau: tuple
    margin: float
    feasible: bool
    evaluated: int


def certificate_matrix(mats: CertificateMatrices, which: int, tau) -> np.ndarray:
    t1, t2, t3 = (float(t) for t in tau)
    return t1 * mats.B1 + t2 * mats.B2 + t3 * mats.B3 - mats.lhs(which)


def certificate_search(mats: CertificateMatrices, which: int, tau_grid, tol: float = 1e-9,
                       confirm: bool = True) -> CertificateReport:
    """Grid search over ``tau in grid^3`` for the largest smallest eigenvalue.

    Feasible iff the best margin is ``>= -tol * max(1, |M|)``. Passing the
    grid is sufficient, failing it proves nothing.
    """
    grid = np.asarray(tau_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise CertificateError("empty tau grid")
    if not np.all(grid > 0):
        raise CertificateError("tau grid values must be positive")
    mats.lhs(which)
    best_tau, best = None, -np.inf
    for tau in itertools.product(grid, repeat=3):
        m = float(np.linalg.eigvalsh(certificate_matrix(mats, which, tau))[0])
        if m > best:
            best_tau, best = tau, m
    M = certificate_matrix(mats, which, best_tau)
    margin = psd_margin(M) if confirm else best
    scale = max(1.0, float(np.max(np.abs(M))))
    return CertificateReport(which, tuple(float(t) for t in best_tau), margin,
                             margin >= -tol * scale, grid.size ** 3)


def phi_from_solution(phi: PhiLayout, problem: MiqpProblem, solution: AllocationSolution, tasks,
                      states) -> np.ndarray:
    """``phi`` at the allocator's solution, with ``z = gamma1(h)`` per task."""
    assignment = assignment_from_alpha(solution.alpha, problem.robot_of)
    h, _ = task_barriers(tasks, states, assignment)
    z = np.array([t.gamma1(hj) for t, hj in zip(tasks, h)])
    lay = problem.layout
    return phi.stack(z, solution.x[:lay.n_u], solution.delta, solution.alpha_vector)


def certify_step(scenario, states: list[UavState], problem: MiqpProblem,
                 solution: AllocationSolution, which: int = PROPOSITION_2):
    """Certificate record for one simulation step (velocity-controlled UAVs use the
    second-order certificate)."""
    from .simulation import CertificateRecord

    p = scenario.params
    phi = PhiLayout.from_problem(problem)
    mats = assemble_certificate_matrices(states, problem, phi, scenario.tasks, scenario.modes,
                                         solution.alpha, p.k_v, p.c, p.c1, p.c2)
    rep = certificate_search(mats, which, p.tau_grid)
    return CertificateRecord(rep.proposition, rep.tau, rep.margin, rep.feasible)
