"""Mixed-integer QP for joint task and mode allocation.

Variable vector (layout order)::

    [u_0, ..., u_{n_vr-1},  delta (n_vr*n_t),  alpha (n_vr*n_t)]

where ``delta`` and ``alpha`` are stored virtual-robot-major, i.e. entry
``v * n_t + j`` belongs to (virtual robot v, task j). This matches the
per-robot stacking ``alpha_[i] = [alpha_{-,mu(i,1)}; ...; alpha_{-,mu(i,m_i)}]``.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cbf import CbfRow
from .encoding import MappingMatrices, ModeIndex, SpecializationSet
from .qp import INFEASIBLE, OPTIMAL, ActiveSetQP, QPResult, ruiz_scaling

NODE_LIMIT = "node_limit"
TIE_RTOL = 1e-9
INTEGRALITY_TOL = 1e-9


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class AllocationParams:
    l1: float = 1e6
    l2: float = 1e-4
    kappa: float = 1e4
    delta_max: float = 1e4

    def __post_init__(self):
        if not (self.l1 > 0 and self.l2 > 0):
            raise ValueError("l1 and l2 must be positive")
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")


@dataclass(frozen=True)
class Layout:
    n_t: int
    input_dims: tuple[int, ...]

    @property
    def n_vr(self) -> int:
        return len(self.input_dims)

    @property
    def u_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.input_dims)]).astype(int)

    @property
    def n_u(self) -> int:
        return int(sum(self.input_dims))

    @property
    def n_pairs(self) -> int:
        return self.n_vr * self.n_t

    @property
    def n_vars(self) -> int:
        return self.n_u + 2 * self.n_pairs

    def u_slice(self, v: int) -> slice:
        off = self.u_offsets
        return slice(int(off[v]), int(off[v + 1]))

    def delta_index(self, v: int, j: int) -> int:
        return self.n_u + v * self.n_t + j

    def alpha_index(self, v: int, j: int) -> int:
        return self.n_u + self.n_pairs + v * self.n_t + j

    @property
    def delta_slice(self) -> slice:
        return slice(self.n_u, self.n_u + self.n_pairs)

    @property
    def alpha_slice(self) -> slice:
        return slice(self.n_u + self.n_pairs, self.n_vars)


@dataclass
class PrioritizationRows:
    """Rows ``Theta delta + Phi alpha <= Psi`` over the full delta/alpha vectors."""

    Theta: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    kappa: float
    delta_max: float
    kinds: list = field(default_factory=list)  # ("mode"|"task", v, j, other)

    def __len__(self):
        return len(self.Psi)


def prioritization_rows(n_t: int, modes_of_robots: Sequence[int] | int, kappa: float,
                        delta_max: float, n_vr: int | None = None) -> PrioritizationRows:
    """Mode- and task-priority big-M rows.

    ``modes_of_robots`` is the list of mode counts per robot (or a single
    count for one robot). Rows are indexed over the whole stacked vectors.
    """
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    if not delta_max > 0:
        raise ValueError("delta_max must be positive")
    counts = [modes_of_robots] if isinstance(modes_of_robots, int) else list(modes_of_robots)
    total = sum(counts) if n_vr is None else n_vr
    n_pairs = total * n_t
    rows_t, rows_p, kinds = [], [], []
    base = 0
    for m in counts:
        vrs = list(range(base, base + m))
        for j in range(n_t):
            for k in vrs:
                for k2 in vrs:
                    if k2 != k:
                        rows_t.append([(k * n_t + j, 1.0), (k2 * n_t + j, -1.0 / kappa)])
                        rows_p.append(k * n_t + j)
                        kinds.append(("mode", k, j, k2))
        for j in range(n_t):
            for k in vrs:
                for j2 in range(n_t):
                    if j2 != j:
                        rows_t.append([(k * n_t + j, 1.0), (k * n_t + j2, -1.0 / kappa)])
                        rows_p.append(k * n_t + j)
                        kinds.append(("task", k, j, j2))
        base += m
    r = len(rows_t)
    Theta = np.zeros((r, n_pairs))
    Phi = np.zeros((r, n_pairs))
    for i, (entries, col) in enumerate(zip(rows_t, rows_p)):
        for cidx, val in entries:
            Theta[i, cidx] += val
        Phi[i, col] = delta_max
    return PrioritizationRows(Theta, Phi, np.full(r, float(delta_max)), kappa, delta_max, kinds)


@dataclass
class MiqpProblem:
    layout: Layout
    robot_of: np.ndarray  # robot index per virtual robot
    H: np.ndarray
    c: np.ndarray
    const: float
    G: np.ndarray
    h: np.ndarray
    blocks: dict  # block name -> slice of rows
    prioritization: PrioritizationRows
    cbf_rows: list  # [v][j] -> CbfRow
    maps: MappingMatrices
    spec: SpecializationSet
    n_min: np.ndarray
    n_max: np.ndarray
    params: AllocationParams
    _scaling: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_t(self) -> int:
        return self.layout.n_t

    @property
    def n_vr(self) -> int:
        return self.layout.n_vr

    @property
    def alpha_indices(self) -> np.ndarray:
        s = self.layout.alpha_slice
        return np.arange(s.start, s.stop)

    def rows(self, name: str):
        s = self.blocks[name]
        return self.G[s], self.h[s]

    def alpha_rows(self):
        """Rows of G restricted to alpha columns for the pure-alpha blocks."""
        names = ("alpha_sum", "requirement", "limits")
        G = np.vstack([self.G[self.blocks[n], self.layout.alpha_slice] for n in names])
        h = np.concatenate([self.h[self.blocks[n]] for n in names])
        return G, h

    def alpha_vector(self, alpha_matrix) -> np.ndarray:
        """Flatten an ``n_t x n_vr`` matrix into layout order."""
        return np.asarray(alpha_matrix).T.reshape(-1)

    def alpha_matrix(self, alpha_vec) -> np.ndarray:
        return np.asarray(alpha_vec).reshape(self.n_vr, self.n_t).T

    def alpha_feasible(self, alpha_vec, tol=1e-9) -> bool:
        A, b = self.alpha_rows()
        return bool(np.all(A @ np.asarray(alpha_vec, dtype=float) <= b + tol))

    @property
    def scaling(self):
        """Equilibration of the full program, shared by all subproblems."""
        if self._scaling is None:
            self._scaling = ruiz_scaling(self.H, self.G)
        return self._scaling

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.c @ x + self.const)


def assemble_miqp(idx: ModeIndex, maps: MappingMatrices, spec: SpecializationSet,
                  energy_forms: Sequence, cbf_rows: Sequence[Sequence[CbfRow]],
                  n_min: Sequence[int], n_max: Sequence[int],
                  params: AllocationParams = AllocationParams()) -> MiqpProblem:
    """Build the allocation program for one control step.

    ``energy_forms[v] = (Q, c, const)`` with ``eps(u) = 0.5 u^T Q u + c^T u + const``;
    ``cbf_rows[v][j]`` is the execution row of task j for virtual robot v.
    """
    n_vr = idx.n_vr
    n_t = maps.T.shape[0]
    if maps.F.shape[1] != n_vr:
        raise AssemblyError(f"F: expected {n_vr} columns, got {maps.F.shape[1]}")
    if maps.T.shape[1] != maps.F.shape[0]:
        raise AssemblyError("T: column count differs from F row count")
    if spec.s.shape != (n_vr, n_t):
        raise AssemblyError(f"specialization: expected shape {(n_vr, n_t)}, got {spec.s.shape}")
    if len(energy_forms) != n_vr:
        raise AssemblyError(f"energy: expected {n_vr} forms, got {len(energy_forms)}")
    if len(cbf_rows) != n_vr or any(len(r) != n_t for r in cbf_rows):
        raise AssemblyError(f"cbf: expected {n_vr} x {n_t} rows")
    if len(n_min) != n_t or len(n_max) != n_t:
        raise AssemblyError("limits: expected one (n_min, n_max) per task")

    dims = []
    for v, form in enumerate(energy_forms):
        Q = np.atleast_2d(np.asarray(form[0], dtype=float))
        if Q.shape[0] != Q.shape[1] or np.asarray(form[1]).size != Q.shape[0]:
            raise AssemblyError(f"energy: malformed quadratic form for virtual robot {v}")
        dims.append(Q.shape[0])
    layout = Layout(n_t, tuple(dims))
    n = layout.n_vars

    H = np.zeros((n, n))
    c = np.zeros(n)
    const = 0.0
    for v, (Q, cv, k0) in enumerate(energy_forms):
        sl = layout.u_slice(v)
        H[sl, sl] = Q
        c[sl] = np.asarray(cv, dtype=float).reshape(-1)
        const += float(k0)
        for j in range(n_t):
            di, ai = layout.delta_index(v, j), layout.alpha_index(v, j)
            H[di, di] = 2.0 * params.l2 * spec.s[v, j]
            H[ai, ai] = 2.0 * params.l1 * spec.pi[v, j]
    if np.min(np.linalg.eigvalsh(H)) < -1e-9 * max(1.0, np.abs(H).max()):
        raise AssemblyError("objective: Hessian is not positive semidefinite")

    blocks = {}
    G_parts, h_parts = [], []

    def add(name, G_blk, h_blk):
        start = sum(len(x) for x in h_parts)
        G_parts.append(np.asarray(G_blk, dtype=float).reshape(-1, n))
        h_parts.append(np.asarray(h_blk, dtype=float).reshape(-1))
        blocks[name] = slice(start, start + len(h_parts[-1]))

    Gc = np.zeros((layout.n_pairs, n))
    hc = np.zeros(layout.n_pairs)
    for v in range(n_vr):
        for j in range(n_t):
            row = cbf_rows[v][j]
            if row.a.size != dims[v]:
                raise AssemblyError(f"cbf: row ({v}, {j}) has {row.a.size} coefficients, "
                                    f"mode input has {dims[v]}")
            r = v * n_t + j
            Gc[r, layout.u_slice(v)] = -row.a
            Gc[r, layout.delta_index(v, j)] = -1.0
            hc[r] = -row.b
    add("cbf", Gc, hc)

    counts = [len(idx.modes_of(i)) for i in range(int(idx.robot_of.max()) + 1)] if n_vr else []
    prio = prioritization_rows(n_t, counts, params.kappa, params.delta_max, n_vr)
    Gp = np.zeros((len(prio), n))
    Gp[:, layout.delta_slice] = prio.Theta
    Gp[:, layout.alpha_slice] = prio.Phi
    add("prioritization", Gp, prio.Psi)

    Ga = np.zeros((len(counts), n))
    for i in range(len(counts)):
        for v in idx.modes_of(i):
            for j in range(n_t):
                Ga[i, layout.alpha_index(v, j)] = 1.0
    add("alpha_sum", Ga, np.ones(len(counts)))

    req_G, req_h = [], []
    for j in range(n_t):
        for ell in range(maps.F.shape[0]):
            if maps.T[j, ell]:
                row = np.zeros(n)
                for v in range(n_vr):
                    row[layout.alpha_index(v, j)] = -float(maps.F[ell, v])
                req_G.append(row)
                req_h.append(-1.0)
    add("requirement", np.array(req_G).reshape(-1, n), req_h)

    lim_G, lim_h = [], []
    for j in range(n_t):
        row = np.zeros(n)
        for v in range(n_vr):
            row[layout.alpha_index(v, j)] = 1.0
        lim_G += [row, -row]
        lim_h += [float(n_max[j]), -float(n_min[j])]
    add("limits", np.array(lim_G).reshape(-1, n), lim_h)

    eye = np.eye(n)
    dsl, asl = layout.delta_slice, layout.alpha_slice
    add("delta_box", np.vstack([eye[dsl], -eye[dsl]]), np.full(2 * layout.n_pairs, params.delta_max))
    add("alpha_box", np.vstack([eye[asl], -eye[asl]]),
        np.concatenate([np.ones(layout.n_pairs), np.zeros(layout.n_pairs)]))

    return MiqpProblem(layout, idx.robot_of, H, c, const, np.vstack(G_parts),
                       np.concatenate(h_parts), blocks, prio, [list(r) for r in cbf_rows],
                       maps, spec, np.asarray(n_min, dtype=int), np.asarray(n_max, dtype=int), params)


# -- subproblems -------------------------------------------------------------

@dataclass
class Subproblem:
    H: np.ndarray
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    const: float
    free: np.ndarray
    row_map: np.ndarray
    fixed_idx: np.ndarray
    fixed_val: np.ndarray
    infeasible: bool = False


def reduce_problem(problem: MiqpProblem, fixed: Mapping[int, float]) -> Subproblem:
    """Substitute fixed variables and drop rows left without free coefficients."""
    n = problem.layout.n_vars
    fixed_idx = np.array(sorted(fixed), dtype=int)
    fixed_val = np.array([float(fixed[i]) for i in fixed_idx])
    mask = np.ones(n, dtype=bool)
    mask[fixed_idx] = False
    free = np.flatnonzero(mask)
    H, c, G, h = problem.H, problem.c, problem.G, problem.h
    Hf = H[np.ix_(free, free)]
    cf = c[free] + H[np.ix_(free, fixed_idx)] @ fixed_val
    const = problem.const + float(c[fixed_idx] @ fixed_val
                                  + 0.5 * fixed_val @ H[np.ix_(fixed_idx, fixed_idx)] @ fixed_val)
    Gf = G[:, free]
    hf = h - G[:, fixed_idx] @ fixed_val
    live = np.any(Gf != 0.0, axis=1)
    dead_ok = np.all(hf[~live] >= -1e-9)
    rows = np.flatnonzero(live)
    return Subproblem(Hf, cf, Gf[rows], hf[rows], const, free, rows, fixed_idx, fixed_val,
                      infeasible=not dead_ok)


@dataclass
class SubResult:
    status: str
    x: np.ndarray | None = None  # full-length variable vector
    cost: float = float("inf")
    kkt: float = 0.0
    qp: QPResult | None = None


class _Cache:
    """Working sets and primal points remembered per fixing pattern."""

    def __init__(self):
        self.active: dict = {}
        self.points: dict = {}


def _repair(problem: MiqpProblem, x: np.ndarray) -> np.ndarray:
    """Raise slacks so a remembered point meets this step's barrier rows.

    Only the barrier rows change between control steps; a point that still
    violates other rows afterwards is left to the QP's phase one."""
    x = x.copy()
    lay = problem.layout
    for v in range(lay.n_vr):
        u = x[lay.u_slice(v)]
        for j in range(lay.n_t):
            row = problem.cbf_rows[v][j]
            k = lay.delta_index(v, j)
            x[k] = max(x[k], row.b - row.a @ u)
    return x


def _solve_sub(problem: MiqpProblem, fixed: Mapping[int, float], solver: ActiveSetQP,
               cache: _Cache | None, stats: dict) -> SubResult:
    sub = reduce_problem(problem, fixed)
    stats["qp_count"] = stats.get("qp_count", 0) + 1
    if sub.infeasible:
        return SubResult(INFEASIBLE)
    key = problem.layout, tuple(sub.fixed_idx.tolist()), tuple(sub.fixed_val.tolist())
    ws = x0 = None
    if cache is not None and key in cache.active:
        pos = {r: k for k, r in enumerate(sub.row_map.tolist())}
        rows = cache.active[key]
        if all(r in pos for r in rows):
            ws = [pos[r] for r in rows]
        x0 = _repair(problem, cache.points[key])[sub.free]
    d, e = problem.scaling
    res = solver.solve(sub.H, sub.c, sub.G, sub.h, x0=x0, working_set=ws,
                       scaling=(d[sub.free], e[sub.row_map]))
    if res.status != OPTIMAL:
        return SubResult(res.status, qp=res)
    x = np.zeros(problem.layout.n_vars)
    x[sub.free] = res.x
    x[sub.fixed_idx] = sub.fixed_val
    if cache is not None:
        cache.active[key] = [int(sub.row_map[i]) for i in res.active]
        cache.points[key] = x.copy()
    stats["max_kkt"] = max(stats.get("max_kkt", 0.0), res.kkt.worst)
    stats.setdefault("kkt", []).append(res.kkt)
    return SubResult(OPTIMAL, x, res.obj + sub.const, res.kkt.worst, res)


@dataclass
class AllocationSolution:
    alpha: np.ndarray  # n_t x n_vr, int
    u: list  # per virtual robot
    delta: np.ndarray  # layout order, length n_vr * n_t
    cost: float
    status: str
    x: np.ndarray | None = None
    nodes: int = 0
    qp_count: int = 0
    max_kkt: float = 0.0

    @property
    def alpha_vector(self) -> np.ndarray:
        return self.alpha.T.reshape(-1)


def _solution(problem, x, cost, status, stats, nodes=0) -> AllocationSolution:
    lay = problem.layout
    if x is None:
        return AllocationSolution(np.zeros((lay.n_t, lay.n_vr), dtype=int), [], np.zeros(0),
                                  float("inf"), status, None, nodes, stats.get("qp_count", 0),
                                  stats.get("max_kkt", 0.0))
    alpha = np.rint(x[lay.alpha_slice]).astype(int)
    return AllocationSolution(problem.alpha_matrix(alpha), [x[lay.u_slice(v)].copy() for v in range(lay.n_vr)],
                              x[lay.delta_slice].copy(), float(cost), status, x, nodes,
                              stats.get("qp_count", 0), stats.get("max_kkt", 0.0))


def solve_qp_fixed_alpha(problem: MiqpProblem, alpha, solver: ActiveSetQP | None = None,
                         cache: _Cache | None = None, stats: dict | None = None) -> SubResult:
    """Continuous subproblem in (u, delta) for a binary allocation.

    ``alpha`` may be an ``n_t x n_vr`` matrix or a flat layout-order vector.
    """
    alpha = np.asarray(alpha)
    if alpha.ndim == 2:
        alpha = problem.alpha_vector(alpha)
    alpha = alpha.reshape(-1)
    if alpha.size != problem.layout.n_pairs or not np.all((alpha == 0) | (alpha == 1)):
        raise ValueError("alpha must be a binary assignment of the problem's size")
    if not problem.alpha_feasible(alpha):
        return SubResult(INFEASIBLE)
    fixed = {int(i): float(a) for i, a in zip(problem.alpha_indices, alpha)}
    return _solve_sub(problem, fixed, solver or ActiveSetQP(), cache, {} if stats is None else stats)


def _tie_tol(cost: float) -> float:
    return TIE_RTOL * max(1.0, abs(cost))


def _better(cost, bits, inc_cost, inc_bits) -> bool:
    if inc_bits is None:
        return True
    tol = _tie_tol(inc_cost)
    if cost < inc_cost - tol:
        return True
    return cost <= inc_cost + tol and bits < inc_bits


def enumerate_exhaustive(problem: MiqpProblem, max_pairs: int = 12) -> AllocationSolution:
    """Try every binary allocation; the reference for branch and bound."""
    n_pairs = problem.layout.n_pairs
    if n_pairs > max_pairs:
        raise ValueError(f"exhaustive enumeration limited to {max_pairs} binaries, got {n_pairs}")
    A, b = problem.alpha_rows()
    solver = ActiveSetQP()
    stats: dict = {}
    best_cost, best_bits, best_x = float("inf"), None, None
    for bits in itertools.product((0, 1), repeat=n_pairs):
        vec = np.array(bits, dtype=float)
        if np.any(A @ vec > b + 1e-9):
            continue
        res = solve_qp_fixed_alpha(problem, vec.astype(int), solver, None, stats)
        if res.status != OPTIMAL:
            continue
        if _better(res.cost, bits, best_cost, best_bits):
            best_cost, best_bits, best_x = res.cost, bits, res.x
    if best_bits is None:
        return _solution(problem, None, float("inf"), INFEASIBLE, stats)
    return _solution(problem, best_x, best_cost, OPTIMAL, stats)


def _may_hold_smaller(fixed: Mapping[int, float], order: np.ndarray, inc_bits) -> bool:
    """Whether some completion of ``fixed`` is lexicographically below ``inc_bits``."""
    for pos, var in enumerate(order):
        b = inc_bits[pos]
        if var in fixed:
            f = int(round(fixed[var]))
            if f < b:
                return True
            if f > b:
                return False
        elif b == 1:
            return True
    return False


class AllocationSolver:
    """Branch and bound over the binary allocation with warm starts.

    Holds working sets of previously solved nodes and the previous
    allocation; :meth:`solve` seeds its incumbent with that allocation.
    """

    def __init__(self, node_limit: int = 20000, qp: ActiveSetQP | None = None, warm: bool = True):
        self.node_limit = node_limit
        self.qp = qp or ActiveSetQP()
        self.warm = warm
        self._cache = _Cache() if warm else None
        self.previous_alpha = None
        self.last_stats: dict = {}

    def reset(self):
        self._cache = _Cache() if self.warm else None
        self.previous_alpha = None

    def solve(self, problem: MiqpProblem, warm_alpha=None) -> AllocationSolution:
        order = problem.alpha_indices
        stats: dict = {}
        self.last_stats = stats
        inc_cost, inc_bits, inc_x = float("inf"), None, None

        seed = warm_alpha if warm_alpha is not None else self.previous_alpha
        if seed is not None:
            seed = np.asarray(seed)
            if seed.ndim == 2:
                seed = problem.alpha_vector(seed)
            if seed.size == problem.layout.n_pairs and problem.alpha_feasible(seed):
                res = solve_qp_fixed_alpha(problem, seed.astype(int), self.qp, self._cache, stats)
                if res.status == OPTIMAL:
                    inc_cost, inc_bits, inc_x = res.cost, tuple(int(b) for b in seed), res.x

        def prunable(lb, fixed):
            if inc_bits is None:
                return False
            tol = _tie_tol(inc_cost)
            if lb > inc_cost + tol:
                return True
            if lb >= inc_cost - tol:
                return not _may_hold_smaller(fixed, order, inc_bits)
            return False

        counter = itertools.count()
        heap = [(-np.inf, next(counter), {})]
        nodes = 0
        status = OPTIMAL
        while heap:
            lb, _, fixed = heapq.heappop(heap)
            if prunable(lb, fixed):
                continue
            if nodes >= self.node_limit:
                status = NODE_LIMIT
                break
            nodes += 1
            res = _solve_sub(problem, fixed, self.qp, self._cache, stats)
            if res.status != OPTIMAL:
                continue
            if prunable(res.cost, fixed):
                continue
            avals = res.x[order]
            free = [p for p, var in enumerate(order) if var not in fixed]
            frac = [p for p in free
                    if INTEGRALITY_TOL < avals[p] < 1.0 - INTEGRALITY_TOL]
            if not frac:
                bits = tuple(int(round(a)) for a in avals)
                if _better(res.cost, bits, inc_cost, inc_bits):
                    inc_cost, inc_bits = res.cost, bits
                    x = res.x.copy()
                    x[order] = np.array(bits, dtype=float)
                    inc_x = x
                # children that may hold an equal-cost, lexicographically smaller allocation
                ones = [p for p in free if bits[p] == 1]
                prefix = dict(fixed)
                for p in ones:
                    child = dict(prefix)
                    child[int(order[p])] = 0.0
                    heapq.heappush(heap, (res.cost, next(counter), child))
                    prefix[int(order[p])] = 1.0
                continue
            p = min(frac, key=lambda q: (abs(avals[q] - 0.5), q))
            var = int(order[p])
            for val in (0.0, 1.0):
                child = dict(fixed)
                child[var] = val
                heapq.heappush(heap, (res.cost, next(counter), child))

        stats["nodes"] = nodes
        if inc_bits is None:
            return _solution(problem, None, float("inf"),
                             NODE_LIMIT if status == NODE_LIMIT else INFEASIBLE, stats, nodes)
        self.previous_alpha = np.array(inc_bits, dtype=int)
        return _solution(problem, inc_x, inc_cost, status, stats, nodes)


def solve_allocation(problem: MiqpProblem, warm_alpha=None, node_limit: int = 20000) -> AllocationSolution:
    """Globally optimal allocation by branch and bound (no state kept between calls)."""
    return AllocationSolver(node_limit=node_limit, warm=False).solve(problem, warm_alpha)
