"""Dense primal active-set solver for small convex QPs.

Solves ``min 0.5 x^T H x + c^T x  s.t.  G x <= h`` with ``H`` positive
semidefinite. Zero-curvature directions are followed as rays until a
constraint blocks, so singular Hessians (free slacks, relaxed binaries) are
handled exactly. A feasible start comes from an auxiliary LP solved with the
same iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


@dataclass
class KKTResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass
class QPResult:
    status: str
    x: np.ndarray | None = None
    lam: np.ndarray | None = None
    obj: float = float("nan")
    active: tuple[int, ...] = ()
    iterations: int = 0
    kkt: KKTResiduals | None = None
    warm_hit: bool = field(default=False, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(H, c, G, h, x, lam) -> KKTResiduals:
    """Infinity-norm KKT residuals of ``(x, lam)``."""
    grad = H @ x + c
    if G.shape[0]:
        slack = h - G @ x
        stat = grad + G.T @ lam
        return KKTResiduals(
            float(np.max(np.abs(stat))) if stat.size else 0.0,
            float(max(0.0, -slack.min())),
            float(max(0.0, -lam.min())),
            float(np.max(np.abs(lam * slack))),
        )
    return KKTResiduals(float(np.max(np.abs(grad))) if grad.size else 0.0, 0.0, 0.0, 0.0)


def ruiz_scaling(H, G, sweeps=20):
    """Diagonal scalings ``(d, e)`` equilibrating ``[[H, G^T], [G, 0]]``."""
    n, m = H.shape[0], G.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = np.abs(H)
    K[n:, :n] = np.abs(G)
    K[:n, n:] = np.abs(G).T
    s = np.ones(n + m)
    for _ in range(sweeps):
        big = K.max(axis=1)
        f = np.where(big > 0, 1.0 / np.sqrt(np.where(big > 0, big, 1.0)), 1.0)
        K = f[:, None] * K * f
        s *= f
        if np.all(np.abs(big[big > 0] - 1.0) < 1e-3):
            break
    return s[:n], s[n:]


def _multipliers(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Least-squares ``A^T lam = -g`` with rows of ``A`` equilibrated first.

    Rows mixing big-M and 1/kappa coefficients make the plain solve lose
    several digits in the recovered multipliers."""
    d = np.abs(A).max(axis=1)
    d[d == 0] = 1.0
    As = (A / d[:, None]).T
    return np.linalg.lstsq(As, -g, rcond=None)[0] / d


def _snap(x, G, h, rows):
    """Copy of ``x`` placed exactly on the single-variable rows ``rows``."""
    x = x.copy()
    for i in rows:
        j = np.flatnonzero(G[i])[0]
        x[j] = h[i] / G[i, j]
    return x


def _factor(A: np.ndarray, n: int):
    """``(Y, R, Z)`` with ``A^T = Y R`` and ``Z`` spanning the null space of ``A``.

    Working sets are kept linearly independent, so plain QR suffices."""
    k = A.shape[0]
    if k == 0:
        return np.zeros((n, 0)), np.zeros((0, 0)), np.eye(n)
    q, r = np.linalg.qr(A.T, mode="complete")
    return q[:, :k], r[:k], q[:, k:]


class ActiveSetQP:
    """Reusable solver settings.

    Parameters
    ----------
    feas_tol : float
        Primal feasibility tolerance on ``G x - h``.
    dual_tol : float
        Multipliers whose product with their row norm exceeds ``-dual_tol`` are
        treated as non-negative.
    max_iter : int or None
        Iteration cap per phase; defaults to ``20 * (n + m) + 50``.
    """

    def __init__(self, feas_tol=1e-9, dual_tol=1e-10, max_iter=None):
        self.feas_tol = feas_tol
        self.dual_tol = dual_tol
        self.max_iter = max_iter

    # -- public -------------------------------------------------------------
    def solve(self, H, c, G=None, h=None, x0=None, working_set=None, scaling=None) -> QPResult:
        """Solve the QP; ``scaling=(d, e)`` reuses variable and row scalings
        (e.g. from :func:`ruiz_scaling` of a parent problem)."""
        H = np.asarray(H, dtype=float)
        n = H.shape[0]
        c = np.asarray(c, dtype=float).reshape(n)
        G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
        h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)

        x = None if x0 is None else np.array(x0, dtype=float).reshape(n)

        # work on an equilibrated copy; results are mapped back below
        d, e = ruiz_scaling(H, G) if scaling is None else scaling
        Hs, cs, Gs, hs = d[:, None] * H * d, d * c, e[:, None] * G * d, e * h
        res = self._solve_scaled(Hs, cs, Gs, hs, None if x is None else x / d, working_set)
        if not res.ok:
            if res.x is not None:
                res.x = d * res.x
            return res
        res.x = d * res.x
        res.lam = e * res.lam
        res.obj = float(0.5 * res.x @ H @ res.x + c @ res.x)
        res.kkt = kkt_residuals(H, c, G, h, res.x, res.lam)
        if res.active and res.kkt.worst > 1e-9:
            self._sharpen(H, c, G, h, res, d, e)
        return res

    @staticmethod
    def _sharpen(H, c, G, h, res: QPResult, d, e):
        """Round-off cleanup in original units, kept only if the residuals drop.

        Candidates: the mapped-back point, one Newton step on the active set
        (residual in original units, solved with the equilibrated system), and
        that step with variables put exactly on their active simple bounds, and
        the same with variables that sit within round-off of any simple bound,
        plus a pure primal projection onto the active rows."""
        W = list(res.active)
        n, k = H.shape[0], len(W)
        A = G[W]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = d[:, None] * H * d
        K[:n, n:] = (e[W][:, None] * A * d).T
        K[n:, :n] = K[:n, n:].T
        r = np.concatenate([-(H @ res.x + c) * d, (h[W] - A @ res.x) * e[W]])
        step = np.linalg.lstsq(K, r, rcond=1e-12)[0]
        newton = res.x + d * step[:n]
        bounds = [i for i in range(G.shape[0]) if np.count_nonzero(G[i]) == 1]
        snapped = _snap(newton, G, h, [i for i in W if i in bounds])
        # the Newton system is singular when the reduced Hessian is flat;
        # a minimum-norm move back onto the active rows still removes the slack
        As = e[W][:, None] * A * d
        onto = res.x + d * np.linalg.lstsq(As, (h[W] - A @ res.x) * e[W], rcond=None)[0]
        cands = [res.x, newton, snapped, onto]
        # variables left a few ulps off an inactive bound
        for x in (res.x, snapped):
            slack = h[bounds] - G[bounds] @ x
            near = [i for i, sl in zip(bounds, slack) if abs(sl) <= 1e-12 * (1.0 + abs(h[i]))]
            cands.append(_snap(x, G, h, near))
        fresh = np.zeros_like(res.lam)
        for cand in cands:
            fresh[W] = np.maximum(_multipliers(G[W], H @ cand + c), 0.0)
            for lam in (fresh, res.lam):
                kkt = kkt_residuals(H, c, G, h, cand, lam)
                if kkt.worst < res.kkt.worst:
                    res.x, res.lam, res.kkt = cand, lam.copy(), kkt
                    res.obj = float(0.5 * cand @ H @ cand + c @ cand)

    def _solve_scaled(self, H, c, G, h, x, working_set) -> QPResult:
        n = H.shape[0]
        if working_set is not None:
            res = self._try_working_set(H, c, G, h, list(working_set))
            if res is not None:
                return res
        x, W, it1, status = self._phase_one(G, h, np.zeros(n) if x is None else x)
        if status != OPTIMAL:
            return QPResult(status, iterations=it1)
        res = self._iterate(H, c, G, h, x, W)
        res.iterations += it1
        if res.ok:
            res = self._polish(H, c, G, h, res)
        return res

    # -- internals ----------------------------------------------------------
    def _finish(self, H, c, G, h, x, W, iterations, lam_w=None) -> QPResult:
        lam = np.zeros(G.shape[0])
        if W:
            cur = np.inf if lam_w is None else _stationarity(H, c, G[W], x, lam_w)
            if cur > 1e-12:
                ls = _multipliers(G[W], H @ x + c)
                if _stationarity(H, c, G[W], x, ls) < cur:
                    lam_w = ls
            lam[W] = np.maximum(lam_w, 0.0)
        obj = float(0.5 * x @ H @ x + c @ x)
        return QPResult(OPTIMAL, x, lam, obj, tuple(sorted(W)), iterations,
                        kkt_residuals(H, c, G, h, x, lam))

    def _solve_equality(self, H, c, A, b, x0=None):
        """Stationary point of the QP restricted to ``A x = b``.

        Solved as a correction from ``x0`` so that, on a flat manifold, the
        minimum-norm answer stays next to the starting point."""
        n, k = H.shape[0], A.shape[0]
        x0 = np.zeros(n) if x0 is None else x0
        K = np.zeros((n + k, n + k))
        K[:n, :n] = H
        K[:n, n:] = A.T
        K[n:, :n] = A
        rhs = np.concatenate([-(H @ x0 + c), b - A @ x0])
        tol = 1e-8 * (1.0 + np.max(np.abs(rhs)))
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if np.max(np.abs(K @ sol - rhs)) > tol:
            return None, None
        return x0 + sol[:n], sol[n:]

    def _accepts(self, H, c, G, h, x, lam_w, W) -> bool:
        if lam_w.size and _weighted(G[W], lam_w).min() < -self.dual_tol:
            return False
        if G.shape[0] and np.max(G @ x - h) > self.feas_tol * (1.0 + np.max(np.abs(h))):
            return False
        return True

    def _try_working_set(self, H, c, G, h, W):
        if any(i < 0 or i >= G.shape[0] for i in W):
            return None
        A = G[W]
        if W and np.linalg.matrix_rank(A) < len(W):
            return None
        x, nu = self._solve_equality(H, c, A, h[W])
        if x is None or not self._accepts(H, c, G, h, x, nu, W):
            return None
        res = self._finish(H, c, G, h, x, list(W), 0, nu)
        if res.kkt.worst > 1e-7:
            return None
        res.warm_hit = True
        return res

    def _polish(self, H, c, G, h, res: QPResult) -> QPResult:
        W = list(res.active)
        x, nu = self._solve_equality(H, c, G[W], h[W], res.x)
        if x is None or not self._accepts(H, c, G, h, x, nu, W):
            return res
        cand = self._finish(H, c, G, h, x, W, res.iterations, nu)
        if cand.kkt.worst <= res.kkt.worst and abs(cand.obj - res.obj) <= 1e-9 * (1 + abs(res.obj)):
            return cand
        return res

    def _phase_one(self, G, h, x):
        m, n = G.shape
        if m == 0:
            return x, [], 0, OPTIMAL
        viol = G @ x - h
        tol = self.feas_tol * (1.0 + np.abs(h))
        if np.all(viol <= tol):
            W = [i for i in np.flatnonzero(np.abs(viol) <= tol)]
            return x, _independent_subset(G, W), 0, OPTIMAL
        w = (viol > tol).astype(float)
        G1 = np.zeros((m + 1, n + 1))
        G1[:m, :n] = G
        G1[:m, n] = -w
        G1[m, n] = -1.0
        h1 = np.concatenate([h, [0.0]])
        c1 = np.zeros(n + 1)
        c1[n] = 1.0
        z = np.concatenate([x, [float(viol.max())]])
        res = self._iterate(np.zeros((n + 1, n + 1)), c1, G1, h1, z, [])
        if res.status != OPTIMAL:
            return x, [], res.iterations, res.status
        if res.x[n] > self.feas_tol * (1.0 + np.max(np.abs(h))):
            return x, [], res.iterations, INFEASIBLE
        x = res.x[:n]
        slack = h - G @ x
        W = [i for i in res.active if i < m and abs(slack[i]) <= tol[i]]
        return x, _independent_subset(G, W), res.iterations, OPTIMAL

    def _iterate(self, H, c, G, h, x, W) -> QPResult:
        m, n = G.shape
        W = list(W)
        max_iter = self.max_iter or 20 * (n + m) + 50
        row_norm = np.linalg.norm(G, axis=1)
        stalls = 0
        at_min = False  # x minimizes over the current working set
        fac = None  # QR of the working-set rows, refreshed when W changes
        for it in range(1, max_iter + 1):
            g = H @ x + c
            if fac is None:
                fac = _factor(G[W], n)
                # rows in the span of the working set only see rounding noise in G p
                free = np.linalg.norm(G @ fac[2], axis=1) > 1e-10 * row_norm
            Y, R, Z = fac
            p = np.zeros(n)
            ray = False
            if not at_min and Z.shape[1]:
                gr = Z.T @ g
                Hr = Z.T @ H @ Z
                evals, evecs = np.linalg.eigh(Hr)
                cutoff = 1e-12 * max(1.0, float(np.max(np.abs(evals))))
                flat = evals <= cutoff
                g_flat = evecs[:, flat].T @ gr if flat.any() else np.zeros(0)
                g_scale = 1.0 + float(np.max(np.abs(g)))
                if g_flat.size and np.max(np.abs(g_flat)) > 1e-11 * g_scale:
                    p = -Z @ (evecs[:, flat] @ g_flat)
                    ray = True
                else:
                    curved = ~flat
                    if curved.any():
                        coef = (evecs[:, curved].T @ gr) / evals[curved]
                        p = -Z @ (evecs[:, curved] @ coef)
            x_scale = 1.0 + float(np.max(np.abs(x)))
            if not ray and np.max(np.abs(p)) <= 1e-13 * x_scale:
                if not W:
                    return self._finish(H, c, G, h, x, W, it)
                A = G[W]
                try:
                    lam_w = np.linalg.solve(R, -(Y.T @ g))
                except np.linalg.LinAlgError:
                    lam_w = _multipliers(A, g)
                wl = _weighted(A, lam_w)
                if wl.min() >= -self.dual_tol:
                    return self._finish(H, c, G, h, x, W, it, lam_w)
                # Bland's rule after repeated degenerate steps
                drop = int(np.argmin(wl)) if stalls < 25 else int(np.flatnonzero(
                    wl < -self.dual_tol)[0])
                W.pop(drop)
                at_min = False
                fac = None
                continue
            # ratio test
            step = np.inf if ray else 1.0
            block = -1
            if m:
                Gp = G @ p
                inactive = np.ones(m, dtype=bool)
                inactive[W] = False
                inactive &= free
                cand = np.flatnonzero(inactive & (Gp > 1e-14 * (1.0 + np.abs(Gp).max())))
                if cand.size:
                    slack = np.maximum(h[cand] - G[cand] @ x, 0.0)
                    ratios = slack / Gp[cand]
                    k = int(np.argmin(ratios))
                    if ratios[k] < step:
                        step, block = float(ratios[k]), int(cand[k])
            if not np.isfinite(step):
                return QPResult(UNBOUNDED, x, iterations=it)
            stalls = stalls + 1 if step * np.max(np.abs(p)) <= 1e-14 * x_scale else 0
            x = x + step * p
            if block >= 0:
                W.append(block)
                fac = None
            at_min = block < 0
        return QPResult(MAX_ITER, x, iterations=max_iter)


def _weighted(A, lam_w) -> np.ndarray:
    """Multipliers times their row norms: each one's pull on stationarity."""
    return lam_w * np.abs(A).max(axis=1)


def _stationarity(H, c, A, x, lam_w) -> float:
    return float(np.max(np.abs(H @ x + c + A.T @ lam_w)))


def _independent_subset(G, W, tol=1e-10):
    """Greedy subset of rows ``W`` whose part outside the span of the earlier
    kept rows is not negligible (modified Gram-Schmidt)."""
    keep, basis = [], []
    for i in W:
        r = np.array(G[i], dtype=float)
        size = np.linalg.norm(r)
        for q in basis:
            r -= (q @ r) * q
        rest = np.linalg.norm(r)
        if rest > tol * size:
            keep.append(i)
            basis.append(r / rest)
    return keep


_DEFAULT = ActiveSetQP()


def solve_qp(H, c, G=None, h=None, x0=None, working_set=None) -> QPResult:
    """Solve a convex QP with default settings."""
    return _DEFAULT.solve(H, c, G, h, x0=x0, working_set=working_set)
