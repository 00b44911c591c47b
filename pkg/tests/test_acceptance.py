"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as the tests run and repeated in the terminal summary.
"""

import filecmp
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from instances import random_problem
from multimode_mrta.allocator import AllocationSolver, enumerate_exhaustive, solve_allocation
from multimode_mrta.cbf import TaskSpec, high_rel_degree_row, integral_h_prime, task_h
from multimode_mrta.convergence import (PhiLayout, assemble_certificate_matrices,
                                        assignment_from_alpha, jacobi_eigh, phi_from_solution,
                                        task_barriers)
from multimode_mrta.dynamics import (IntegrationError, UavState, cruise_mode, hovering_mode,
                                     rk4_step, rotation, uav_vector_field)
from multimode_mrta.encoding import SpecializationSet, build_mode_index
from multimode_mrta.qp import OPTIMAL
from multimode_mrta.scenario import load_bundled
from multimode_mrta.simulation import Simulator
from multimode_mrta.traceio import export_traces

KKT_TOL = 1e-7
MIQP_SEED = 20240917  # fixed before the first run
KKT_SEEN = {}  # criterion -> worst KKT residual over its subproblems


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


class RecordingSolver(AllocationSolver):
    """Keeps the worst KKT residual over every subproblem it solves."""

    worst_kkt = 0.0
    qp_count = 0

    def solve(self, problem, warm_alpha=None):
        sol = super().solve(problem, warm_alpha)
        self.worst_kkt = max(self.worst_kkt, sol.max_kkt)
        self.qp_count += len(self.last_stats.get("kkt", []))
        return sol


def timed_run(name):
    sc = load_bundled(name)
    solver = RecordingSolver()
    sim = Simulator(sc, solver)
    t0 = time.perf_counter()
    trace = sim.run()
    return sc, sim, trace, time.perf_counter() - t0


@pytest.fixture(scope="module")
def single_run():
    return timed_run("single_uav")


@pytest.fixture(scope="module")
def band_run():
    return timed_run("band_mud")


def final_distances(sc, trace):
    return [min(float(np.linalg.norm(s.x - t.target)) for s in trace.final_states)
            for t in sc.tasks]


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_single_uav_switches_modes(single_run):
    sc, sim, trace, elapsed = single_run
    KKT_SEEN[1] = sim.solver.worst_kkt
    modes = trace.modes(0)
    radius = sc.params.completion_radius
    dist = np.sqrt(np.maximum(-np.array([r.h[0] for r in trace.records]), 0.0))
    done = np.flatnonzero(dist <= radius)
    first_done = int(done[0]) if done.size else len(modes)
    hover = [k for k, m in enumerate(modes) if m == "hovering"]
    final = final_distances(sc, trace)[0]
    checks = {
        "complete": trace.complete,
        "cruise at t=0": modes[0] == "cruise",
        "hovering before completion": bool(hover) and hover[0] < first_done,
        "final distance <= 0.05": final <= 0.05,
        "runtime <= 30 s": elapsed <= 30.0,
    }
    switch = f"{trace.records[hover[0]].t:.2f}" if hover else "never"
    ok = report(1, all(checks.values()),
                f"switch to hovering at t={switch}, final distance {final:.4f} m, "
                f"{elapsed:.1f} s; failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


# -- 2 ------------------------------------------------------------------------------

def test_criterion_2_band_resilience(band_run):
    sc, sim, trace, elapsed = band_run
    KKT_SEEN[2] = sim.solver.worst_kkt
    region = sc.restrictions[0].region
    robot = next(i for i, r in enumerate(sc.robots) if [m.name for m in r.modes] == ["cruise"])
    idle = next(i for i in range(len(sc.robots)) if trace.records[0].robots[i].mode == "")
    times = trace.times()
    pos = trace.positions(robot)
    inside = [k for k in range(len(times)) if region.contains(pos[k])]
    k_enter = inside[0]
    t_enter = times[k_enter]
    # the task the cruise-only robot held just before entering
    cols = sim.idx.modes_of(robot)
    before = trace.records[k_enter - 1].alpha[:, cols].any(axis=1)
    orphan = int(np.flatnonzero(before)[0])
    speeds = trace.speeds(robot)
    slow = [times[k] for k in range(k_enter, len(times)) if speeds[k] < 0.05]
    idle_cols = sim.idx.modes_of(idle)
    acquired = [times[k] for k in range(len(times))
                if trace.records[k].alpha[orphan, idle_cols].any()]
    final = final_distances(sc, trace)
    t_slow = slow[0] if slow else np.inf
    t_acq = acquired[0] if acquired else np.inf
    checks = {
        "complete": trace.complete,
        "slows within 1 s of entry": t_slow - t_enter <= 1.0,
        "idle robot takes orphan within 1 s": abs(t_acq - t_enter) <= 1.0,
        "both tasks <= 0.05": max(final) <= 0.05,
        "runtime <= 60 s": elapsed <= 60.0,
    }
    ok = report(2, all(checks.values()),
                f"entry t={t_enter:.2f}, speed < 0.05 at t={t_slow:.2f}, "
                f"orphan acquired at t={t_acq:.2f}, final distances "
                f"{[round(d, 4) for d in final]}, {elapsed:.1f} s; "
                f"failed: {[k for k, v in checks.items() if not v]}")
    assert ok, checks


# -- 3 ------------------------------------------------------------------------------

def test_criterion_3_miqp_matches_enumeration():
    rng = np.random.default_rng(MIQP_SEED)
    worst_kkt, mismatches, infeasible = 0.0, [], 0
    t0 = time.perf_counter()
    for n in range(50):
        prob = random_problem(rng, max_pairs=12)
        assert prob.n_t * prob.n_vr <= 12
        bb = solve_allocation(prob)
        ex = enumerate_exhaustive(prob)
        worst_kkt = max(worst_kkt, bb.max_kkt, ex.max_kkt)
        if bb.status != ex.status:
            mismatches.append((n, "status"))
            continue
        if bb.status != OPTIMAL:
            infeasible += 1
            continue
        if abs(bb.cost - ex.cost) > 1e-6 * max(1.0, abs(ex.cost)):
            mismatches.append((n, "cost"))
        elif not np.array_equal(bb.alpha, ex.alpha):
            mismatches.append((n, "alpha"))
    elapsed = time.perf_counter() - t0
    KKT_SEEN[3] = worst_kkt
    ok = report(3, not mismatches and elapsed <= 60.0,
                f"50 instances ({infeasible} infeasible in both), mismatches {mismatches}, "
                f"{elapsed:.1f} s")
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_criterion_4_kkt_residuals(single_run, band_run):
    if len(KKT_SEEN) < 3:
        pytest.skip("needs criteria 1-3 in the same session")
    worst = max(KKT_SEEN.values())
    counts = single_run[1].solver.qp_count + band_run[1].solver.qp_count
    ok = report(4, worst <= KKT_TOL,
                f"worst KKT residual {worst:.2e} (per criterion "
                f"{ {k: float(f'{v:.2e}') for k, v in sorted(KKT_SEEN.items())} }), "
                f"{counts} simulation subproblems")
    assert ok


# -- 5 ------------------------------------------------------------------------------

def min_norm_input(row):
    aa = float(row.a @ row.a)
    return np.zeros_like(row.a) if row.b <= 0 or aa == 0 else row.a * row.b / aa


def run_invariance(task, state, mode, k_v, t_end=10.0, dt=0.01, floor=-1e-3):
    """Lowest h' under the tightest input meeting the row with zero slack, and the
    distance to the target just before h' first drops below ``floor``."""
    lo = integral_h_prime(task, state)[0]
    where = None
    for _ in range(int(round(t_end / dt))):
        dist = float(np.linalg.norm(state.x - task.target))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                u = min_norm_input(high_rel_degree_row(task, state, mode, k_v))
                z = rk4_step(uav_vector_field(mode, u, k_v), state.as_vector(), dt)
            state = UavState.from_vector(z)
        except (IntegrationError, ValueError):
            return -np.inf, dist if where is None else where
        hp = integral_h_prime(task, state)[0]
        if hp < floor and where is None:
            where = dist
        lo = min(lo, hp)
    return lo, where


def random_state_with_h_prime(rng, task, h_prime):
    """Random position and heading; velocity chosen so that h' takes the given value."""
    x = rng.uniform(-3, 3, 2) + task.target
    theta = rng.uniform(-np.pi, np.pi)
    h, grad = task_h(task, x)
    d = rotation(theta).T @ grad
    tangent = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    v = (h_prime - task.gamma1(h)) * d / (d @ d) + rng.uniform(-1, 1) * tangent
    return UavState(x, [*v, theta])


@pytest.mark.xfail(strict=True, reason="{h' >= 0} cannot be kept invariant from h' > 0 when "
                   "h = -|x - p|^2: h' >= h'(0) exp(-t) together with dh/dt = h' - 5h would "
                   "force h > 0, so the row turns infeasible at the target (a = 0)")
def test_criterion_5_forward_invariance():
    rng = np.random.default_rng(5)
    task = TaskSpec("t", [1.0, -0.5])
    k_v = 4.0
    runs = []
    for n in range(20):
        state = random_state_with_h_prime(rng, task, rng.uniform(0.0, 1.0))
        assert integral_h_prime(task, state)[0] >= 0.0
        mode = hovering_mode() if n % 2 == 0 else cruise_mode()
        runs.append(run_invariance(task, state, mode, k_v))
    held = sum(lo >= -1e-3 for lo, _ in runs)
    near = sum(w is not None and w <= 0.1 for _, w in runs)
    ok = report(5, held == 20, f"h' >= -1e-3 held from {held}/20 states "
                f"(lowest h' {min(lo for lo, _ in runs):.3g}); {near} of the violations start "
                f"within 0.1 m of the target, where the row degenerates; see the decisions ledger")
    assert ok


# -- 6 ------------------------------------------------------------------------------

def closed_form_eigs(M):
    if M.shape == (2, 2):
        a, b, d = M[0, 0], M[0, 1], M[1, 1]
        r = np.hypot((a - d) / 2, b)
        return np.array([(a + d) / 2 - r, (a + d) / 2 + r])
    q = np.trace(M) / 3
    p = np.sqrt((np.sum((np.diag(M) - q) ** 2)
                 + 2 * (M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2)) / 6)
    r = np.clip(np.linalg.det((M - q * np.eye(3)) / p) / 2, -1.0, 1.0)
    phi = np.arccos(r) / 3
    e1, e3 = q + 2 * p * np.cos(phi), q + 2 * p * np.cos(phi + 2 * np.pi / 3)
    return np.sort([e1, 3 * q - e1 - e3, e3])


def test_criterion_6_certificate_oracle():
    sc = load_bundled("band_mud")
    sim = Simulator(sc)
    rng = np.random.default_rng(66)
    c1, c2 = sc.params.c1, sc.params.c2
    worst, n_states = 0.0, 0
    while n_states < 20:
        states = [UavState(rng.uniform(-2, 6, 2), [*rng.uniform(-2, 2, 2), rng.uniform(-3, 3)])
                  for _ in sc.robots]
        prob = sim.build_problem(states)
        sol = sim.solver.solve(prob)
        if sol.status != OPTIMAL:
            continue
        n_states += 1
        phi = PhiLayout.from_problem(prob)
        mats = assemble_certificate_matrices(states, prob, phi, sc.tasks, sc.modes, sol.alpha,
                                             sc.params.k_v, sc.params.c, c1, c2)
        vec = phi_from_solution(phi, prob, sol, sc.tasks, states)
        asg = assignment_from_alpha(sol.alpha, prob.robot_of)

        def V(eps):
            moved = []
            for i, s in enumerate(states):
                v = next((v for pairs in asg for (r, v) in pairs if r == i), None)
                f = uav_vector_field(None if v is None else sc.modes[v],
                                     None if v is None else sol.u[v], sc.params.k_v)
                g = f if eps >= 0 else (lambda z, f=f: -f(z))
                moved.append(s if eps == 0 else
                             UavState.from_vector(rk4_step(g, s.as_vector(), abs(eps))))
            h, _ = task_barriers(sc.tasks, moved, asg)
            return float(h @ h)

        def derivs(e):
            return (V(e) - V(-e)) / (2 * e), (V(e) - 2 * V(0) + V(-e)) / e ** 2

        (d1, dd1), (d2, dd2) = derivs(2e-3), derivs(1e-3)
        Vd, Vdd = (4 * d2 - d1) / 3, (4 * dd2 - dd1) / 3
        expected = -Vdd - (c1 + c2) * Vd - c1 * c2 * V(0)
        worst = max(worst, abs(vec @ mats.B0_prime @ vec - expected) / max(1.0, abs(expected)))
    eig_err = 0.0
    for n in (2, 3):
        for _ in range(50):
            A = rng.normal(size=(n, n))
            M = A + A.T
            eig_err = max(eig_err, float(np.max(np.abs(jacobi_eigh(M)[0] - closed_form_eigs(M)))))
    ok = report(6, worst <= 1e-3 and eig_err <= 1e-10,
                f"Lyapunov oracle worst relative error {worst:.2e} over 20 states, "
                f"eigenvalue error {eig_err:.2e}")
    assert ok


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_encoding_properties():
    rng = np.random.default_rng(7)
    pi_ok = 0
    for _ in range(100):
        s = rng.integers(0, 2, int(rng.integers(1, 12)))
        S = np.diag(s.astype(float))
        oracle = np.diag(np.eye(len(s)) - S @ np.linalg.pinv(S))
        pi_ok += np.allclose(SpecializationSet.from_s(s).pi, oracle, rtol=0, atol=1e-12)
    mu_ok = 0
    for _ in range(100):
        counts = list(rng.integers(1, 5, int(rng.integers(1, 6))))
        idx = build_mode_index(counts)
        pairs = [(i, k) for i, m in enumerate(counts) for k in range(m)]
        bijective = (sorted(idx.forward.values()) == list(range(sum(counts)))
                     and all(idx.inverse[idx.forward[p]] == p for p in pairs))
        ordered = list(idx.pairs) == sorted(pairs) == pairs
        mu_ok += bijective and ordered
    ok = report(7, pi_ok == 100 and mu_ok == 100,
                f"penalty diagonal matched the pseudo-inverse in {pi_ok}/100, "
                f"mode index bijective and ordered in {mu_ok}/100")
    assert ok


# -- 8 ------------------------------------------------------------------------------

def test_criterion_8_deterministic_exports(tmp_path, single_run):
    sc, _, first, _ = single_run
    _, _, second, _ = timed_run("single_uav")
    a = export_traces(first, tmp_path / "a", sc.params.completion_radius)
    b = export_traces(second, tmp_path / "b", sc.params.completion_radius)
    same = [p.name for p, q in zip(a, b) if filecmp.cmp(p, q, shallow=False)]
    ok = report(8, len(same) == len(a) == len(b),
                f"{len(same)}/{len(a)} exported files byte-identical across two runs")
    assert ok
