"""Closed-loop driver: restrict, build rows, allocate, apply, integrate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocationSolution, AllocationSolver, MiqpProblem, assemble_miqp
from .cbf import high_rel_degree_row
from .dynamics import UavState, energy_cost, energy_quadratic_form, rk4_step, uav_vector_field
from .encoding import (ModeIndex, apply_region_restriction, build_mode_index, mapping_matrices,
                       specialization_and_penalty)
from .qp import OPTIMAL
from .scenario import Scenario

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    """Allocation failed during a step; ``record`` holds the diagnostic record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class RobotRecord:
    x: float
    y: float
    vx: float
    vy: float
    theta: float
    mode: str  # "" when unassigned
    energy: float
    u: tuple = ()


@dataclass
class CertificateRecord:
    proposition: int
    tau: tuple
    margin: float
    feasible: bool


@dataclass
class StepRecord:
    t: float
    robots: list
    h: list  # per task: -min_i ||x_i - p_j||^2
    alpha: np.ndarray  # n_t x n_vr
    delta: np.ndarray  # layout order
    status: str
    certificate: CertificateRecord | None = None

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        return (self.t == other.t and self.robots == other.robots and self.h == other.h
                and np.array_equal(self.alpha, other.alpha)
                and np.array_equal(self.delta, other.delta)
                and self.status == other.status and self.certificate == other.certificate)


@dataclass
class Trace:
    robot_ids: list
    mode_labels: list  # per virtual robot: (robot id, mode name)
    task_ids: list
    input_dims: list  # per robot, widest mode input
    records: list = field(default_factory=list)
    final_states: list | None = None
    complete: bool = True
    error: str = ""
    dt: float = 0.0

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (self.robot_ids == other.robot_ids and self.mode_labels == other.mode_labels
                and self.task_ids == other.task_ids and self.records == other.records)

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def positions(self, robot: int) -> np.ndarray:
        return np.array([[r.robots[robot].x, r.robots[robot].y] for r in self.records])

    def modes(self, robot: int) -> list:
        return [r.robots[robot].mode for r in self.records]

    def speeds(self, robot: int) -> np.ndarray:
        return np.array([np.hypot(r.robots[robot].vx, r.robots[robot].vy) for r in self.records])


class Simulator:
    """Holds the per-scenario encoding and the warm-started allocator."""

    def __init__(self, scenario: Scenario, solver: AllocationSolver | None = None):
        self.scenario = scenario
        self.idx: ModeIndex = build_mode_index(scenario.graph)
        self.maps = mapping_matrices(scenario.graph, self.idx)
        self.base_spec = specialization_and_penalty(self.maps)
        self.modes = scenario.modes
        self.mode_names = [m.name for m in self.modes]
        self.solver = solver or AllocationSolver()
        self.energy_forms = [energy_quadratic_form(m) for m in self.modes]

    def initial_states(self) -> list[UavState]:
        return [r.initial for r in self.scenario.robots]

    def build_problem(self, states) -> MiqpProblem:
        sc, p = self.scenario, self.scenario.params
        spec = apply_region_restriction(self.base_spec, sc.restrictions,
                                        [s.x for s in states], self.idx, self.mode_names)
        n_t = len(sc.tasks)
        rows = []
        for v, (i, _) in enumerate(self.idx.pairs):
            rows.append([high_rel_degree_row(task, states[i], self.modes[v], p.k_v,
                                             slack_index=v * n_t + j)
                         for j, task in enumerate(sc.tasks)])
        return assemble_miqp(self.idx, self.maps, spec, self.energy_forms, rows,
                             [t.n_min for t in sc.tasks], [t.n_max for t in sc.tasks],
                             p.allocation)

    def applied_inputs(self, solution: AllocationSolution):
        """Per robot: (virtual robot or None, input)."""
        out = []
        for i in range(len(self.scenario.robots)):
            chosen = None
            for v in self.idx.modes_of(i):
                if solution.alpha[:, v].any():
                    chosen = v
                    break
            out.append((chosen, None if chosen is None else solution.u[chosen]))
        return out

    def step(self, states, t: float, certify=None):
        """Advance one control period; returns ``(next_states, solution, record)``."""
        sc, p = self.scenario, self.scenario.params
        problem = self.build_problem(states)
        solution = self.solver.solve(problem)
        h = [-min(float(np.sum((s.x - task.target) ** 2)) for s in states) for task in sc.tasks]
        if solution.status != OPTIMAL:
            record = StepRecord(t, [self._robot_record(s, None, None) for s in states], h,
                                solution.alpha, solution.delta, solution.status)
            raise StepError(f"allocation {solution.status} at t={t:.4f}", record)
        applied = self.applied_inputs(solution)
        robots, nxt = [], []
        for s, (v, u) in zip(states, applied):
            mode = None if v is None else self.modes[v]
            robots.append(self._robot_record(s, mode, u))
            z = rk4_step(uav_vector_field(mode, u, p.k_v), s.as_vector(), p.dt)
            nxt.append(UavState.from_vector(z))
        cert = certify(states, problem, solution) if certify is not None else None
        record = StepRecord(t, robots, h, solution.alpha.copy(), solution.delta.copy(),
                            solution.status, cert)
        return nxt, solution, record

    @staticmethod
    def _robot_record(s: UavState, mode, u) -> RobotRecord:
        if mode is None:
            return RobotRecord(*map(float, s.x), *map(float, s.eta), "", 0.0, ())
        eps, _ = energy_cost(mode, u)
        return RobotRecord(*map(float, s.x), *map(float, s.eta), mode.name, eps,
                           tuple(float(a) for a in u))

    def new_trace(self) -> Trace:
        sc = self.scenario
        labels = [(sc.robots[i].id, self.mode_names[v]) for v, (i, _) in enumerate(self.idx.pairs)]
        dims = [max(m.input_dim for m in r.modes) for r in sc.robots]
        return Trace([r.id for r in sc.robots], labels, [t.id for t in sc.tasks], dims,
                     dt=sc.params.dt)

    def run(self, certify=None, cert_every: int | None = None, until: float | None = None) -> Trace:
        p = self.scenario.params
        trace = self.new_trace()
        states = self.initial_states()
        n_steps = p.n_steps if until is None else max(0, int(round(until / p.dt)))
        for k in range(n_steps):
            t = k * p.dt
            use_cert = certify if (certify is not None and cert_every and k % cert_every == 0) else None
            try:
                states, _, record = self.step(states, t, use_cert)
            except StepError as exc:
                log.error("%s", exc)
                if exc.record is not None:
                    trace.records.append(exc.record)
                trace.complete = False
                trace.error = str(exc)
                break
            trace.records.append(record)
        trace.final_states = states
        return trace


def simulation_step(scenario: Scenario, states, previous: AllocationSolution | None = None,
                    t: float = 0.0):
    """Single step with a fresh simulator, warm-started from ``previous``."""
    sim = Simulator(scenario)
    if previous is not None and previous.status == OPTIMAL:
        sim.solver.previous_alpha = previous.alpha_vector
    return sim.step(states, t)


def run_simulation(scenario: Scenario, check_certificates: bool = False) -> Trace:
    sim = Simulator(scenario)
    if not check_certificates:
        return sim.run()
    from .convergence import certify_step
    p = scenario.params
    every = max(1, int(round(1.0 / (p.cert_sample_hz * p.dt))))
    return sim.run(certify=lambda s, prob, sol: certify_step(scenario, s, prob, sol), cert_every=every)
