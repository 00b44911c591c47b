import numpy as np
import pytest

from multimode_mrta.dynamics import UavState, energy_cost
from multimode_mrta.qp import OPTIMAL
from multimode_mrta.scenario import load_bundled, scenario_from_dict
from multimode_mrta.simulation import Simulator, run_simulation, simulation_step


def hover_scenario(position, target, velocity=(0.0, 0.0), **params):
    return scenario_from_dict({
        "schema_version": 1,
        "params": params,
        "features": ["prop"],
        "capabilities": ["fly"],
        "feature_capabilities": [["prop", "fly"]],
        "robots": [{"id": "r1", "position": list(position), "velocity": list(velocity),
                    "modes": [{"name": "hover", "kind": "hovering", "features": ["prop"]}]}],
        "tasks": [{"id": "t1", "target": list(target), "capabilities": ["fly"]}],
    })


def hand_derivative(z, kind, u, k_v):
    """Planar UAV with a first-order velocity loop, written out per mode."""
    x, y, vx, vy, th = z
    c, s = np.cos(th), np.sin(th)
    if kind == "hovering":
        acc = [k_v * (u[0] - vx), k_v * (u[1] - vy), 0.0]
    elif kind == "cruise":
        acc = [k_v * (u[0] - vx), -k_v * vy, u[1]]
    else:
        acc = [-k_v * vx, -k_v * vy, 0.0]
    return np.array([c * vx - s * vy, s * vx + c * vy, *acc])


def hand_rk4(z, kind, u, k_v, dt):
    f = lambda y: hand_derivative(y, kind, u, k_v)
    k1 = f(z)
    k2 = f(z + dt / 2 * k1)
    k3 = f(z + dt / 2 * k2)
    k4 = f(z + dt * k3)
    return z + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def test_rest_on_target_is_an_equilibrium():
    sc = hover_scenario([1.0, 2.0], [1.0, 2.0], t_end=0.5)
    sim = Simulator(sc)
    trace = sim.run()
    assert trace.complete
    final = trace.final_states[0]
    assert np.allclose(final.x, [1.0, 2.0], atol=1e-9)
    assert np.allclose(final.velocity, 0.0, atol=1e-9)


def test_one_step_matches_hand_rk4():
    sc = load_bundled("single_uav")
    sim = Simulator(sc)
    states = sim.initial_states()
    nxt, sol, rec = sim.step(states, 0.0)
    (v, u), = sim.applied_inputs(sol)
    kind = "cruise" if sim.mode_names[v] == "cruise" else "hovering"
    expected = hand_rk4(states[0].as_vector(), kind, u, sc.params.k_v, sc.params.dt)
    assert np.allclose(nxt[0].as_vector(), expected, rtol=0, atol=1e-12)
    assert rec.robots[0].mode == sim.mode_names[v]


def test_one_record_when_t_end_is_dt():
    sc = load_bundled("single_uav").with_params(t_end=0.01)
    trace = run_simulation(sc)
    assert len(trace.records) == 1 and trace.records[0].t == 0.0


def test_timestamps_are_dt_spaced():
    sc = load_bundled("single_uav").with_params(t_end=0.3, dt=0.02)
    trace = run_simulation(sc)
    assert len(trace.records) == 15
    assert np.allclose(np.diff(trace.times()), 0.02, rtol=0, atol=1e-12)


@pytest.fixture(scope="module")
def band_trace():
    sc = load_bundled("band_mud").with_params(t_end=1.5)
    sim = Simulator(sc)
    return sc, sim, sim.run()


def test_at_most_one_mode_per_robot(band_trace):
    sc, sim, trace = band_trace
    assert trace.complete
    for rec in trace.records:
        assert rec.status == OPTIMAL
        for i in range(len(sc.robots)):
            cols = sim.idx.modes_of(i)
            assert rec.alpha[:, cols].sum() <= 1


def test_energy_bookkeeping(band_trace):
    sc, sim, trace = band_trace
    for rec in trace.records[::10]:
        for i, r in enumerate(rec.robots):
            if r.mode == "":
                assert r.energy == 0.0 and r.u == ()
                continue
            mode = next(m for m in sc.robots[i].modes if m.name == r.mode)
            assert r.energy == pytest.approx(energy_cost(mode, r.u)[0], rel=1e-12, abs=1e-15)


def test_restricted_mode_loses_specialization():
    sc = load_bundled("band_mud")
    sim = Simulator(sc)
    states = sim.initial_states()
    inside = [UavState([s.x[0], 3.0], s.eta) for s in states]
    base = sim.build_problem(states).spec.s
    restricted = sim.build_problem(inside).spec.s
    for v, name in enumerate(sim.mode_names):
        if name == "cruise":
            assert not restricted[v].any()
        else:
            assert np.array_equal(restricted[v], base[v])
    # nothing inside the band gets a cruise allocation
    sol = sim.solver.solve(sim.build_problem(inside))
    for v, name in enumerate(sim.mode_names):
        if name == "cruise":
            assert not sol.alpha[:, v].any()


def test_simulation_step_helper():
    sc = load_bundled("single_uav")
    states = [r.initial for r in sc.robots]
    nxt, sol, rec = simulation_step(sc, states)
    again, _, _ = simulation_step(sc, states, previous=sol)
    # same allocation; the warm path may differ in the last bits
    assert np.allclose(nxt[0].as_vector(), again[0].as_vector(), rtol=0, atol=1e-12)
    assert rec.t == 0.0


def test_unassigned_robot_coasts_to_rest():
    # uav2 of the band scenario starts without a task
    sc = load_bundled("band_mud")
    sim = Simulator(sc)
    states = sim.initial_states()
    nxt, sol, rec = sim.step(states, 0.0)
    assert rec.robots[1].mode == ""
    expected = hand_rk4(states[1].as_vector(), None, None, sc.params.k_v, sc.params.dt)
    assert np.allclose(nxt[1].as_vector(), expected, rtol=0, atol=1e-12)
