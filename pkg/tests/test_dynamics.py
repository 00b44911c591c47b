import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multimode_mrta.dynamics import (DynamicsError, EnergyParams, IntegrationError, UavState,
                                     cruise_mode, energy_cost, hovering_mode, rk4_step,
                                     uav_derivative, uav_vector_field)

K_V = 4.0
finite = st.floats(-10, 10, allow_nan=False)


def test_hovering_equilibrium_at_reference():
    xd, ed = uav_derivative(UavState([0, 0], [1, 0, 0]), hovering_mode(), [1, 0], K_V)
    assert np.allclose(xd, [1, 0]) and np.allclose(ed, [0, 0, 0])


def test_rotation_quarter_turn():
    xd, _ = uav_derivative(UavState([0, 0], [1, 0, np.pi / 2]), None, None, K_V)
    assert np.allclose(xd, [0, 1], atol=1e-15)


def test_cruise_input_by_hand():
    _, ed = uav_derivative(UavState([0, 0], [0, 0, 0]), cruise_mode(), [2, 0.5], K_V)
    assert np.allclose(ed, [8, 0, 0.5])


def test_input_dimension_checked():
    with pytest.raises(DynamicsError):
        uav_derivative(UavState([0, 0], [0, 0, 0]), cruise_mode(), [1, 2, 3], K_V)


def test_state_must_be_finite():
    with pytest.raises(ValueError):
        UavState([np.nan, 0], [0, 0, 0])


def test_mode_columns():
    assert cruise_mode().input_dim == 2 and hovering_mode().input_dim == 2
    # cruise drives forward speed and yaw rate, hovering the planar velocity
    _, ed = uav_derivative(UavState([0, 0], [0, 0, 0]), hovering_mode(), [1, 1], K_V)
    assert np.allclose(ed, [K_V, K_V, 0])


@pytest.mark.parametrize("mode, u, eps", [
    (cruise_mode(2.0), [2, 0], 0.0),
    (hovering_mode(), [2, 0], 4.0),
    (cruise_mode(2.0), [3, 1], 2.0),
])
def test_energy_values(mode, u, eps):
    val, (Q, c, k) = energy_cost(mode, u)
    u = np.asarray(u, float)
    assert val == pytest.approx(eps, abs=1e-14)
    assert 0.5 * u @ Q @ u + c @ u + k == pytest.approx(eps, abs=1e-12)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        EnergyParams([1.0, -1.0], [0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.tuples(finite, finite), st.tuples(st.floats(0, 5), st.floats(0, 5)), st.booleans())
def test_quadratic_form_matches_direct(u, w, cruise):
    mode = cruise_mode(2.0, weights=w) if cruise else hovering_mode(weights=w)
    val, (Q, c, k) = energy_cost(mode, u)
    u = np.asarray(u)
    direct = float(np.sum(np.asarray(w) * (u - mode.energy.u_eff) ** 2))
    assert val >= 0
    assert val == pytest.approx(direct, rel=1e-12, abs=1e-12)
    assert 0.5 * u @ Q @ u + c @ u + k == pytest.approx(direct, rel=1e-12, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(finite, finite, st.floats(-50, 50))
def test_speed_preserved_by_rotation(vx, vy, th):
    xd, _ = uav_derivative(UavState([0, 0], [vx, vy, th]), None, None, K_V)
    assert np.hypot(*xd) == pytest.approx(np.hypot(vx, vy), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("mode, u, ref", [
    (hovering_mode(), [1.5, -0.5], [1.5, -0.5]),
    (cruise_mode(), [2.0, 0.3], [2.0, 0.0]),
])
def test_velocity_tracks_reference(mode, u, ref):
    z = UavState([0, 0], [-1.0, 1.0, 0.2]).as_vector()
    err0 = np.linalg.norm(z[2:4] - ref)
    f = uav_vector_field(mode, u, K_V)
    for _ in range(int(round(5 / K_V / 0.01))):
        z = rk4_step(f, z, 0.01)
    assert np.linalg.norm(z[2:4] - ref) <= 0.01 * err0


def test_rk4_zero_field():
    z = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(rk4_step(lambda y: np.zeros(3), z, 0.01), z)


def test_rk4_constant_field():
    z = np.array([1.0, -2.0])
    c = np.array([0.5, 3.0])
    assert np.allclose(rk4_step(lambda y: c, z, 0.01), z + 0.01 * c, rtol=0, atol=1e-15)


def test_rk4_exponential():
    assert rk4_step(lambda y: -y, np.array([1.0]), 0.01)[0] == pytest.approx(np.exp(-0.01), abs=1e-10)


def test_rk4_fourth_order():
    def err(dt):
        y = np.array([1.0])
        for _ in range(int(round(1.0 / dt))):
            y = rk4_step(lambda v: -v, y, dt)
        return abs(y[0] - np.exp(-1.0))
    ratio = err(0.1) / err(0.05)
    assert 14.0 < ratio < 18.0


def test_rk4_rejects_bad_step():
    with pytest.raises(ValueError):
        rk4_step(lambda y: y, np.zeros(1), 0.0)


def test_rk4_non_finite_carries_state():
    with pytest.raises(IntegrationError) as info:
        rk4_step(lambda y: np.array([np.inf]), np.array([2.0]), 0.01)
    assert np.array_equal(info.value.state, [2.0])


def test_state_roundtrip():
    s = UavState([1, 2], [3, 4, 5])
    assert UavState.from_vector(s.as_vector()).as_vector().tolist() == [1, 2, 3, 4, 5]
