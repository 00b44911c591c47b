"""Planar convertible-UAV model with first-order velocity dynamics.

State is position ``x`` (2,) plus ``eta = [vx, vy, theta]`` with the velocity
expressed in the body frame. The generic input is ``[vx_ref, vy_ref, omega]``;
each mode keeps a subset of its columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DynamicsError(ValueError):
    pass


class IntegrationError(ArithmeticError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class UavState:
    x: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(2)
        eta = np.array(self.eta, dtype=float).reshape(3)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(eta))):
            raise DynamicsError("non-finite UAV state")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "eta", eta)

    @property
    def velocity(self) -> np.ndarray:
        return self.eta[:2]

    @property
    def theta(self) -> float:
        return float(self.eta[2])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.eta])

    @classmethod
    def from_vector(cls, z) -> "UavState":
        z = np.asarray(z, dtype=float)
        return cls(z[:2], z[2:5])


@dataclass(frozen=True)
class EnergyParams:
    """``eps(u) = (u - u_eff)^T diag(weights) (u - u_eff)``."""

    weights: np.ndarray
    u_eff: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        ue = np.array(self.u_eff, dtype=float).reshape(-1)
        if w.shape != ue.shape:
            raise DynamicsError("energy weights and efficient input differ in size")
        if np.any(w < 0):
            raise DynamicsError("energy weights must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "u_eff", ue)


# generic input columns: 0 = vx_ref, 1 = vy_ref, 2 = omega
CRUISE_COLUMNS = (0, 2)
HOVERING_COLUMNS = (0, 1)


@dataclass(frozen=True)
class ModeSpec:
    name: str
    g_columns: tuple[int, ...]
    energy: EnergyParams = field(default=None)

    def __post_init__(self):
        cols = tuple(int(c) for c in self.g_columns)
        if not cols or len(set(cols)) != len(cols) or any(c not in (0, 1, 2) for c in cols):
            raise DynamicsError(f"invalid input columns {cols} for mode {self.name!r}")
        object.__setattr__(self, "g_columns", cols)
        if self.energy is None:
            object.__setattr__(self, "energy",
                               EnergyParams(np.ones(len(cols)), np.zeros(len(cols))))
        elif self.energy.weights.size != len(cols):
            raise DynamicsError(f"energy size mismatch for mode {self.name!r}")

    @property
    def input_dim(self) -> int:
        return len(self.g_columns)


def cruise_mode(v_eff: float = 2.0, name: str = "cruise", weights=(1.0, 1.0)) -> ModeSpec:
    return ModeSpec(name, CRUISE_COLUMNS, EnergyParams(weights, (v_eff, 0.0)))


def hovering_mode(name: str = "hovering", weights=(1.0, 1.0)) -> ModeSpec:
    return ModeSpec(name, HOVERING_COLUMNS, EnergyParams(weights, (0.0, 0.0)))


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_dot(theta: float) -> np.ndarray:
    """Derivative of :func:`rotation` with respect to theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c], [c, -s]])


def position_rate(eta) -> np.ndarray:
    """World-frame velocity ``R(theta) [vx, vy]``."""
    eta = np.asarray(eta, dtype=float)
    return rotation(eta[2]) @ eta[:2]


def drift(eta, k_v: float) -> np.ndarray:
    """Viscous term of the velocity dynamics."""
    eta = np.asarray(eta, dtype=float)
    return np.array([-k_v * eta[0], -k_v * eta[1], 0.0])


def generic_input_matrix(k_v: float) -> np.ndarray:
    return np.diag([k_v, k_v, 1.0])


def input_matrix(mode: ModeSpec, k_v: float) -> np.ndarray:
    """Columns of the generic input matrix kept by ``mode`` (3 x n_u)."""
    return generic_input_matrix(k_v)[:, list(mode.g_columns)]


def uav_derivative(state: UavState, mode: ModeSpec | None, u, k_v: float):
    """Return ``(x_dot, eta_dot)``. ``mode=None`` means zero input."""
    if mode is None:
        g_u = np.zeros(3)
    else:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != mode.input_dim:
            raise DynamicsError(f"mode {mode.name!r} expects {mode.input_dim} inputs, got {u.size}")
        g_u = input_matrix(mode, k_v) @ u
    return position_rate(state.eta), drift(state.eta, k_v) + g_u


def uav_vector_field(mode: ModeSpec | None, u, k_v: float) -> Callable[[np.ndarray], np.ndarray]:
    """Closed vector field on the stacked 5-vector for a held input."""
    if mode is None:
        g_u = np.zeros(3)
    else:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != mode.input_dim:
            raise DynamicsError(f"mode {mode.name!r} expects {mode.input_dim} inputs, got {u.size}")
        g_u = input_matrix(mode, k_v) @ u

    def field_(z):
        c, s = np.cos(z[4]), np.sin(z[4])
        return np.array([c * z[2] - s * z[3], s * z[2] + c * z[3],
                         -k_v * z[2] + g_u[0], -k_v * z[3] + g_u[1], g_u[2]])

    return field_


def energy_cost(mode: ModeSpec, u) -> tuple[float, tuple[np.ndarray, np.ndarray, float]]:
    """Energy of input ``u`` and its quadratic form ``(Q, c, const)``.

    The form satisfies ``eps(u) = 0.5 u^T Q u + c^T u + const``.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != mode.input_dim:
        raise DynamicsError(f"mode {mode.name!r} expects {mode.input_dim} inputs, got {u.size}")
    Q, c, const = energy_quadratic_form(mode)
    d = u - mode.energy.u_eff
    return float(d @ (mode.energy.weights * d)), (Q, c, const)


def energy_quadratic_form(mode: ModeSpec):
    w, ue = mode.energy.weights, mode.energy.u_eff
    return 2.0 * np.diag(w), -2.0 * w * ue, float(ue @ (w * ue))


def rk4_step(fun: Callable[[np.ndarray], np.ndarray], state, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of an autonomous field."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = np.asarray(state, dtype=float)
    k1 = np.asarray(fun(y), dtype=float)
    k2 = np.asarray(fun(y + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(fun(y + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(fun(y + dt * k3), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise IntegrationError("non-finite derivative", y)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
