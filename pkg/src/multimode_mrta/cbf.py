"""Barrier functions for position tasks and the linear rows they induce.

Every row has the form ``a @ u >= b - delta`` in the input of one mode and one
slack variable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ModeSpec, UavState, drift, input_matrix, rotation, rotation_dot


class HighRelativeDegreeError(ValueError):
    """The input does not appear in the first derivative of the barrier."""


@dataclass(frozen=True)
class LinearClassK:
    """``gamma(h) = slope * h``."""

    slope: float

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"class-K slope must be positive, got {self.slope}")

    def __call__(self, h):
        return self.slope * h

    def derivative(self, h=None) -> float:
        return self.slope


@dataclass(frozen=True)
class TaskSpec:
    id: str
    target: np.ndarray
    gamma1: LinearClassK = LinearClassK(5.0)
    gamma2: LinearClassK = LinearClassK(1.0)
    n_min: int = 1
    n_max: int = 1

    def __post_init__(self):
        object.__setattr__(self, "target", np.array(self.target, dtype=float).reshape(2))
        if isinstance(self.gamma1, (int, float)):
            object.__setattr__(self, "gamma1", LinearClassK(float(self.gamma1)))
        if isinstance(self.gamma2, (int, float)):
            object.__setattr__(self, "gamma2", LinearClassK(float(self.gamma2)))
        if not 0 <= self.n_min <= self.n_max:
            raise ValueError(f"task {self.id!r}: need 0 <= n_min <= n_max")


@dataclass(frozen=True)
class CbfRow:
    """``a @ u >= b - delta[slack_index]``.

    ``gamma_weight * gamma_value`` is the part of ``-b`` contributed by the
    class-K term of the barrier; the certificate assembly uses it to couple
    the row with the barrier block of the stacked vector.
    """

    a: np.ndarray
    b: float
    slack_index: int | None = None
    gamma_weight: float = 1.0
    gamma_value: float = 0.0

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(a)) and np.isfinite(self.b)):
            raise ValueError("non-finite CBF row")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def residual(self, u, delta: float = 0.0) -> float:
        """Non-negative iff the row holds."""
        return float(self.a @ np.asarray(u, dtype=float) - self.b + delta)


def task_h(task: TaskSpec, x):
    """``h = -||x - p||^2`` and its gradient."""
    e = np.asarray(x, dtype=float) - task.target
    return -float(e @ e), -2.0 * e


def kinematic_row(h: float, grad_h, f, g, gamma, slack_index=None, atol=1e-12) -> CbfRow:
    grad_h = np.asarray(grad_h, dtype=float).reshape(-1)
    lf = float(grad_h @ np.asarray(f, dtype=float).reshape(-1))
    lg = grad_h @ np.asarray(g, dtype=float).reshape(grad_h.size, -1)
    if np.all(np.abs(lg) <= atol) and np.any(grad_h != 0):
        raise HighRelativeDegreeError(
            "L_g h vanishes: the input does not act on this barrier; use high_rel_degree_row")
    gv = float(gamma(h))
    return CbfRow(lg, -gv - lf, slack_index, 1.0, gv)


def lie_terms(task: TaskSpec, state: UavState):
    """Quantities shared by h' and its row.

    Returns ``(h, dh_dx, L, dL_dx, dL_deta)`` where ``L = dh/dx f(eta)``.
    """
    e = state.x - task.target
    v = state.velocity
    R = rotation(state.theta)
    Rv = R @ v
    h = -float(e @ e)
    L = -2.0 * float(e @ Rv)
    dL_dx = -2.0 * Rv
    dL_deta = np.array([-2.0 * e @ R[:, 0], -2.0 * e @ R[:, 1],
                        -2.0 * e @ (rotation_dot(state.theta) @ v)])
    return h, -2.0 * e, L, dL_dx, dL_deta


def integral_h_prime(task: TaskSpec, state: UavState, gamma1=None):
    """Second barrier ``h' = dh/dx f(eta) + gamma1(h)`` with partials in x and eta."""
    gamma1 = task.gamma1 if gamma1 is None else gamma1
    h, dh_dx, L, dL_dx, dL_deta = lie_terms(task, state)
    hp = L + float(gamma1(h))
    return hp, dL_dx + gamma1.derivative(h) * dh_dx, dL_deta


def high_rel_degree_row(task: TaskSpec, state: UavState, mode: ModeSpec, k_v: float,
                        gamma1=None, gamma2=None, slack_index=None) -> CbfRow:
    """Row enforcing ``d/dt h' + gamma2(h') >= -delta`` for one mode."""
    gamma1 = task.gamma1 if gamma1 is None else gamma1
    gamma2 = task.gamma2 if gamma2 is None else gamma2
    h, _, L, dL_dx, dL_deta = lie_terms(task, state)
    f = rotation(state.theta) @ state.velocity
    hp = L + float(gamma1(h))
    const = (float(dL_dx @ f) + float(dL_deta @ drift(state.eta, k_v))
             + gamma1.derivative(h) * L + float(gamma2(hp)))
    a = dL_deta @ input_matrix(mode, k_v)
    # gamma2 linear: gamma2(h') contributes slope2 * gamma1(h)
    return CbfRow(a, -const, slack_index, gamma2.derivative(hp), float(gamma1(h)))
