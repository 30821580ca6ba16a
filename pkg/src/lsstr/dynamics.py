"""Scalar plant, least-squares estimator and certainty-equivalence loop.

Model and control law::

    y[t+1] = theta * y[t] + u[t] + w[t+1]
    u[t]   = -theta_hat[t] * y[t]

Estimator::

    r[t]           = r[t-1] + y[t]**2          (t >= 1, r[0] given)
    theta_hat[t+1] = theta_hat[t] + y[t] * (y[t+1] - u[t] - theta_hat[t] * y[t]) / r[t]

so in closed loop ``y[t+1] = theta_err[t] * y[t] + w[t+1]`` with
``theta_err = theta - theta_hat``.

Timing: the state at time ``t`` carries ``r[t]``, the covariance scalar the
estimator divides by when it absorbs ``y[t+1]``. ``r[0]`` is used as given;
every later step adds the newest squared output. Hence
``r[t] == r0 + sum(y[1..t]**2)`` along any run.

The small arithmetic helpers are ``register_jitable`` so the numba kernel in
:mod:`lsstr._kernel` runs literally the same operations as this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from numba.extending import register_jitable

from .numerics import neumaier_add

_neumaier_add = register_jitable(neumaier_add)


class NonFiniteError(ValueError):
    pass


@dataclass(frozen=True)
class PlantConfig:
    """True parameter, initial conditions and noise bound of one plant.

    ``r0`` defaults to ``y0**2`` (the plain least-squares start) and falls
    back to ``w_bound**2`` when ``y0 == 0``, since the recursion needs
    ``r0 > 0``.
    """

    theta: float
    theta0: float
    y0: float
    w_bound: float
    r0: float | None = None

    def __post_init__(self):
        for name in ("theta", "theta0", "y0", "w_bound"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise NonFiniteError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.w_bound <= 0:
            raise ValueError(f"w_bound must be > 0, got {self.w_bound!r}")
        r0 = self.r0
        if r0 is None:
            r0 = self.y0 * self.y0 if self.y0 != 0.0 else self.w_bound * self.w_bound
        r0 = float(r0)
        if not (math.isfinite(r0) and r0 > 0):
            raise ValueError(f"r0 must be finite and > 0, got {r0!r}")
        object.__setattr__(self, "r0", r0)

    @property
    def theta_err0(self) -> float:
        return self.theta - self.theta0


@dataclass(frozen=True)
class LoopState:
    """Closed-loop state at time ``t``.

    ``r`` is ``r[t]`` (see module docstring). The accumulators are stored as
    Neumaier pairs; read them through ``r``, ``sum_y2`` and ``sum_w2``.
    """

    t: int
    y: float
    theta_hat: float
    theta_err: float
    r_hi: float
    r_lo: float
    sum_y2_hi: float
    sum_y2_lo: float
    sum_w2_hi: float
    sum_w2_lo: float
    theta_err_runmax: float

    @property
    def r(self) -> float:
        return self.r_hi + self.r_lo

    @property
    def sum_y2(self) -> float:
        return self.sum_y2_hi + self.sum_y2_lo

    @property
    def sum_w2(self) -> float:
        return self.sum_w2_hi + self.sum_w2_lo

    @property
    def ratio(self) -> float:
        sw = self.sum_w2
        return self.sum_y2 / sw if sw > 0 else math.inf


@dataclass(frozen=True)
class TraceRecord:
    """One row of a trajectory; ``u`` is the control applied at ``t``."""

    t: int
    y: float
    u: float
    w: float
    theta_hat: float
    theta_err: float
    r: float
    sum_y2: float
    sum_w2: float
    ratio: float
    phase_tag: str
    stage: int


def initial_state(config: PlantConfig) -> LoopState:
    err = config.theta - config.theta0
    return LoopState(
        t=0,
        y=config.y0,
        theta_hat=config.theta0,
        theta_err=err,
        r_hi=config.r0,
        r_lo=0.0,
        sum_y2_hi=0.0,
        sum_y2_lo=0.0,
        sum_w2_hi=0.0,
        sum_w2_lo=0.0,
        theta_err_runmax=abs(err),
    )


@register_jitable
def sign_s(x):
    """-1 for negative ``x``, +1 otherwise (zero maps to +1)."""
    if not math.isfinite(x):
        raise NonFiniteError("sign_s: non-finite input")
    return -1.0 if x < 0 else 1.0


@register_jitable
def control_input(theta_hat, y):
    return -theta_hat * y


@register_jitable
def plant_step(theta, y, u, w_next):
    return theta * y + u + w_next


@register_jitable
def ls_gain_step(theta_hat, r, y, y_next, u):
    """Estimator update with an already-formed covariance scalar ``r``."""
    return theta_hat + y * (y_next - u - theta_hat * y) / r


def ls_update(theta_hat, r_prev, y_t, y_next, u_t):
    """One least-squares step: returns ``(theta_hat_next, r_t)``.

    ``r_t = r_prev + y_t**2`` is the closed form of the reciprocal
    recursion in :func:`reciprocal_update`.
    """
    if not r_prev > 0:
        raise ValueError(f"r_prev must be > 0, got {r_prev!r}")
    for v in (theta_hat, r_prev, y_t, y_next, u_t):
        if not math.isfinite(v):
            raise NonFiniteError("ls_update: non-finite input")
    r_t = r_prev + y_t * y_t
    return ls_gain_step(theta_hat, r_t, y_t, y_next, u_t), r_t


def reciprocal_update(inv_r_prev, y_t):
    """``1/r_t`` from ``1/r_{t-1}`` via the matrix-inversion-lemma form.

    ``1/r - y**2 / (r**2 + r y**2)`` equals ``(1/r) / (1 + y**2 / r)``; the
    second arrangement avoids cancellation when ``y**2`` dwarfs ``r``.
    """
    return inv_r_prev / (1.0 + y_t * y_t * inv_r_prev)


@register_jitable
def advance(theta, y, theta_hat, r_hi, r_lo, sy_hi, sy_lo, sw_hi, sw_lo, runmax, w_next):
    """Scalar core of :func:`closed_loop_step`; shared with the kernel."""
    u = control_input(theta_hat, y)
    y_next = plant_step(theta, y, u, w_next)
    theta_hat_next = ls_gain_step(theta_hat, r_hi + r_lo, y, y_next, u)
    err_next = theta - theta_hat_next
    y2 = y_next * y_next
    r_hi, r_lo = _neumaier_add(r_hi, r_lo, y2)
    sy_hi, sy_lo = _neumaier_add(sy_hi, sy_lo, y2)
    sw_hi, sw_lo = _neumaier_add(sw_hi, sw_lo, w_next * w_next)
    if abs(err_next) > runmax:
        runmax = abs(err_next)
    return (u, y_next, theta_hat_next, err_next, r_hi, r_lo,
            sy_hi, sy_lo, sw_hi, sw_lo, runmax)


def closed_loop_step(state: LoopState, config: PlantConfig, w_next: float) -> LoopState:
    """Apply control, plant and estimator for one step and return ``t + 1``."""
    if not math.isfinite(w_next):
        raise NonFiniteError(f"noise at t={state.t + 1} is not finite")
    (_, y_next, th_next, err_next, r_hi, r_lo,
     sy_hi, sy_lo, sw_hi, sw_lo, runmax) = advance(
        config.theta, state.y, state.theta_hat, state.r_hi, state.r_lo,
        state.sum_y2_hi, state.sum_y2_lo, state.sum_w2_hi, state.sum_w2_lo,
        state.theta_err_runmax, float(w_next))
    if not (math.isfinite(y_next) and math.isfinite(th_next)):
        raise NonFiniteError(f"state overflowed at t={state.t + 1}")
    return LoopState(state.t + 1, y_next, th_next, err_next, r_hi, r_lo,
                     sy_hi, sy_lo, sw_hi, sw_lo, runmax)


def inject_state(theta_err: float, y: float, r_prev: float, t: int = 1,
                 theta: float = 0.0) -> LoopState:
    """Loop state at time ``t`` with ``theta_err[t]``, ``y[t]`` and ``r[t-1]`` given.

    The running maximum starts at ``|theta_err|`` and the energy sums at zero;
    the state represents a hypothesis, not a reachable history.
    """
    if not r_prev > 0:
        raise ValueError("r_prev must be > 0")
    r_hi, r_lo = neumaier_add(float(r_prev), 0.0, y * y)
    theta_hat = theta - theta_err
    return LoopState(t, float(y), theta_hat, theta - theta_hat, r_hi, r_lo,
                     0.0, 0.0, 0.0, 0.0, abs(theta_err))


__all__ = [
    "PlantConfig", "LoopState", "TraceRecord", "NonFiniteError",
    "initial_state", "sign_s", "control_input", "plant_step", "ls_update",
    "ls_gain_step", "reciprocal_update", "closed_loop_step", "inject_state",
    "advance",
]
