"""Noise policies, including the staged omniscient adversary.

The staged adversary reads the true estimation error ``theta_err`` at every
step and alternates two regimes:

* push: ``w[t] = -theta_err[t-1] * y[t-1] + S(y[t-1]) * w / (2 sqrt(t))``, which
  pins ``y[t] = S(y[t-1]) * w / (2 sqrt(t))`` and drags ``theta_err`` down
  monotonically;
* silent: ``w[t] = 0`` while the loop settles and the output energy builds up.

Stage ``s`` opens at ``k_s`` (first time the entry condition holds, plus the
energy-ratio requirement for ``s >= 2``) and its push regime closes at
``j_s`` (first time ``|theta_err|`` reaches the stage target and exceeds every
earlier value).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba.extending import register_jitable

from .dynamics import LoopState, PlantConfig, sign_s


class NoiseBoundError(RuntimeError):
    """A policy tried to emit ``|w| > w_bound``."""

    def __init__(self, t, value, bound):
        super().__init__(f"noise {value!r} at t={t} exceeds bound {bound!r}")
        self.t = t
        self.value = value
        self.bound = bound


class PolicyError(RuntimeError):
    def __init__(self, t, msg):
        super().__init__(f"t={t}: {msg}")
        self.t = t


class Phase(enum.IntEnum):
    """Trace tags; a row's tag names the source of its noise value."""

    INIT = 0
    ZERO = 1
    SCRIPT = 2
    IID = 3
    BOOTSTRAP = 4
    AWAIT = 5
    PUSH = 6
    SILENT = 7

    @property
    def tag(self) -> str:
        return self.name.lower()

    @classmethod
    def from_tag(cls, tag: str) -> "Phase":
        return cls[tag.upper()]


# -- scalar conditions (also compiled into the kernel) ------------------------

@register_jitable
def bootstrap_noise(theta_err0, y0, w_bound):
    return sign_s(theta_err0 * y0) * w_bound


@register_jitable
def _entry_ok(t, y, theta_err, r, w_bound, k_min):
    # state is at index k-1 == t
    if t + 1 < k_min or t < 1:
        return False
    return (r >= w_bound * w_bound and abs(theta_err) <= 1.0
            and abs(y) <= w_bound / (2.0 * math.sqrt(t)))


@register_jitable
def push_noise(theta_err_prev, y_prev, t, w_bound):
    return -theta_err_prev * y_prev + sign_s(y_prev) * w_bound / (2.0 * math.sqrt(t))


@register_jitable
def _theta_target(s, stage_base, theta_floor, c_multiplier, theta_margin):
    return max(theta_floor, c_multiplier * s, stage_base + theta_margin)


@register_jitable
def _j_ok(theta_err, runmax_before, target):
    return abs(theta_err) >= max(runmax_before, target)


@register_jitable
def _k_next_ok(t, j_s, entry, sum_y2, sum_w2, ratio_target):
    return t + 1 >= j_s + 2 and entry and sum_y2 >= ratio_target * sum_w2


# -- configuration and state --------------------------------------------------

@dataclass(frozen=True)
class StagedConfig:
    """Thresholds of the staged construction.

    ``theta_target(s) = max(theta_floor, c_multiplier * s, base + theta_margin)``
    where ``base`` is the running max of ``|theta_err|`` when stage ``s``
    entered its push regime. ``ratio_target(s) = ratio_offset + ratio_scale * s``.
    The defaults are the literal constants of the construction (6, 126, s).
    """

    theta_floor: float = 6.0
    c_multiplier: float = 126.0
    theta_margin: float = 0.0
    ratio_scale: float = 1.0
    ratio_offset: float = 0.0
    k_min: int = 3

    def __post_init__(self):
        if self.c_multiplier < 0 or self.ratio_scale < 0:
            raise ValueError("schedules must be nondecreasing in s")
        if self.k_min < 2:
            raise ValueError("k_min must be >= 2")
        for name in ("theta_floor", "c_multiplier", "theta_margin",
                     "ratio_scale", "ratio_offset"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def theta_target(self, s: int, base: float = 0.0) -> float:
        return _theta_target(s, base, self.theta_floor, self.c_multiplier,
                             self.theta_margin)

    def ratio_target(self, s: int) -> float:
        return self.ratio_offset + self.ratio_scale * s


DEMO_SCHEDULE = StagedConfig(theta_floor=0.0, c_multiplier=0.0, theta_margin=0.05,
                             ratio_scale=0.0, ratio_offset=0.25)


@dataclass(frozen=True)
class AdversaryState:
    phase: Phase = Phase.BOOTSTRAP
    s: int = 1
    k_records: tuple = ()
    j_records: tuple = ()
    runmax_before: float = 0.0
    stage_base: float = 0.0

    @property
    def last_j(self) -> int:
        return self.j_records[-1][1]


# -- policies -----------------------------------------------------------------

class NoisePolicy:
    kind = "abstract"


@dataclass(frozen=True)
class ZeroNoise(NoisePolicy):
    kind = "zero"


@dataclass(frozen=True)
class ScriptedNoise(NoisePolicy):
    """Replays fixed values; ``values[0]`` is ``w[1]``."""

    values: tuple
    kind = "script"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def from_file(cls, path) -> "ScriptedNoise":
        vals = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                vals.append(float(line))
        return cls(tuple(vals))

    def to_file(self, path):
        Path(path).write_text("".join(f"{v!r}\n" for v in self.values))


@dataclass(frozen=True)
class IidBoundedNoise(NoisePolicy):
    """Uniform on ``[-w, w)`` from numpy's PCG64 seeded with ``seed``."""

    seed: int = 0
    kind = "iid"

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass(frozen=True)
class StagedNoise(NoisePolicy):
    config: StagedConfig = StagedConfig()
    kind = "staged"


# -- operations -----------------------------------------------------------------

def entry_condition(state: LoopState, w_bound: float, k_min: int = 3) -> bool:
    """Entry test for a push regime starting at ``k = state.t + 1``."""
    return _entry_ok(state.t, state.y, state.theta_err, state.r, w_bound, k_min)


def j_condition(state: LoopState, cfg: StagedConfig, s: int,
                runmax_before: float, base: float = 0.0) -> bool:
    """``|theta_err[t]|`` reaches the stage target and beats all earlier values."""
    return _j_ok(state.theta_err, runmax_before, cfg.theta_target(s, base))


def k_next_condition(state: LoopState, cfg: StagedConfig, s: int, j_s: int,
                     w_bound: float) -> bool:
    entry = entry_condition(state, w_bound, cfg.k_min)
    return _k_next_ok(state.t, j_s, entry, state.sum_y2, state.sum_w2,
                      cfg.ratio_target(s))


def staged_next_noise(adv: AdversaryState, state: LoopState, cfg: StagedConfig,
                      plant: PlantConfig):
    """Next noise value ``w[t+1]`` and the updated machine.

    The returned machine's ``phase`` is the regime that produced ``w[t+1]``,
    except at ``t == 0`` where the bootstrap value is emitted and the machine
    moves on to ``AWAIT``.
    """
    t = state.t
    wb = plant.w_bound
    runmax_before = adv.runmax_before
    adv = replace(adv, runmax_before=state.theta_err_runmax)
    phase = adv.phase
    if phase is Phase.BOOTSTRAP:
        if t != 0:
            phase = Phase.AWAIT
        else:
            w = bootstrap_noise(state.theta_err, state.y, wb)
            return _checked(w, t + 1, wb), replace(adv, phase=Phase.AWAIT)
    if phase is Phase.AWAIT:
        if entry_condition(state, wb, cfg.k_min):
            adv = replace(adv, phase=Phase.PUSH, stage_base=state.theta_err_runmax,
                          k_records=adv.k_records + ((adv.s, t + 1),))
            w = push_noise(state.theta_err, state.y, t + 1, wb)
        else:
            adv = replace(adv, phase=Phase.AWAIT)
            w = 0.0
    elif phase is Phase.PUSH:
        if j_condition(state, cfg, adv.s, runmax_before, adv.stage_base):
            adv = replace(adv, phase=Phase.SILENT, j_records=adv.j_records + ((adv.s, t),))
            w = 0.0
        else:
            w = push_noise(state.theta_err, state.y, t + 1, wb)
    else:
        if k_next_condition(state, cfg, adv.s, adv.last_j, wb):
            s = adv.s + 1
            adv = replace(adv, phase=Phase.PUSH, s=s, stage_base=state.theta_err_runmax,
                          k_records=adv.k_records + ((s, t + 1),))
            w = push_noise(state.theta_err, state.y, t + 1, wb)
        else:
            w = 0.0
    return _checked(w, t + 1, wb), adv


def _checked(w, t, bound):
    if not abs(w) <= bound:
        raise NoiseBoundError(t, w, bound)
    return w
