"""Shared builders for the test suite."""

import math

from lsstr.adversary import StagedConfig, StagedNoise
from lsstr.dynamics import LoopState, PlantConfig

# push never closes: the stage target is out of reach
PUSH_FOREVER = StagedConfig(theta_floor=1e300, c_multiplier=0.0, theta_margin=0.0,
                            ratio_scale=0.0, ratio_offset=0.0, k_min=2)

def entry_state(k, theta, theta_err, y, r):
    """Loop state at ``t = k - 1`` carrying the given entry quantities."""
    return LoopState(k - 1, float(y), theta - theta_err, theta - (theta - theta_err),
                     float(r), 0.0, 0.0, 0.0, 0.0, 0.0, abs(theta_err))

def random_entry(rng, w):
    """Draw ``(k, theta, state)`` satisfying the push entry condition for bound ``w``."""
    k = int(rng.integers(2, 1001))
    theta = float(rng.uniform(-3.0, 3.0))
    err = float(rng.uniform(-1.0, 1.0))
    y = float(rng.uniform(-1.0, 1.0)) * w / (2.0 * math.sqrt(k - 1))
    r = float(rng.uniform(1.0, 10.0)) * w * w
    state = entry_state(k, theta, err, y, r)
    return k, theta, state

def push_plant(theta, w):
    return PlantConfig(theta=theta, theta0=theta, y0=1.0, w_bound=w)

def push_policy():
    return StagedNoise(PUSH_FOREVER)
