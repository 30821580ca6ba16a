"""Compiled chunk stepper.

Reuses the ``register_jitable`` helpers from :mod:`lsstr.dynamics` and
:mod:`lsstr.adversary`, so the compiled loop and the pure-Python reference
path perform identical floating-point operations.
"""

import math

import numba
import numpy as np

from .adversary import (
    _entry_ok, _j_ok, _k_next_ok, _theta_target, bootstrap_noise, push_noise,
)
from .dynamics import advance, control_input

# float state slots
Y, TH, ERR, R_HI, R_LO, SY_HI, SY_LO, SW_HI, SW_LO, RUNMAX, RUNMAX_BEFORE, BASE = range(12)
N_FSTATE = 12
# int state slots
T, PHASE, STAGE, LAST_J = range(4)
N_ISTATE = 4

# policy codes
EXTERNAL, ZERO, STAGED = 0, 1, 2
# phase codes (mirror adversary.Phase)
P_ZERO, P_BOOTSTRAP, P_AWAIT, P_PUSH, P_SILENT = 1, 4, 5, 6, 7

# output float columns
OY, OU, OW, OTH, OERR, OR, OSY, OSW = range(8)
N_OUT = 8

OK, BOUND_VIOLATION, NON_FINITE = 0, 1, 2


@numba.njit(cache=True)
def run_chunk(fs, ist, theta, w_bound, policy, ext_tag, wsrc, cfg, k_min,
              n, out_f, out_i, ev):
    """Advance ``n`` steps in place.

    Returns ``(steps_done, n_events, status, bad_value)``; stops early on a
    bound violation, a non-finite state or a full event buffer.
    """
    theta_floor, c_mult, margin, ratio_scale, ratio_offset = cfg[0], cfg[1], cfg[2], cfg[3], cfg[4]
    nev = 0
    for i in range(n):
        if nev + 2 > ev.shape[0]:
            return i, nev, OK, 0.0
        t = ist[T]
        tag = P_ZERO
        w = 0.0
        if policy == EXTERNAL:
            w = wsrc[i]
            tag = ext_tag
        elif policy == STAGED:
            runmax_before = fs[RUNMAX_BEFORE]
            fs[RUNMAX_BEFORE] = fs[RUNMAX]
            phase = ist[PHASE]
            if phase == P_BOOTSTRAP and t == 0:
                w = bootstrap_noise(fs[ERR], fs[Y], w_bound)
                tag = P_BOOTSTRAP
                ist[PHASE] = P_AWAIT
            else:
                if phase == P_BOOTSTRAP:
                    phase = P_AWAIT
                if phase == P_AWAIT:
                    if _entry_ok(t, fs[Y], fs[ERR], fs[R_HI] + fs[R_LO], w_bound, k_min):
                        phase = P_PUSH
                        fs[BASE] = fs[RUNMAX]
                        ev[nev, 0] = 0
                        ev[nev, 1] = ist[STAGE]
                        ev[nev, 2] = t + 1
                        nev += 1
                        w = push_noise(fs[ERR], fs[Y], t + 1, w_bound)
                elif phase == P_PUSH:
                    target = _theta_target(ist[STAGE], fs[BASE], theta_floor, c_mult, margin)
                    if _j_ok(fs[ERR], runmax_before, target):
                        phase = P_SILENT
                        ist[LAST_J] = t
                        ev[nev, 0] = 1
                        ev[nev, 1] = ist[STAGE]
                        ev[nev, 2] = t
                        nev += 1
                    else:
                        w = push_noise(fs[ERR], fs[Y], t + 1, w_bound)
                else:
                    entry = _entry_ok(t, fs[Y], fs[ERR], fs[R_HI] + fs[R_LO], w_bound, k_min)
                    rt = ratio_offset + ratio_scale * ist[STAGE]
                    if _k_next_ok(t, ist[LAST_J], entry, fs[SY_HI] + fs[SY_LO],
                                  fs[SW_HI] + fs[SW_LO], rt):
                        phase = P_PUSH
                        ist[STAGE] += 1
                        fs[BASE] = fs[RUNMAX]
                        ev[nev, 0] = 0
                        ev[nev, 1] = ist[STAGE]
                        ev[nev, 2] = t + 1
                        nev += 1
                        w = push_noise(fs[ERR], fs[Y], t + 1, w_bound)
                ist[PHASE] = phase
                tag = phase
        if not abs(w) <= w_bound:
            return i, nev, BOUND_VIOLATION, w

        (u, y1, th1, err1, r_hi, r_lo, sy_hi, sy_lo, sw_hi, sw_lo, runmax) = advance(
            theta, fs[Y], fs[TH], fs[R_HI], fs[R_LO], fs[SY_HI], fs[SY_LO],
            fs[SW_HI], fs[SW_LO], fs[RUNMAX], w)
        if not (math.isfinite(y1) and math.isfinite(th1) and math.isfinite(r_hi)):
            return i, nev, NON_FINITE, y1
        fs[Y] = y1
        fs[TH] = th1
        fs[ERR] = err1
        fs[R_HI] = r_hi
        fs[R_LO] = r_lo
        fs[SY_HI] = sy_hi
        fs[SY_LO] = sy_lo
        fs[SW_HI] = sw_hi
        fs[SW_LO] = sw_lo
        fs[RUNMAX] = runmax
        ist[T] = t + 1

        out_f[i, OY] = y1
        out_f[i, OU] = control_input(th1, y1)
        out_f[i, OW] = w
        out_f[i, OTH] = th1
        out_f[i, OERR] = err1
        out_f[i, OR] = r_hi + r_lo
        out_f[i, OSY] = sy_hi + sy_lo
        out_f[i, OSW] = sw_hi + sw_lo
        out_i[i, 0] = t + 1
        out_i[i, 1] = tag
        out_i[i, 2] = ist[STAGE] if policy == STAGED else 0
    return n, nev, OK, 0.0


def empty_outputs(n):
    return (np.empty((n, N_OUT)), np.empty((n, 3), dtype=np.int64),
            np.empty((max(64, min(n, 4096)), 3), dtype=np.int64))
