import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from lsstr.adversary import IidBoundedNoise, ScriptedNoise, StagedNoise, ZeroNoise
from lsstr.dynamics import (
    NonFiniteError, PlantConfig, closed_loop_step, control_input, initial_state,
    inject_state, ls_update, plant_step, reciprocal_update, sign_s,
)
from lsstr.simulation import Simulation, reference_run, run_simulation, simulate
from lsstr.trace import TraceChunk

reals = st.floats(min_value=-50, max_value=50, allow_nan=False)


# -- scalar operations -----------------------------------------------------------

@pytest.mark.parametrize("x, expected", [(-0.3, -1.0), (0.0, 1.0), (-0.0, 1.0), (7.2, 1.0)])
def test_sign_s(x, expected):
    assert sign_s(x) == expected


@pytest.mark.parametrize("x", [math.inf, -math.inf, math.nan])
def test_sign_s_rejects_non_finite(x):
    with pytest.raises(NonFiniteError):
        sign_s(x)


@pytest.mark.parametrize("th, y, u", [(2, 3, -6), (0, 5, 0), (-1.5, -2, -3)])
def test_control_input(th, y, u):
    assert control_input(th, y) == u


def test_plant_step_examples():
    assert plant_step(2.0, 1.0, -1.0, 0.5) == 1.5
    th = 0.7
    assert plant_step(th, 3.0, control_input(th, 3.0), 0.0) == 0.0
    assert plant_step(1.0, 0.0, 0.0, 0.25) == 0.25


def test_ls_update_hand_value():
    assert ls_update(0.0, 1.0, 1.0, 2.0, 0.0) == (1.0, 2.0)


@given(reals, st.floats(1e-6, 1e6), reals, reals)
def test_ls_update_zero_regressor_is_identity(th, r, y_next, u):
    assert ls_update(th, r, 0.0, y_next, u) == (th, r)


@pytest.mark.parametrize("r", [0.0, -1.0])
def test_ls_update_rejects_nonpositive_r(r):
    with pytest.raises(ValueError):
        ls_update(0.0, r, 1.0, 1.0, 0.0)


def test_reciprocal_form_matches_closed_form():
    rng = np.random.default_rng(11)
    r_prev = 10 ** rng.uniform(-3, 3, 10_000)
    y = rng.standard_normal(10_000) * 10 ** rng.uniform(-3, 2, 10_000)
    for rp, yt in zip(r_prev.tolist(), y.tolist()):
        inv = reciprocal_update(1.0 / rp, yt)
        closed = 1.0 / (rp + yt * yt)
        assert abs(inv - closed) <= 1e-12 * closed


# -- configuration -------------------------------------------------------------------

def test_plant_config_defaults_and_validation():
    assert PlantConfig(2, 0, 3, 1).r0 == 9.0
    assert PlantConfig(2, 0, 0, 0.5).r0 == 0.25
    assert PlantConfig(2, 0, 3, 1, r0=0.1).r0 == 0.1
    for bad in (dict(r0=0.0), dict(r0=-1.0), dict(w_bound=0.0), dict(theta=math.nan)):
        kw = dict(theta=1.0, theta0=0.0, y0=1.0, w_bound=1.0) | bad
        with pytest.raises(ValueError):
            PlantConfig(**kw)


# -- closed loop ---------------------------------------------------------------------

def test_closed_loop_step_first_step():
    # r0 enters step 0 unchanged; r grows by y1**2 afterwards
    plant = PlantConfig(theta=2.0, theta0=1.0, y0=1.0, w_bound=1.0, r0=1.0)
    s1 = closed_loop_step(initial_state(plant), plant, 0.5)
    assert s1.t == 1
    assert s1.y == 1.5
    assert s1.theta_hat == 2.5
    assert s1.theta_err == -0.5
    assert s1.r == 1.0 + 2.25
    assert s1.sum_y2 == 2.25 and s1.sum_w2 == 0.25


def test_tuned_noise_free_loop_is_a_fixed_point():
    plant = PlantConfig(theta=1.3, theta0=1.3, y0=4.0, w_bound=1.0)
    s = initial_state(plant)
    for _ in range(5):
        s = closed_loop_step(s, plant, 0.0)
        assert s.y == 0.0 and s.theta_err == 0.0


def test_closed_loop_rejects_non_finite_noise():
    plant = PlantConfig(1, 0, 1, 1)
    with pytest.raises(NonFiniteError):
        closed_loop_step(initial_state(plant), plant, math.nan)


@given(theta=reals, theta0=reals, y0=st.floats(-5, 5), r0_scale=st.floats(0.5, 100),
       noise=st.lists(st.floats(-1, 1), min_size=1, max_size=60))
def test_loop_invariants(theta, theta0, y0, r0_scale, noise):
    # r0 comparable to max(y0**2, w**2): a tiny r0 makes the first gain huge and
    # theta - theta_hat loses absolute precision that r later amplifies
    r0 = r0_scale * max(y0 * y0, 1.0)
    plant = PlantConfig(theta, theta0, y0, 1.0, r0=r0)
    s = initial_state(plant)
    ys, ws = [y0], []
    q1 = None
    for w in noise:
        prev = s
        try:
            s = closed_loop_step(s, plant, w)
        except NonFiniteError:
            return
        ys.append(s.y)
        ws.append(w)
        assert s.theta_err == theta - s.theta_hat
        assert s.r >= prev.r > 0
        assert math.isclose(s.r, r0 + math.fsum(y * y for y in ys[1:]), rel_tol=1e-12)
        # conservation: r[t-1] theta_err[t] + sum y[i-1] w[i]
        terms = [a * b for a, b in zip(ys[:-1], ws)]
        q = prev.r * s.theta_err + math.fsum(terms)
        scale = max(abs(prev.r * s.theta_err), math.fsum(abs(x) for x in terms), 1.0)
        if q1 is None:
            q1 = q
        assert abs(q - q1) <= 1e-9 * scale + 1e-12
        # estimate-error identity
        alt = prev.theta_err - prev.y * s.y / prev.r
        assert abs(alt - s.theta_err) <= 1e-12 * max(abs(prev.theta_err), abs(alt), 1.0)


@given(err=st.floats(-20, 20).filter(lambda v: v != 0), y=st.floats(-5, 5),
       r=st.floats(0.01, 50))
def test_noise_free_error_shrinks(err, y, r):
    s = inject_state(err, y, r)
    plant = PlantConfig(0.0, 0.0, 0.0, 1.0)
    for _ in range(40):
        nxt = closed_loop_step(s, plant, 0.0)
        assert abs(nxt.theta_err) <= abs(s.theta_err)
        s = nxt


# -- driver ----------------------------------------------------------------------------

def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        Simulation(PlantConfig(1, 0, 1, 1), ZeroNoise(), 0)
    with pytest.raises(ValueError):
        list(run_simulation(PlantConfig(1, 0, 1, 1), ZeroNoise(), 0))


def test_run_simulation_emits_one_record_per_step():
    recs = list(run_simulation(PlantConfig(2, 0, 1, 1), IidBoundedNoise(4), 300))
    assert [r.t for r in recs] == list(range(1, 301))
    assert all(r.phase_tag == "iid" and abs(r.w) <= 1 for r in recs)


def test_zero_noise_outputs_decay_geometrically():
    plant = PlantConfig(theta=2.0, theta0=0.5, y0=1.0, w_bound=1.0, r0=0.2)
    trace, _ = simulate(plant, ZeroNoise(), 400)
    err = np.abs(trace.theta_err)
    t0 = int(np.flatnonzero(err < 1)[0])
    alpha = err[t0]
    assert 0 < alpha < 1
    y = np.abs(trace.y[t0:])
    bound = y[0] * alpha ** np.arange(len(y))
    assert np.all(y <= bound * (1 + 1e-6))


def test_iteration_is_single_use():
    sim = Simulation(PlantConfig(1, 0, 1, 1), ZeroNoise(), 5)
    sim.run()
    with pytest.raises(RuntimeError):
        sim.run()


@pytest.mark.parametrize("policy", [
    ZeroNoise(), IidBoundedNoise(7), StagedNoise(),
    ScriptedNoise(tuple(np.random.default_rng(2).uniform(-1, 1, 3000))),
])
@pytest.mark.parametrize("chunk", [1, 97, 1 << 16])
def test_compiled_path_matches_reference(policy, chunk):
    plant = PlantConfig(theta=1.5, theta0=0.0, y0=0.7, w_bound=1.0)
    fast, _ = simulate(plant, policy, 3000, chunk_size=chunk)
    ref = reference_run(plant, policy, 3000)
    for name in ("t", "y", "u", "w", "theta_hat", "theta_err", "r", "sum_y2",
                 "sum_w2", "ratio", "phase", "stage"):
        assert np.array_equal(getattr(fast, name), getattr(ref, name)), name


def test_scripted_replay_reproduces_trace_bit_for_bit(tmp_path):
    plant = PlantConfig(theta=2.0, theta0=0.0, y0=0.0, w_bound=1.0)
    original, _ = simulate(plant, IidBoundedNoise(123), 20_000)
    script = ScriptedNoise(tuple(original.w[1:]))
    script.to_file(tmp_path / "w.txt")
    replay, _ = simulate(plant, ScriptedNoise.from_file(tmp_path / "w.txt"), 20_000)
    assert np.array_equal(replay.y, original.y)
    assert np.array_equal(replay.theta_hat, original.theta_hat)


def test_chunks_are_consistent_with_concatenation():
    plant = PlantConfig(2, 0, 1, 1)
    whole, _ = simulate(plant, StagedNoise(), 5000, chunk_size=1 << 16)
    parts = list(Simulation(plant, StagedNoise(), 5000, chunk_size=333).chunks())
    assert parts[0].t[0] == 0
    joined = TraceChunk.concat(parts)
    assert np.array_equal(joined.y, whole.y) and np.array_equal(joined.phase, whole.phase)


def test_overflow_is_reported():
    plant = PlantConfig(theta=1e200, theta0=0.0, y0=1e150, w_bound=1.0, r0=1.0)
    with pytest.raises(NonFiniteError):
        simulate(plant, ZeroNoise(), 10)


@given(st.integers(1, 60))
def test_start_state_run_begins_at_given_time(k):
    plant = PlantConfig(0.0, 0.0, 0.0, 1.0)
    start = inject_state(0.5, 0.01, 2.0, t=k)
    assume(start.r > 0)
    trace, _ = simulate(plant, ZeroNoise(), 10)
    sim = Simulation(plant, ZeroNoise(), 10, start=start)
    tr = sim.run()
    assert tr.t[0] == k and tr.t[-1] == k + 10
    assert tr.y[0] == 0.01
