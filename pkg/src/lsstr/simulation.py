"""Simulation driver: streams trace chunks from the compiled stepper.

``Simulation.chunks()`` is the streaming entry point; ``reference_run`` walks
the same loop with the pure-Python operations and exists to cross-check the
compiled path.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import _kernel as K
from .adversary import (
    AdversaryState, IidBoundedNoise, NoiseBoundError, NoisePolicy, Phase,
    PolicyError, ScriptedNoise, StagedNoise, ZeroNoise, staged_next_noise,
)
from .dynamics import (
    LoopState, NonFiniteError, PlantConfig, TraceRecord, closed_loop_step,
    control_input, initial_state,
)
from .trace import TraceChunk

DEFAULT_CHUNK = 1 << 16


def initial_row(plant: PlantConfig, staged: bool, start: LoopState | None = None) -> TraceChunk:
    s0 = initial_state(plant) if start is None else start
    return TraceChunk.from_columns(
        [s0.t], [s0.y], [control_input(s0.theta_hat, s0.y)], [0.0], [s0.theta_hat],
        [s0.theta_err], [s0.r], [s0.sum_y2], [s0.sum_w2], [int(Phase.INIT)],
        [1 if staged else 0])


class Simulation:
    """One closed-loop run; iterate :meth:`chunks` to drive it.

    After (or during) iteration, ``state`` is the latest :class:`LoopState`
    and ``adversary`` the staged machine (``None`` for other policies).

    ``start`` replaces the configured initial state (for example a state
    satisfying the push entry condition); a staged run from such a state
    begins in the await phase. ``plant.theta`` must match the state.
    """

    def __init__(self, plant: PlantConfig, policy: NoisePolicy, horizon: int,
                 chunk_size: int = DEFAULT_CHUNK, start: LoopState | None = None):
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        if chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not isinstance(policy, NoisePolicy):
            raise TypeError(f"not a noise policy: {policy!r}")
        self.plant = plant
        self.policy = policy
        self.horizon = int(horizon)
        self.chunk_size = int(chunk_size)
        self.state = initial_state(plant) if start is None else start
        self._start = start
        self.adversary = None
        if isinstance(policy, StagedNoise):
            phase = Phase.BOOTSTRAP if start is None else Phase.AWAIT
            self.adversary = AdversaryState(phase=phase,
                                            runmax_before=self.state.theta_err_runmax)
        self._started = False

    @property
    def k_records(self):
        return self.adversary.k_records if self.adversary else ()

    @property
    def j_records(self):
        return self.adversary.j_records if self.adversary else ()

    def _pack(self):
        s = self.state
        fs = np.array([s.y, s.theta_hat, s.theta_err, s.r_hi, s.r_lo, s.sum_y2_hi,
                       s.sum_y2_lo, s.sum_w2_hi, s.sum_w2_lo, s.theta_err_runmax,
                       0.0, 0.0])
        ist = np.zeros(K.N_ISTATE, dtype=np.int64)
        ist[K.T] = s.t
        if self.adversary is not None:
            a = self.adversary
            fs[K.RUNMAX_BEFORE] = a.runmax_before
            fs[K.BASE] = a.stage_base
            ist[K.PHASE] = int(a.phase)
            ist[K.STAGE] = a.s
            ist[K.LAST_J] = a.last_j if a.j_records else -1
        return fs, ist

    def _unpack(self, fs, ist, events):
        self.state = LoopState(int(ist[K.T]), *(float(v) for v in fs[:K.RUNMAX + 1]))
        if self.adversary is not None:
            ks = list(self.adversary.k_records)
            js = list(self.adversary.j_records)
            for kind, s, t in events.tolist():
                (ks if kind == 0 else js).append((s, t))
            self.adversary = AdversaryState(
                Phase(int(ist[K.PHASE])), int(ist[K.STAGE]), tuple(ks), tuple(js),
                float(fs[K.RUNMAX_BEFORE]), float(fs[K.BASE]))

    def _policy_args(self):
        p = self.policy
        if isinstance(p, StagedNoise):
            c = p.config
            cfg = np.array([c.theta_floor, c.c_multiplier, c.theta_margin,
                            c.ratio_scale, c.ratio_offset])
            return K.STAGED, 0, cfg, c.k_min
        cfg = np.zeros(5)
        if isinstance(p, ZeroNoise):
            return K.ZERO, 0, cfg, 3
        if isinstance(p, ScriptedNoise):
            return K.EXTERNAL, int(Phase.SCRIPT), cfg, 3
        if isinstance(p, IidBoundedNoise):
            return K.EXTERNAL, int(Phase.IID), cfg, 3
        raise TypeError(f"unsupported policy {p!r}")

    def chunks(self) -> Iterator[TraceChunk]:
        """Yield trace chunks; the first one starts with the ``t = 0`` row."""
        if self._started:
            raise RuntimeError("a Simulation can only be iterated once")
        self._started = True
        code, ext_tag, cfg, k_min = self._policy_args()
        wb = self.plant.w_bound
        script = None
        rng = None
        if isinstance(self.policy, ScriptedNoise):
            script = np.asarray(self.policy.values, dtype=np.float64)
        elif isinstance(self.policy, IidBoundedNoise):
            rng = self.policy.generator()
        head = initial_row(self.plant, self.adversary is not None, self._start)
        remaining = self.horizon
        out_f, out_i, ev = K.empty_outputs(min(self.chunk_size, remaining))
        while remaining > 0:
            n = min(self.chunk_size, remaining)
            t0 = self.state.t
            if script is not None:
                t0 -= self._start.t if self._start is not None else 0
                wsrc = script[t0:t0 + n]
                if len(wsrc) < n:
                    n = len(wsrc)
                    if n == 0:
                        raise PolicyError(t0 + 1, "scripted noise exhausted")
            elif rng is not None:
                wsrc = rng.uniform(-wb, wb, size=n)
            else:
                wsrc = np.zeros(0)
            fs, ist = self._pack()
            done, nev, status, bad = K.run_chunk(
                fs, ist, self.plant.theta, wb, code, ext_tag, wsrc, cfg, k_min,
                n, out_f, out_i, ev)
            self._unpack(fs, ist, ev[:nev])
            chunk = TraceChunk.from_columns(
                out_i[:done, 0], *(out_f[:done, j] for j in range(K.N_OUT)),
                phase=out_i[:done, 1], stage=out_i[:done, 2]).copy()
            if head is not None:
                chunk = TraceChunk.concat([head, chunk])
                head = None
            if len(chunk):
                yield chunk
            remaining -= done
            if status == K.BOUND_VIOLATION:
                raise NoiseBoundError(self.state.t + 1, float(bad), wb)
            if status == K.NON_FINITE:
                raise NonFiniteError(f"state overflowed at t={self.state.t + 1}")
            consumed = self.state.t - (self._start.t if self._start is not None else 0)
            if script is not None and remaining and consumed >= len(script):
                raise PolicyError(self.state.t + 1, "scripted noise exhausted")

    def run(self) -> TraceChunk:
        """Drive the whole run and return it as one in-memory chunk."""
        return TraceChunk.concat(self.chunks())


def simulate(plant: PlantConfig, policy: NoisePolicy, horizon: int,
             chunk_size: int = DEFAULT_CHUNK):
    """In-memory convenience: returns ``(trace, simulation)``."""
    sim = Simulation(plant, policy, horizon, chunk_size)
    return sim.run(), sim


def run_simulation(config: PlantConfig, policy: NoisePolicy, horizon: int) -> Iterator[TraceRecord]:
    """One :class:`TraceRecord` per step ``t = 1..horizon``."""
    for chunk in Simulation(config, policy, horizon).chunks():
        for rec in chunk.records():
            if rec.t > 0:
                yield rec


def reference_run(plant: PlantConfig, policy: NoisePolicy, horizon: int) -> TraceChunk:
    """Same run as :class:`Simulation` using the pure-Python operations."""
    state = initial_state(plant)
    rows = [next(initial_row(plant, isinstance(policy, StagedNoise)).records())]
    adv = AdversaryState(runmax_before=state.theta_err_runmax)
    if isinstance(policy, IidBoundedNoise):
        draws = policy.generator().uniform(-plant.w_bound, plant.w_bound, size=horizon)
    for _ in range(horizon):
        t = state.t
        stage = 0
        if isinstance(policy, ZeroNoise):
            w, tag = 0.0, Phase.ZERO
        elif isinstance(policy, ScriptedNoise):
            if t >= len(policy.values):
                raise PolicyError(t + 1, "scripted noise exhausted")
            w, tag = policy.values[t], Phase.SCRIPT
        elif isinstance(policy, IidBoundedNoise):
            w, tag = float(draws[t]), Phase.IID
        else:
            w, adv = staged_next_noise(adv, state, policy.config, plant)
            tag = Phase.BOOTSTRAP if t == 0 else adv.phase
            stage = adv.s
        if not abs(w) <= plant.w_bound:
            raise NoiseBoundError(t + 1, w, plant.w_bound)
        state = closed_loop_step(state, plant, w)
        rows.append(TraceRecord(
            state.t, state.y, control_input(state.theta_hat, state.y), w,
            state.theta_hat, state.theta_err, state.r, state.sum_y2, state.sum_w2,
            state.ratio, tag.tag, stage))
    cols = list(zip(*[(r.t, r.y, r.u, r.w, r.theta_hat, r.theta_err, r.r, r.sum_y2,
                       r.sum_w2, int(Phase.from_tag(r.phase_tag)), r.stage) for r in rows]))
    return TraceChunk.from_columns(*cols[:9], phase=cols[9], stage=cols[10])


__all__ = ["Simulation", "simulate", "run_simulation", "reference_run", "initial_row"]
