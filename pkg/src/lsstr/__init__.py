"""Least-squares self-tuning regulator under bounded adversarial noise."""

from .adversary import (
    AdversaryState, IidBoundedNoise, NoiseBoundError, NoisePolicy, Phase,
    ScriptedNoise, StagedConfig, StagedNoise, ZeroNoise,
)
from .dynamics import LoopState, PlantConfig, TraceRecord
from .simulation import Simulation, reference_run, run_simulation, simulate
from .trace import TraceChunk

__version__ = "0.1.0"

__all__ = [
    "AdversaryState", "IidBoundedNoise", "LoopState", "NoiseBoundError", "NoisePolicy",
    "Phase", "PlantConfig", "ScriptedNoise", "Simulation", "StagedConfig", "StagedNoise",
    "TraceChunk", "TraceRecord", "ZeroNoise", "reference_run", "run_simulation", "simulate",
]
