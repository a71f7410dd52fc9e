"""Simulation lab for cache-occupancy attacks on a MIRAGE-style randomized LLC."""

from ._jit import USING_NUMBA
from .aes_tt import AesKey, encrypt, expand_key
from .config import ExperimentConfig, SeedMode
from .hierarchy import Hierarchy, L1Config, LatencyModel
from .mirage import MirageCache, MirageConfig, Owner
from .occupancy_attack import TraceRecord, collect_dataset, collect_trace
from .prng import Rng, seed_entropy, seed_fixed

__version__ = "0.1.0"

__all__ = [
    "USING_NUMBA", "AesKey", "encrypt", "expand_key", "ExperimentConfig", "SeedMode",
    "Hierarchy", "L1Config", "LatencyModel", "MirageCache", "MirageConfig", "Owner",
    "TraceRecord", "collect_dataset", "collect_trace", "Rng", "seed_entropy", "seed_fixed",
]
