"""Desk-scale experiments behind the figure data: repeat timing, heatmaps, GE curves."""

import logging
from dataclasses import dataclass

import numpy as np

from .aes_tt import AesKey
from .config import ExperimentConfig, SeedMode
from .leakage_analysis import (BinMode, GEReport, evaluate, heatmap, heatmap_correlation,
                               profile_templates)
from .occupancy_attack import collect_dataset, collect_trace, key_from_hex, random_plaintext
from .prng import seed_fixed

log = logging.getLogger(__name__)


def repeat_groups(cfg: ExperimentConfig, key: AesKey, plaintexts, reps: int,
                  seed_mode: SeedMode) -> dict[str, list[int]]:
    """Probe cycles of ``reps`` repetitions for each plaintext."""
    groups = {}
    for pt in plaintexts:
        groups[pt.hex()] = [collect_trace(cfg, key, pt, seed_mode).probe_cycles for _ in range(reps)]
    return groups


def sample_plaintexts(n: int, seed: int) -> list[bytes]:
    rng = seed_fixed(seed)
    return [random_plaintext(rng) for _ in range(n)]


def between_group_spread(groups: dict) -> float:
    means = [float(np.mean(v)) for v in groups.values()]
    return max(means) - min(means)


def within_group_std(groups: dict) -> dict[str, float]:
    return {g: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for g, v in groups.items()}


@dataclass
class PairedData:
    """Profiling and victim datasets collected under one seed mode."""

    cfg: ExperimentConfig
    seed_mode: SeedMode
    profile_key: AesKey
    victim_key: AesKey
    profile: list
    victim: list


def collect_pair(cfg: ExperimentConfig, seed_mode: SeedMode, n_profile: int, n_victim: int,
                 out_dir=None, jobs: int = 1) -> PairedData:
    """Profiling traces use ``plaintext_seed``, victim traces ``plaintext_seed + 1``."""
    kp, kv = key_from_hex(cfg.profile_key), key_from_hex(cfg.victim_key)
    pcfg = cfg.replace(seed_mode=seed_mode)
    vcfg = pcfg.replace(plaintext_seed=cfg.plaintext_seed + 1)
    tag = seed_mode.tag.replace(":", "")
    prof, _ = collect_dataset(pcfg, kp, n_profile, seed_mode, seed_fixed(pcfg.plaintext_seed),
                              out_dir, prefix=f"profile_{tag}_l1{cfg.l1_size}", jobs=jobs)
    vict, _ = collect_dataset(vcfg, kv, n_victim, seed_mode, seed_fixed(vcfg.plaintext_seed),
                              out_dir, prefix=f"victim_{tag}_l1{cfg.l1_size}", jobs=jobs)
    return PairedData(cfg, seed_mode, kp, kv, prof, vict)


def heatmap_pair(data: PairedData, mode=BinMode.XOR_ONLY):
    """Profiled heatmap, correct-key victim heatmap, and their Pearson correlation."""
    hp = heatmap(profile_templates(data.profile, data.profile_key, mode))
    hv = heatmap(profile_templates(data.victim, data.victim_key, mode))
    return hp, hv, heatmap_correlation(hp, hv)


def ge_series(data: PairedData, step: int, mode=BinMode.XOR_ONLY) -> list[tuple[int, GEReport]]:
    templates = profile_templates(data.profile, data.profile_key, mode)
    n = len(data.victim)
    budgets = list(range(step, n, step)) + [n]
    out = []
    for b in budgets:
        out.append((b, evaluate(templates, data.victim[:b], data.victim_key, mode)))
        log.debug("GE %s at %d traces: %.1f%%", data.seed_mode.tag, b, out[-1][1].ge_percent)
    return out
