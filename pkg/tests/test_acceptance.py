"""End-to-end acceptance gate, one test per criterion.

Every test prints a single ``CRITERION n PASS|FAIL`` line with the measured
quantities. RandomFix data uses the real OS entropy source.

    pytest -v tests/test_acceptance.py
"""

import os
import time

import numpy as np
import pytest
from scipy import stats

from mirage_lab.aes_tt import INV_SBOX, SBOX, encrypt, encrypt_traced, expand_key
from mirage_lab.config import FIXED_BUG, RANDOM_FIX, ExperimentConfig
from mirage_lab.experiments import (PairedData, between_group_spread, ge_series, heatmap_pair,
                                    sample_plaintexts, within_group_std)
from mirage_lab.hierarchy import Hierarchy, L1Config, Level
from mirage_lab.leakage_analysis import Counting, ge_curve, profile_templates
from mirage_lab.mirage import MirageCache, MirageConfig, Owner
from mirage_lab.occupancy_attack import (collect_dataset, key_from_hex, prepare, random_plaintext,
                                         run_trace, table_lines)
from mirage_lab.prng import seed_fixed
from mirage_lab.selftest import eviction_counts
from mirage_lab.skew_index import derive_keys

from oracles import aes_ecb

pytestmark = pytest.mark.slow

C = 16384
N_PROFILE = 2000
N_VICTIM = 2000
GE_STEP = 250
CFG = ExperimentConfig(mirage=MirageConfig(data_lines=C))


class Ledger:
    """Structural tallies over every simulated trace (criterion 8)."""

    def __init__(self):
        self.installs = 0
        self.sae = 0
        self.traces = 0
        self.violations = []
        self._base = {}

    def snapshot_installs(self, cfg, seed_mode):
        # fixed-seed traces start from one shared primed copy; count its installs once
        if seed_mode.kind != "fixed":
            return 0
        key = (cfg.l1_size, seed_mode.seed)
        if key not in self._base:
            n = prepare(cfg, seed_fixed(seed_mode.seed)).llc.installs
            self._base[key] = n
            self.installs += n
        return self._base[key]

    def record(self, cfg, seed_mode, cache):
        self.installs += cache.installs - self.snapshot_installs(cfg, seed_mode)
        self.sae += cache.sae_count
        self.traces += 1
        problems = cache.check_integrity()
        if problems:
            self.violations.append(problems[0])


LEDGER = Ledger()


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")


def traced(cfg, key, plaintexts, seed_mode):
    recs, victim_llc = [], []
    for pt in plaintexts:
        rec, st = run_trace(cfg, key, pt, seed_mode)
        LEDGER.record(cfg, seed_mode, st.cache)
        recs.append(rec)
        victim_llc.append(int((st.victim_levels != Level.L1).sum()))
    return recs, victim_llc


def dataset(cfg, key, n, seed_mode, pt_seed):
    rng = seed_fixed(pt_seed)
    return traced(cfg, key, [random_plaintext(rng) for _ in range(n)], seed_mode)


_pairs = {}


def pair(l1, seed_mode) -> tuple[PairedData, list]:
    """Profiling (plaintext seed 1) and victim (seed 2) datasets, cached per session."""
    k = (l1, seed_mode.tag)
    if k not in _pairs:
        cfg = CFG.replace(l1_size=l1, seed_mode=seed_mode)
        kp, kv = key_from_hex(cfg.profile_key), key_from_hex(cfg.victim_key)
        t0 = time.perf_counter()
        prof, _ = dataset(cfg, kp, N_PROFILE, seed_mode, 1)
        vict, llc = dataset(cfg, kv, N_VICTIM, seed_mode, 2)
        print(f"collected {seed_mode.tag} l1={l1}: {time.perf_counter() - t0:.0f}s")
        _pairs[k] = (PairedData(cfg, seed_mode, kp, kv, prof, vict), llc)
    return _pairs[k]


# ---------------------------------------------------------------- 1-3

@pytest.fixture(scope="module")
def repeat_groups():
    key = key_from_hex(CFG.victim_key)
    pts = sample_plaintexts(4, seed=2024)
    out = {}
    for sm in (FIXED_BUG, RANDOM_FIX):
        groups = {}
        for pt in pts:
            recs, _ = traced(CFG, key, [pt] * 100, sm)
            groups[pt.hex()] = [r.probe_cycles for r in recs]
        out[sm.kind] = groups
    return out


def test_criterion_1_fixed_seed_determinism(repeat_groups, capsys):
    groups = repeat_groups["fixed"]
    distinct = {g: len(set(v)) for g, v in groups.items()}
    ok = all(n == 1 for n in distinct.values()) and all(len(v) == 100 for v in groups.values())
    report(capsys, 1, ok, f"distinct values per plaintext group = {list(distinct.values())}")
    assert ok


def test_criterion_2_fixed_seed_distinguishable(repeat_groups, capsys):
    values = sorted({v[0] for v in repeat_groups["fixed"].values()})
    ok = len(values) >= 2
    report(capsys, 2, ok, f"group values = {values}")
    assert ok


def test_criterion_3_random_noise_dominates(repeat_groups, capsys):
    spread = between_group_spread(repeat_groups["fixed"])
    sds = within_group_std(repeat_groups["random"])
    worst = min(sds.values())
    ok = worst >= 10 * spread
    ratio = f"{worst / spread:.1f}" if spread else "inf"
    report(capsys, 3, ok, f"fixed spread = {spread:.0f} cycles, random per-group sd min = "
                          f"{worst:.0f} (ratio {ratio}, need >= 10)")
    assert ok


# ---------------------------------------------------------------- 4-6

def test_criterion_4_heatmap_correlation(capsys):
    _, _, r_fixed = heatmap_pair(pair(512, FIXED_BUG)[0])
    _, _, r_rand = heatmap_pair(pair(512, RANDOM_FIX)[0])
    ok = r_fixed >= 0.5 and abs(r_rand) <= 0.15
    report(capsys, 4, ok, f"pearson fixed = {r_fixed:.3f} (need >= 0.5), "
                          f"random = {r_rand:.3f} (need |r| <= 0.15)")
    assert ok


def _curve(l1, sm):
    return ge_series(pair(l1, sm)[0], GE_STEP)


def _fmt(curve):
    return " ".join(f"{u}:{r.ge_percent:.1f}" for u, r in curve)


def test_criterion_5_random_seed_ge_stays_high(capsys):
    lines, ok = [], True
    for l1 in (512, 65536):
        curve = _curve(l1, RANDOM_FIX)
        worst = min(r.ge_percent for _, r in curve)
        ok &= worst >= 90 and curve[-1][0] >= 2000
        lines.append(f"l1={l1} min {worst:.1f}% [{_fmt(curve)}]")
    report(capsys, 5, ok, "RandomFix GE% need >= 90 everywhere; " + "; ".join(lines))
    assert ok


def test_criterion_6_fixed_seed_ge_drops(capsys):
    lines, ok = [], True
    for l1 in (512, 65536):
        fixed = min(r.ge_percent for _, r in _curve(l1, FIXED_BUG))
        rand = min(r.ge_percent for _, r in _curve(l1, RANDOM_FIX))
        ok &= rand - fixed >= 10
        lines.append(f"l1={l1} fixed min {fixed:.1f}% vs random min {rand:.1f}% "
                     f"(gap {rand - fixed:.1f} pp)")
    report(capsys, 6, ok, "need gap >= 10 pp; " + "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_7_trace_counting(tmp_path, capsys):
    cfg = CFG.replace(mirage=MirageConfig(data_lines=1024))
    kp, kv = key_from_hex(cfg.profile_key), key_from_hex(cfg.victim_key)
    prof, _ = collect_dataset(cfg, kp, 500, FIXED_BUG, seed_fixed(1))
    _, paths = collect_dataset(cfg, kv, 6000, FIXED_BUG, seed_fixed(2), tmp_path, split=6,
                               prefix="victim")
    templates = profile_templates(prof, kp)
    buggy = ge_curve(templates, paths, 500, Counting.PER_FILE_BUGGY)[-1][0]
    good = ge_curve(templates, paths, 500, Counting.GLOBAL)[-1][0]
    ok = len(paths) == 6 and buggy == 3000 and good == 500
    report(capsys, 7, ok, f"6 files x 1000, max_traces=500: per-file-buggy used {buggy}, "
                          f"global used {good}")
    assert ok


# ---------------------------------------------------------------- 9-10

def test_criterion_9_aes_against_oracle(capsys):
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(1000):
        key, pt = rng.bytes(16), rng.bytes(16)
        bad += encrypt(expand_key(key), pt) != aes_ecb(key, pt)
    roundtrip = all(INV_SBOX[SBOX[b]] == b for b in range(256))
    ok = bad == 0 and roundtrip
    report(capsys, 9, ok, f"{1000 - bad}/1000 ciphertexts match, inverse S-box roundtrip {roundtrip}")
    assert ok


def test_criterion_10_l1_size_effect(capsys):
    _, llc512 = pair(512, FIXED_BUG)
    _, llc64k = pair(65536, FIXED_BUG)
    m512, m64k = float(np.mean(llc512)), float(np.mean(llc64k))
    # warmed tables in a 64 KiB L1, then a second encryption
    key = key_from_hex(CFG.victim_key)
    warm_events = []
    for pt in sample_plaintexts(50, seed=10):
        h = Hierarchy(MirageCache(CFG.mirage, derive_keys(CFG.index_seed), seed_fixed(42)),
                      L1Config(65536))
        h.run(table_lines(CFG), Owner.VICTIM)
        encrypt_traced(h, key, os.urandom(16))
        _, ev = encrypt_traced(h, key, pt)
        warm_events.append(sum(e.level is not Level.L1 for e in ev))
    ok = m512 > m64k and max(warm_events) == 0
    report(capsys, 10, ok, f"mean LLC-level victim events: l1=512 {m512:.1f} vs l1=64K {m64k:.1f}; "
                           f"warmed 64K second encryption max {max(warm_events)}")
    assert ok


# ---------------------------------------------------------------- 8 (runs last)

def test_criterion_8_structural_guarantees(capsys):
    # make sure the big experiments ran even when this test is selected alone
    for l1 in (512, 65536):
        for sm in (FIXED_BUG, RANDOM_FIX):
            pair(l1, sm)
    counts = eviction_counts(C, 1_000_000, seed=8)
    chi2 = float(((counts - counts.mean()) ** 2 / counts.mean()).sum())
    crit = float(stats.chi2.ppf(0.999, C - 1))
    ok = (LEDGER.installs >= 10**7 and LEDGER.sae == 0 and not LEDGER.violations
          and chi2 < crit)
    report(capsys, 8, ok, f"{LEDGER.traces} traces, {LEDGER.installs:.3g} installs, SAE={LEDGER.sae}, "
                          f"integrity violations={len(LEDGER.violations)}, eviction chi2={chi2:.0f} "
                          f"< {crit:.0f} over 1e6 evictions")
    assert ok
