"""Fast invariant checks run by ``mirage-lab selftest``."""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .aes_tt import INV_SBOX, SBOX, encrypt, expand_key
from .leakage_analysis import Counting, consume, guessing_entropy
from .mirage import MirageCache, MirageConfig
from .occupancy_attack import TraceRecord
from .prng import next_below, seed_fixed
from .skew_index import derive_keys, set_indices

ALPHA = 0.999


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    seconds: float = 0.0


@dataclass
class Report:
    results: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def lines(self):
        for r in self.results:
            yield f"[{'PASS' if r.ok else 'FAIL'}] {r.name} ({r.seconds:.1f}s) {r.detail}".rstrip()


def chi_square_uniform(counts) -> tuple[float, float]:
    """Statistic and the ALPHA critical value for equal expected counts."""
    counts = np.asarray(counts, dtype=np.float64)
    expected = counts.sum() / counts.size
    stat = float(((counts - expected) ** 2 / expected).sum())
    return stat, float(stats.chi2.ppf(ALPHA, counts.size - 1))


def check_prng(n=200_000, bound=97):
    rng = seed_fixed(7)
    draws = np.array([next_below(rng, bound) for _ in range(n)])
    stat, crit = chi_square_uniform(np.bincount(draws, minlength=bound))
    return stat < crit, f"chi2={stat:.1f} crit={crit:.1f}"


def check_skew_index(n=1 << 16, sets=1024):
    k0, k1 = derive_keys(2025)
    addrs = np.arange(n, dtype=np.int64) + 0x1000
    i0, i1 = set_indices(k0, addrs, sets), set_indices(k1, addrs, sets)
    s0, c0 = chi_square_uniform(np.bincount(i0, minlength=sets))
    s1, _ = chi_square_uniform(np.bincount(i1, minlength=sets))
    # independence on a coarsened 32x32 contingency table
    table = np.zeros((32, 32))
    np.add.at(table, (i0 % 32, i1 % 32), 1)
    _, p, _, _ = stats.chi2_contingency(table)
    ok = s0 < c0 and s1 < c0 and p > 1 - ALPHA
    return ok, f"chi2 skew0={s0:.0f} skew1={s1:.0f} crit={c0:.0f} independence p={p:.3f}"


def check_integrity_fuzz(lines=1024, steps=30_000, corrupt=False):
    cache = MirageCache(MirageConfig(data_lines=lines), derive_keys(11), seed_fixed(5))
    rng = np.random.default_rng(3)
    addrs = rng.integers(0, 8 * lines, size=steps)
    problems = []
    for i, a in enumerate(addrs):
        if not cache.lookup(int(a)):
            cache.install(int(a))
        if i % 5000 == 4999:
            problems += cache.check_integrity()
    if corrupt:
        occupied = np.flatnonzero(cache.data_rptr >= 0)
        cache.data_rptr[occupied[0]] = cache.data_rptr[occupied[1]]
    problems += cache.check_integrity()
    if cache.sae_count:
        problems.append(f"{cache.sae_count} set-associative evictions")
    detail = f"{cache.installs} installs, sae={cache.sae_count}"
    return not problems, detail + ("; " + "; ".join(problems[:3]) if problems else "")


def eviction_counts(lines: int, evictions: int, seed: int = 9) -> np.ndarray:
    """Evict-and-refill on a full cache; counts per resident address."""
    cache = MirageCache(MirageConfig(data_lines=lines), derive_keys(13), seed_fixed(seed))
    for a in range(lines):
        cache.install(a)
    counts = np.zeros(lines, dtype=np.int64)
    for _ in range(evictions):
        addr, _owner = cache.global_evict()
        counts[addr] += 1
        cache.install(addr)
    return counts


def check_eviction_uniformity(lines=256, evictions=100_000):
    stat, crit = chi_square_uniform(eviction_counts(lines, evictions))
    return stat < crit, f"chi2={stat:.1f} crit={crit:.1f} over {evictions} evictions"


def check_aes():
    key = expand_key(bytes(range(16)))
    ct = encrypt(key, bytes.fromhex("00112233445566778899aabbccddeeff"))
    rk = expand_key(bytes(16)).last_round_key
    ok = (ct.hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"
          and rk.hex() == "b4ef5bcb3e92e21123e951cf6f8f188e"
          and all(INV_SBOX[SBOX[b]] == b for b in range(256)))
    return ok, f"ct={ct.hex()}"


def check_ge_identities():
    ok = (guessing_entropy([1] * 16).ge_bits == 0
          and guessing_entropy([256] * 16).ge_bits == 128
          and guessing_entropy([2] * 16).ge_bits == 16)
    rec = TraceRecord(bytes(16), bytes(16), 0, 0)
    files = [[rec] * 1000 for _ in range(6)]
    buggy = len(consume(files, 500, Counting.PER_FILE_BUGGY))
    good = len(consume(files, 500, Counting.GLOBAL))
    return ok and buggy == 3000 and good == 500, f"per-file={buggy} global={good}"


def run_selftest(inject_corruption=False) -> Report:
    checks = [
        ("prng uniformity", check_prng),
        ("skew index uniformity/independence", check_skew_index),
        ("cache integrity fuzz", lambda: check_integrity_fuzz(corrupt=inject_corruption)),
        ("global eviction uniformity", check_eviction_uniformity),
        ("aes oracle vectors", check_aes),
        ("guessing entropy identities", check_ge_identities),
    ]
    report = Report()
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        report.results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return report
