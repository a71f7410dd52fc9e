"""Last-round templates, key-byte ranking, guessing entropy and figure data.

Traces are binned by the last-round table entry they imply for one ciphertext
byte: ``K xor CT`` (``xor`` mode) or ``InvSbox(K xor CT)`` (``sbox`` mode).
A profiled template from a known key is matched against the template every
key-byte guess induces on victim traces, by Pearson correlation.
"""

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aes_tt import INV_SBOX, AesKey
from .occupancy_attack import ParseError, TraceRecord, read_trace_file

_INV = np.array(INV_SBOX, dtype=np.int64)

MIN_OVERLAP = 8


class BinMode(enum.Enum):
    XOR_ONLY = "xor"
    SBOX_INV = "sbox"

    @classmethod
    def parse(cls, text) -> "BinMode":
        return text if isinstance(text, cls) else cls(str(text).lower())


class DegenerateTemplate(ValueError):
    """Correlation is undefined: a template is constant over the shared bins."""


class InvalidRank(ValueError):
    pass


class Counting(enum.Enum):
    GLOBAL = "global"
    PER_FILE_BUGGY = "per-file-buggy"


@dataclass
class TraceSet:
    """Column view of trace records: ciphertexts (N x 16) and probe cycles."""

    cts: np.ndarray
    cycles: np.ndarray

    @classmethod
    def from_records(cls, records) -> "TraceSet":
        records = list(records)
        cts = np.frombuffer(b"".join(r.ciphertext for r in records), dtype=np.uint8)
        return cls(cts.reshape(-1, 16).astype(np.int64),
                   np.array([r.probe_cycles for r in records], dtype=np.float64))

    def __len__(self):
        return self.cycles.shape[0]

    def head(self, n: int) -> "TraceSet":
        return TraceSet(self.cts[:n], self.cycles[:n])


def _as_traceset(traces) -> TraceSet:
    return traces if isinstance(traces, TraceSet) else TraceSet.from_records(traces)


def bin_index(key_byte: int, ct_byte: int, mode=BinMode.XOR_ONLY) -> int:
    b = (key_byte ^ ct_byte) & 0xFF
    return INV_SBOX[b] if BinMode.parse(mode) is BinMode.SBOX_INV else b


def _bins(key_byte, ct_col, mode):
    b = np.bitwise_xor(key_byte, ct_col)
    return _INV[b] if mode is BinMode.SBOX_INV else b


@dataclass
class Template:
    byte_pos: int
    means: np.ndarray
    counts: np.ndarray

    @property
    def populated(self) -> np.ndarray:
        return self.counts > 0


def build_template(traces, last_round_key_byte: int, byte_pos: int,
                   mode=BinMode.XOR_ONLY) -> Template:
    ts = _as_traceset(traces)
    if len(ts) == 0:
        raise ValueError("cannot build a template from zero traces")
    bins = _bins(last_round_key_byte, ts.cts[:, byte_pos], BinMode.parse(mode))
    counts = np.bincount(bins, minlength=256)
    sums = np.bincount(bins, weights=ts.cycles, minlength=256)
    means = np.full(256, np.nan)
    np.divide(sums, counts, out=means, where=counts > 0)
    return Template(byte_pos, means, counts)


def correlate(a: Template, b: Template) -> float:
    """Pearson correlation over bins populated in both templates."""
    both = a.populated & b.populated
    if both.sum() < MIN_OVERLAP:
        raise DegenerateTemplate(f"only {both.sum()} overlapping bins")
    x, y = a.means[both], b.means[both]
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateTemplate("template is constant over the overlapping bins")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class Ranking:
    byte_pos: int
    order: np.ndarray
    scores: np.ndarray
    true_rank: int | None = None


def guess_scores(profiled: Template, victim, byte_pos: int, mode=BinMode.XOR_ONLY) -> np.ndarray:
    """Correlation score of all 256 guesses; degenerate guesses score ``-inf``."""
    mode = BinMode.parse(mode)
    ts = _as_traceset(victim)
    ct = ts.cts[:, byte_pos]
    guesses = np.arange(256)[:, None]
    bins = _bins(guesses, ct[None, :], mode)
    flat = (guesses * 256 + bins).ravel()
    counts = np.bincount(flat, minlength=65536).reshape(256, 256)
    sums = np.bincount(flat, weights=np.tile(ts.cycles, 256), minlength=65536).reshape(256, 256)

    mask = (counts > 0) & profiled.populated[None, :]
    n = mask.sum(axis=1)
    gm = np.where(mask, sums / np.maximum(counts, 1), 0.0)
    pm = np.where(mask, np.nan_to_num(profiled.means)[None, :], 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = gm.sum(axis=1) / n
        my = pm.sum(axis=1) / n
        dx = np.where(mask, gm - mx[:, None], 0.0)
        dy = np.where(mask, pm - my[:, None], 0.0)
        sxx = (dx * dx).sum(axis=1)
        syy = (dy * dy).sum(axis=1)
        r = (dx * dy).sum(axis=1) / np.sqrt(sxx * syy)
    # relative threshold: a constant template leaves only rounding residue
    flat_x = sxx <= 1e-18 * np.maximum(1.0, (gm * gm).sum(axis=1))
    flat_y = syy <= 1e-18 * np.maximum(1.0, (pm * pm).sum(axis=1))
    bad = (n < MIN_OVERLAP) | flat_x | flat_y | ~np.isfinite(r)
    return np.where(bad, -np.inf, r)


def rank_key_byte(profiled: Template, victim, byte_pos: int, mode=BinMode.XOR_ONLY,
                  true_key_byte: int | None = None) -> Ranking:
    scores = guess_scores(profiled, victim, byte_pos, mode)
    # descending score, ties by ascending guess
    order = np.lexsort((np.arange(256), -scores))
    true_rank = None
    if true_key_byte is not None:
        true_rank = int(np.flatnonzero(order == true_key_byte)[0]) + 1
    return Ranking(byte_pos, order, scores, true_rank)


@dataclass(frozen=True)
class GEReport:
    ranks: tuple[int, ...]
    ge_bits: float
    ge_percent: float
    traces_used: int = 0


def guessing_entropy(ranks, traces_used: int = 0) -> GEReport:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 16:
        raise InvalidRank(f"need 16 ranks, got {len(ranks)}")
    for r in ranks:
        if not 1 <= r <= 256:
            raise InvalidRank(f"rank {r} outside 1..256")
    bits = float(np.log2(np.array(ranks, dtype=np.float64)).sum())
    return GEReport(ranks, bits, bits / 128 * 100, traces_used)


def profile_templates(traces, key: AesKey, mode=BinMode.XOR_ONLY) -> list[Template]:
    ts = _as_traceset(traces)
    k10 = key.last_round_key
    return [build_template(ts, k10[i], i, mode) for i in range(16)]


def evaluate(profiled: list[Template], victim, true_key: AesKey, mode=BinMode.XOR_ONLY) -> GEReport:
    ts = _as_traceset(victim)
    k10 = true_key.last_round_key
    ranks = [rank_key_byte(profiled[i], ts, i, mode, k10[i]).true_rank for i in range(16)]
    return guessing_entropy(ranks, len(ts))


def consume(files: list[list[TraceRecord]], max_traces: int, counting=Counting.GLOBAL) -> list[TraceRecord]:
    """Apply the trace budget across files in order.

    ``per-file-buggy`` reproduces a counter that restarts in every file, so each
    file contributes up to ``max_traces`` records.
    """
    if max_traces < 1:
        raise ValueError("max_traces must be >= 1")
    counting = Counting(counting) if not isinstance(counting, Counting) else counting
    used = []
    if counting is Counting.PER_FILE_BUGGY:
        for recs in files:
            used.extend(recs[:max_traces])
    else:
        for recs in files:
            room = max_traces - len(used)
            if room <= 0:
                break
            used.extend(recs[:room])
    return used


def load_files(paths) -> tuple[list[dict], list[list[TraceRecord]]]:
    headers, files = [], []
    for p in paths:
        h, recs = read_trace_file(p)
        headers.append(h)
        files.append(recs)
    return headers, files


def ge_curve(profiled: list[Template], victim_files, max_traces: int, counting=Counting.GLOBAL,
             true_key: AesKey | None = None, mode=BinMode.XOR_ONLY,
             step: int | None = None) -> list[tuple[int, GEReport]]:
    """GE at budgets ``step, 2*step, ..., max_traces`` under the counting rule.

    ``victim_files`` is an ordered list of paths or of already-parsed record
    lists. Without ``true_key`` the key from the first file header is used.
    """
    files = []
    for f in victim_files:
        if isinstance(f, (str, Path)):
            header, recs = read_trace_file(f)
            if true_key is None and "key" in header:
                try:
                    from .occupancy_attack import key_from_hex
                    true_key = key_from_hex(header["key"])
                except ValueError as exc:
                    raise ParseError(f, 1, f"bad key field: {exc}") from exc
            files.append(recs)
        else:
            files.append(list(f))
    if true_key is None:
        raise ValueError("true victim key unknown: pass true_key or use files with a key header")
    step = step or max_traces
    budgets = list(range(step, max_traces, step)) + [max_traces]
    curve = []
    for b in budgets:
        used = consume(files, b, counting)
        report = evaluate(profiled, used, true_key, mode)
        curve.append((len(used), report))
    return curve


def heatmap(templates: list[Template]) -> np.ndarray:
    """16x16 grid of bin means averaged over byte positions; NaN where empty."""
    if len(templates) != 16:
        raise ValueError(f"need 16 templates, got {len(templates)}")
    stack = np.stack([t.means for t in templates])
    present = ~np.isnan(stack)
    total = np.where(present, stack, 0.0).sum(axis=0)
    n = present.sum(axis=0)
    out = np.full(256, np.nan)
    np.divide(total, n, out=out, where=n > 0)
    return out.reshape(16, 16)


def heatmap_correlation(a: np.ndarray, b: np.ndarray) -> float:
    both = ~np.isnan(a) & ~np.isnan(b)
    x, y = a[both], b[both]
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class Histogram:
    edges: np.ndarray
    counts: dict


def timing_histogram(groups: dict, bins: int = 64) -> Histogram:
    """Histograms of probe cycles per group over one shared set of equal-width bins."""
    if not groups:
        raise ValueError("need at least one group")
    pooled = np.concatenate([np.asarray(v, dtype=np.float64) for v in groups.values()])
    lo, hi = float(pooled.min()), float(pooled.max())
    edges = np.array([lo, lo + 1.0]) if hi == lo else np.linspace(lo, hi, bins + 1)
    counts = {g: np.histogram(np.asarray(v, dtype=np.float64), bins=edges)[0]
              for g, v in groups.items()}
    return Histogram(edges, counts)


def group_by_plaintext(records) -> dict:
    groups: dict = {}
    for r in records:
        groups.setdefault(r.plaintext.hex(), []).append(r.probe_cycles)
    return groups


# ---------------------------------------------------------------- CSV output


def _fmt(v) -> str:
    return "" if np.isnan(v) else f"{v:.6g}" if abs(v) < 1e6 else f"{v:.3f}"


def write_heatmap_csv(path, grid: np.ndarray, meta: str = ""):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# heatmap 16x16 mean probe cycles {meta}".rstrip() + "\n")
        for row in grid:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_heatmap_csv(path) -> np.ndarray:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([[float(x) if x else np.nan for x in ln.split(",")] for ln in rows])


def write_ge_csv(path, curve, meta: str = ""):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# ge curve {meta}".rstrip() + "\n")
        fh.write("traces_used,ge_bits,ge_percent\n")
        for used, rep in curve:
            fh.write(f"{used},{rep.ge_bits:.4f},{rep.ge_percent:.4f}\n")


def write_histogram_csv(path, hist: Histogram, meta: str = ""):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# histogram {meta}".rstrip() + "\n")
        fh.write("group,bin_lo,bin_hi,count\n")
        for g, counts in hist.counts.items():
            for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], counts):
                fh.write(f"{g},{lo:.1f},{hi:.1f},{int(c)}\n")
