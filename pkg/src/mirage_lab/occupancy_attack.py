"""Occupancy attack driver: one fresh simulated system per AES encryption.

Each trace runs, in order:

1. ``warm``       the victim touches every line of its lookup tables once, so
                  the tables are LLC-resident when the attack starts
2. ``background`` other processes fill the rest of the LLC to capacity
3. ``prime``      the attacker walks an array of ``C/2`` lines
4. ``victim``     one AES encryption
5. ``probe``      the attacker walks its array again; the summed latency is
                  the observation

L1 is flushed between phases. With the eviction seed fixed, steps 1-3 give the
same state every time, so that state is simulated once and copied.
"""

import logging
import multiprocessing
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aes_tt import DEFAULT_LAYOUT, AesKey, encrypt, expand_key, victim_lines
from .config import ExperimentConfig, SeedMode
from .hierarchy import Hierarchy
from .mirage import MirageCache, Owner
from .prng import EntropyUnavailable, Rng, seed_entropy, seed_fixed
from .skew_index import derive_keys

log = logging.getLogger(__name__)

FORMAT_TAG = "mirage-occupancy-lab v1"

# line addresses of the attacker array and of background traffic
ATTACKER_BASE = 0x10000000 // 64
OTHER_BASE = 0x20000000 // 64


class ParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


@dataclass(frozen=True)
class TraceRecord:
    plaintext: bytes
    ciphertext: bytes
    probe_cycles: int
    eviction_seed: int
    seed_mode: str = "fixed:42"
    l1_size: int = 512

    def to_line(self) -> str:
        return f"{self.plaintext.hex()},{self.ciphertext.hex()},{self.probe_cycles},{self.eviction_seed}"


@dataclass
class PhaseStats:
    """Per-trace instrumentation; kept out of the trace file."""

    victim_levels: np.ndarray
    probe_levels: np.ndarray
    cache: MirageCache


def attacker_lines(cfg: ExperimentConfig) -> np.ndarray:
    return ATTACKER_BASE + np.arange(cfg.attacker_lines, dtype=np.int64)


def table_lines(cfg: ExperimentConfig) -> np.ndarray:
    return np.array(DEFAULT_LAYOUT.table_lines(), dtype=np.int64)


def eviction_rng(seed_mode: SeedMode, entropy_source=None) -> Rng:
    if seed_mode.kind == "fixed":
        return seed_fixed(seed_mode.seed)
    return seed_entropy(entropy_source)


def new_system(cfg: ExperimentConfig, rng: Rng) -> Hierarchy:
    llc = MirageCache(cfg.mirage, derive_keys(cfg.index_seed), rng)
    return Hierarchy(llc, cfg.l1, cfg.latency)


def prepare(cfg: ExperimentConfig, rng: Rng) -> Hierarchy:
    """Fresh system taken through warm, background and prime."""
    hier = new_system(cfg, rng)
    warm = 0
    if cfg.warm_tables:
        lines = table_lines(cfg)
        hier.run(lines, Owner.VICTIM)
        warm = lines.size
    if cfg.background_fill:
        n_other = max(cfg.mirage.data_lines - warm, 0)
        hier.run(OTHER_BASE + np.arange(n_other, dtype=np.int64), Owner.OTHER)
    hier.reset_l1()
    hier.run(attacker_lines(cfg), Owner.ATTACKER)
    hier.reset_l1()
    return hier


_primed: dict = {}


def _primed_fixed(cfg: ExperimentConfig, seed: int) -> Hierarchy:
    key = (cfg.mirage, cfg.l1, cfg.latency, cfg.index_seed, cfg.attacker_fraction,
           cfg.background_fill, cfg.warm_tables, seed)
    hier = _primed.get(key)
    if hier is None:
        if len(_primed) > 8:
            _primed.clear()
        hier = _primed[key] = prepare(cfg, seed_fixed(seed))
    return hier.copy()


def run_trace(cfg: ExperimentConfig, key: AesKey, plaintext: bytes, seed_mode: SeedMode,
              entropy_source=None) -> tuple[TraceRecord, PhaseStats]:
    """Like ``collect_trace`` but also returns per-phase instrumentation."""
    plaintext = bytes(plaintext)
    if seed_mode.kind == "fixed":
        hier = _primed_fixed(cfg, seed_mode.seed)
    else:
        hier = prepare(cfg, eviction_rng(seed_mode, entropy_source))
    ct, lines = victim_lines(key, plaintext)
    victim_levels = hier.run(lines, Owner.VICTIM)
    hier.reset_l1()
    probe_levels = hier.run(attacker_lines(cfg), Owner.ATTACKER)
    cycles = int(hier.latencies(probe_levels).sum())
    rec = TraceRecord(plaintext, ct, cycles, hier.llc.rng.origin_seed, seed_mode.tag, cfg.l1_size)
    return rec, PhaseStats(victim_levels, probe_levels, hier.llc)


def collect_trace(cfg: ExperimentConfig, key: AesKey, plaintext: bytes, seed_mode: SeedMode,
                  entropy_source=None) -> TraceRecord:
    return run_trace(cfg, key, plaintext, seed_mode, entropy_source)[0]


def random_plaintext(rng: Rng) -> bytes:
    return rng.next_u64().to_bytes(8, "little") + rng.next_u64().to_bytes(8, "little")


def _trace_job(args):
    cfg, key, pt, seed_mode = args
    return collect_trace(cfg, key, pt, seed_mode)


def header_line(cfg: ExperimentConfig, key: AesKey, part: int = 1, parts: int = 1) -> str:
    return (f"# {FORMAT_TAG} {cfg.header_fields()} key={key.key.hex()} "
            f"layout={DEFAULT_LAYOUT.describe().replace(' ', ';')} part={part}/{parts} "
            f"config={cfg.to_json()}")


def write_trace_file(path, cfg: ExperimentConfig, key: AesKey, records, part=1, parts=1):
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header_line(cfg, key, part, parts) + "\n")
            for rec in records:
                fh.write(rec.to_line() + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace file {path}: {exc.strerror or exc}") from exc
    return path


def parse_header(line: str) -> dict:
    fields = {}
    body = line.lstrip("#").strip()
    if not body.startswith(FORMAT_TAG):
        raise ValueError(f"not a {FORMAT_TAG} header")
    body = body[len(FORMAT_TAG):].strip()
    head, sep, cfg_json = body.partition("config=")
    for tok in head.split():
        k, _, v = tok.partition("=")
        fields[k] = v
    if sep:
        fields["config"] = cfg_json
    return fields


def read_trace_file(path) -> tuple[dict, list[TraceRecord]]:
    """Parse one trace file; raises ``ParseError`` naming file and line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read: {exc.strerror or exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ParseError(path, 1, "missing '#' header line")
    try:
        header = parse_header(lines[0])
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from exc
    mode = header.get("seed_mode", "")
    l1 = int(header.get("l1", 0) or 0)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(parts)}")
        pt, ct, cycles, seed = parts
        try:
            if len(pt) != 32 or len(ct) != 32:
                raise ValueError("plaintext and ciphertext must be 32 hex chars")
            rec = TraceRecord(bytes.fromhex(pt), bytes.fromhex(ct), int(cycles), int(seed), mode, l1)
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from exc
        if rec.probe_cycles < 0 or not 0 <= rec.eviction_seed < 1 << 64:
            raise ParseError(path, lineno, "negative cycles or seed out of 64-bit range")
        records.append(rec)
    return header, records


def verify_records(key: AesKey, records) -> list[int]:
    """Indices of records whose ciphertext is not AES(key, plaintext)."""
    return [i for i, r in enumerate(records) if encrypt(key, r.plaintext) != r.ciphertext]


def collect_dataset(cfg: ExperimentConfig, key: AesKey, n_traces: int, seed_mode: SeedMode,
                    plaintext_rng: Rng, out_dir=None, split: int = 1, prefix: str = "traces",
                    jobs: int = 1) -> tuple[list[TraceRecord], list[Path]]:
    """Collect ``n_traces`` records, optionally written as ``split`` files."""
    if n_traces < 1:
        raise ValueError("n_traces must be >= 1")
    if not 1 <= split <= n_traces:
        raise ValueError(f"split must be between 1 and n_traces, got {split}")
    plaintexts = [random_plaintext(plaintext_rng) for _ in range(n_traces)]
    work = [(cfg, key, pt, seed_mode) for pt in plaintexts]
    if jobs > 1:
        ctx = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
        with ctx.Pool(jobs) as pool:
            records = pool.map(_trace_job, work, chunksize=max(1, n_traces // (4 * jobs)))
    else:
        records = [_trace_job(w) for w in work]
    if seed_mode.kind == "random":
        seeds = [r.eviction_seed for r in records]
        if len(set(seeds)) != len(seeds):
            raise EntropyUnavailable("entropy source repeated an eviction seed across traces")
    paths = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        chunks = np.array_split(np.arange(n_traces), split)
        for i, idx in enumerate(chunks, start=1):
            name = f"{prefix}.csv" if split == 1 else f"{prefix}.{i}.csv"
            paths.append(write_trace_file(out_dir / name, cfg, key,
                                          [records[j] for j in idx], i, split))
        log.info("wrote %d traces to %d file(s) under %s", n_traces, split, out_dir)
    return records, paths


def key_from_hex(text: str) -> AesKey:
    return expand_key(bytes.fromhex(text))
