"""MIRAGE last-level cache model.

The tag store has two skews, each with ``sets_per_skew`` sets of
``base + extra`` ways, and holds 1.75x as many tag entries as there are data
lines (with the default 8+6 ways). Installs go to the indexed set with more
invalid tags; data-store victims are drawn uniformly from every line in the
cache. Tags point at data entries (FPTR) and data entries point back (RPTR).

Skew tie-breaks draw from their own stream, derived from the eviction seed.
Sharing one stream would make the position of every later eviction draw
depend on which addresses happened to tie.

All state lives in flat numpy arrays so that the kernels below compile under
numba. A tag entry id is ``(skew * sets_per_skew + set) * ways + way``.
"""

import enum
from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .prng import Rng, below, derive_stream
from .skew_index import IndexKey, index_of


class ConfigError(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


class Owner(enum.IntEnum):
    ATTACKER = 0
    VICTIM = 1
    OTHER = 2


class InstallKind(enum.IntEnum):
    FREE_FILL = 0
    GLOBAL_EVICTION = 1
    SET_ASSOCIATIVE_EVICTION = 2


# layout of the int64 stats vector shared with the kernels
OCCUPIED, FREE_HINT, N_FREE_FILLS, N_GLOBAL, N_SAE, N_INSTALLS, OWNER_BASE = range(7)
N_STATS = OWNER_BASE + len(Owner)


@dataclass(frozen=True)
class MirageConfig:
    line_size: int = 64
    data_lines: int = 16384
    base_ways_per_skew: int = 8
    extra_ways_per_skew: int = 6

    @property
    def ways(self) -> int:
        return self.base_ways_per_skew + self.extra_ways_per_skew

    @property
    def sets_per_skew(self) -> int:
        return self.data_lines // (2 * self.base_ways_per_skew)

    @property
    def tag_entries(self) -> int:
        return 2 * self.sets_per_skew * self.ways

    def validate(self):
        if self.line_size < 1 or self.line_size & (self.line_size - 1):
            raise ConfigError(f"line_size must be a power of two, got {self.line_size}")
        if self.base_ways_per_skew < 1 or self.extra_ways_per_skew < 0:
            raise ConfigError("need at least one base way and non-negative extra ways")
        if self.data_lines % (2 * self.base_ways_per_skew):
            raise ConfigError(
                f"data_lines={self.data_lines} is not a multiple of 2 x {self.base_ways_per_skew} ways")
        s = self.sets_per_skew
        if s < 1 or s & (s - 1):
            raise ConfigError(f"sets_per_skew={s} is not a power of two")


@dataclass(frozen=True)
class InstallOutcome:
    kind: InstallKind
    chosen_skew: int
    evicted_addr: int = -1
    evicted_owner: Owner | None = None


# ---------------------------------------------------------------- kernels


@kernel
def llc_find(tag_addr, sets, ways, s0, s1, addr):
    base = s0 * ways
    for w in range(ways):
        if tag_addr[base + w] == addr:
            return base + w
    base = (sets + s1) * ways
    for w in range(ways):
        if tag_addr[base + w] == addr:
            return base + w
    return -1


@kernel
def _drop_tag(tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, ways, t):
    d = tag_fptr[t]
    stats[OWNER_BASE + tag_owner[t]] -= 1
    set_valid[t // ways] -= 1
    tag_addr[t] = -1
    tag_fptr[t] = -1
    tag_owner[t] = -1
    data_rptr[d] = -1
    stats[OCCUPIED] -= 1
    if d < stats[FREE_HINT]:
        stats[FREE_HINT] = d
    return d


@kernel
def llc_global_evict(tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng, ways, lines):
    """Free a uniformly chosen data entry; returns ``(addr, owner)`` evicted."""
    d = np.int64(below(rng, lines))
    t = data_rptr[d]
    addr = tag_addr[t]
    owner = tag_owner[t]
    _drop_tag(tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, ways, t)
    stats[N_GLOBAL] += 1
    return addr, owner


@kernel
def llc_install(tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng, tb_rng,
                sets, ways, lines, s0, s1, addr, owner):
    """Install a missing line. Returns ``(kind, skew, evicted_addr, evicted_owner)``."""
    g0 = s0
    g1 = sets + s1
    free0 = ways - set_valid[g0]
    free1 = ways - set_valid[g1]
    kind = 0
    ev_addr = -1
    ev_owner = -1
    if free0 == 0 and free1 == 0:
        # both candidate sets full: a set-associative eviction
        kind = 2
        stats[N_SAE] += 1
        g = g0 if below(tb_rng, 2) == 0 else g1
        t = g * ways + np.int64(below(tb_rng, ways))
        ev_addr = tag_addr[t]
        ev_owner = tag_owner[t]
        _drop_tag(tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, ways, t)
    elif free0 > free1:
        g = g0
    elif free1 > free0:
        g = g1
    else:
        g = g0 if below(tb_rng, 2) == 0 else g1

    t = g * ways
    while tag_addr[t] != -1:
        t += 1

    if stats[OCCUPIED] == lines:
        ev_addr, ev_owner = llc_global_evict(
            tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng, ways, lines)
        kind = 1
    d = stats[FREE_HINT]
    while data_rptr[d] != -1:
        d += 1
    stats[FREE_HINT] = d + 1
    if kind == 0:
        stats[N_FREE_FILLS] += 1

    tag_addr[t] = addr
    tag_fptr[t] = d
    tag_owner[t] = owner
    data_rptr[d] = t
    set_valid[g] += 1
    stats[OCCUPIED] += 1
    stats[OWNER_BASE + owner] += 1
    stats[N_INSTALLS] += 1
    return kind, 0 if g < sets else 1, ev_addr, ev_owner


# ---------------------------------------------------------------- wrapper


class MirageCache:
    def __init__(self, config: MirageConfig, keys: tuple[IndexKey, IndexKey], eviction_rng: Rng,
                 tiebreak_rng: Rng | None = None):
        config.validate()
        self.config = config
        self.keys = keys
        self.rng = eviction_rng
        self.tiebreak_rng = tiebreak_rng or derive_stream(eviction_rng, "tiebreak")
        self.sets = config.sets_per_skew
        self.ways = config.ways
        self.lines = config.data_lines
        self.key_words = np.array([keys[0].k0, keys[0].k1, keys[1].k0, keys[1].k1], dtype=np.uint64)
        self.tag_addr = np.full(config.tag_entries, -1, dtype=np.int64)
        self.tag_fptr = np.full(config.tag_entries, -1, dtype=np.int64)
        self.tag_owner = np.full(config.tag_entries, -1, dtype=np.int64)
        self.set_valid = np.zeros(2 * self.sets, dtype=np.int64)
        self.data_rptr = np.full(self.lines, -1, dtype=np.int64)
        self.stats = np.zeros(N_STATS, dtype=np.int64)

    def indices(self, line_addr: int) -> tuple[int, int]:
        k = self.key_words
        return (int(index_of(k[0], k[1], np.int64(line_addr), self.sets)),
                int(index_of(k[2], k[3], np.int64(line_addr), self.sets)))

    def lookup(self, line_addr: int) -> bool:
        s0, s1 = self.indices(line_addr)
        return llc_find(self.tag_addr, self.sets, self.ways, s0, s1, line_addr) >= 0

    def install(self, line_addr: int, owner: Owner = Owner.OTHER) -> InstallOutcome:
        s0, s1 = self.indices(line_addr)
        if llc_find(self.tag_addr, self.sets, self.ways, s0, s1, line_addr) >= 0:
            raise ContractViolation(f"line {line_addr:#x} is already resident")
        kind, skew, ev_addr, ev_owner = llc_install(
            self.tag_addr, self.tag_fptr, self.tag_owner, self.set_valid, self.data_rptr,
            self.stats, self.rng.state, self.tiebreak_rng.state, self.sets, self.ways, self.lines,
            s0, s1, np.int64(line_addr), int(owner))
        return InstallOutcome(
            InstallKind(int(kind)), int(skew), int(ev_addr),
            Owner(int(ev_owner)) if ev_owner >= 0 else None)

    def global_evict(self) -> tuple[int, Owner]:
        if self.occupied < self.lines:
            raise ContractViolation("global eviction requires a full data store")
        addr, owner = llc_global_evict(
            self.tag_addr, self.tag_fptr, self.tag_owner, self.set_valid, self.data_rptr,
            self.stats, self.rng.state, self.ways, self.lines)
        return int(addr), Owner(int(owner))

    def occupancy_of(self, owner: Owner) -> int:
        return int(self.stats[OWNER_BASE + int(owner)])

    @property
    def occupied(self) -> int:
        return int(self.stats[OCCUPIED])

    @property
    def sae_count(self) -> int:
        return int(self.stats[N_SAE])

    @property
    def global_evictions(self) -> int:
        return int(self.stats[N_GLOBAL])

    @property
    def installs(self) -> int:
        return int(self.stats[N_INSTALLS])

    def copy(self) -> "MirageCache":
        """Independent deep copy, including both generator states."""
        dup = object.__new__(MirageCache)
        dup.__dict__.update(self.__dict__)
        for name in ("tag_addr", "tag_fptr", "tag_owner", "set_valid", "data_rptr", "stats"):
            setattr(dup, name, getattr(self, name).copy())
        dup.rng = _clone_rng(self.rng)
        dup.tiebreak_rng = _clone_rng(self.tiebreak_rng)
        return dup

    def check_integrity(self) -> list[str]:
        """Audit the FPTR/RPTR bijection and the bookkeeping counters.

        A broken pointer pair is reported once, from the data-entry side.
        """
        problems = []
        n_tags = self.tag_addr.size
        valid = self.tag_addr >= 0
        occ = self.data_rptr >= 0

        d_idx = np.flatnonzero(occ)
        rptr = self.data_rptr[d_idx]
        in_range = rptr < n_tags
        safe = np.where(in_range, rptr, 0)
        good = in_range & valid[safe] & (self.tag_fptr[safe] == d_idx)
        flagged = set()
        for d, t, ok_range in zip(d_idx[~good], rptr[~good], in_range[~good]):
            flagged.add(int(d))
            if not ok_range:
                problems.append(f"data {d}: rptr {t} out of range")
            elif not valid[t]:
                problems.append(f"data {d}: rptr {t} names an invalid tag")
            else:
                problems.append(f"data {d}: rptr {t} but tag {t} has fptr {self.tag_fptr[t]}")

        t_idx = np.flatnonzero(valid)
        fptr = self.tag_fptr[t_idx]
        f_range = (fptr >= 0) & (fptr < self.lines)
        f_safe = np.where(f_range, fptr, 0)
        t_good = f_range & (self.data_rptr[f_safe] == t_idx)
        for t, d, ok_range in zip(t_idx[~t_good], fptr[~t_good], f_range[~t_good]):
            if not ok_range:
                problems.append(f"tag {t}: fptr {d} out of range")
            elif int(d) not in flagged:
                problems.append(f"tag {t}: fptr {d} but data {d} has rptr {self.data_rptr[d]}")

        if t_idx.size != d_idx.size:
            problems.append(f"{t_idx.size} valid tags vs {d_idx.size} occupied data entries")
        if d_idx.size > self.lines:
            problems.append(f"occupied {d_idx.size} exceeds capacity {self.lines}")
        per_set = valid.reshape(2 * self.sets, self.ways).sum(axis=1)
        stale = np.flatnonzero(per_set != self.set_valid)
        if stale.size:
            problems.append(f"valid-tag counters stale for sets {stale[:8].tolist()}")
        if self.stats[OCCUPIED] != d_idx.size:
            problems.append(f"occupied counter {self.stats[OCCUPIED]} != {d_idx.size}")
        owners = np.bincount(self.tag_owner[t_idx], minlength=len(Owner)) if t_idx.size else np.zeros(len(Owner), int)
        for o in Owner:
            if owners[o] != self.occupancy_of(o):
                problems.append(f"owner {o.name} counter {self.occupancy_of(o)} != {owners[o]}")
        return problems


def _clone_rng(rng: Rng) -> Rng:
    dup = Rng(rng.origin_seed, rng.mode)
    dup.state[:] = rng.state
    return dup


def new_cache(config: MirageConfig, keys: tuple[IndexKey, IndexKey], eviction_rng: Rng,
              tiebreak_rng: Rng | None = None) -> MirageCache:
    return MirageCache(config, keys, eviction_rng, tiebreak_rng)
