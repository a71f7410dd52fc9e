"""Private L1 in front of the MIRAGE LLC, with a fixed per-level latency.

The hierarchy is non-inclusive: filling L1 leaves the LLC copy in place, and
an LLC global eviction does not back-invalidate L1.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from ._jit import kernel
from .mirage import MirageCache, Owner, llc_find, llc_install
from .skew_index import index_of


class Level(enum.IntEnum):
    L1 = 0
    LLC = 1
    MEMORY = 2


@dataclass(frozen=True)
class L1Config:
    size: int = 512
    ways: int = 8
    line_size: int = 64

    @property
    def lines(self) -> int:
        return self.size // self.line_size

    @property
    def effective_ways(self) -> int:
        return min(self.ways, self.lines)

    @property
    def sets(self) -> int:
        return self.lines // self.effective_ways

    def validate(self):
        if self.lines < 1 or self.size % self.line_size:
            raise ValueError(f"L1 size {self.size} is not a positive multiple of {self.line_size}-byte lines")
        s = self.sets
        if s & (s - 1) or self.lines % self.effective_ways:
            raise ValueError(f"L1 geometry {self.size}B/{self.ways}-way gives {s} sets; need a power of two")


@dataclass(frozen=True)
class LatencyModel:
    l1_hit: int = 1
    llc_hit: int = 20
    memory: int = 200

    def __post_init__(self):
        if not 0 <= self.l1_hit < self.llc_hit < self.memory:
            raise ValueError("latencies must satisfy l1_hit < llc_hit < memory")

    def as_array(self) -> np.ndarray:
        return np.array([self.l1_hit, self.llc_hit, self.memory], dtype=np.int64)


@dataclass(frozen=True)
class AccessEvent:
    line_addr: int
    actor: Owner
    level: Level
    latency: int


@kernel
def l1_touch(l1_addr, l1_stamp, clock, sets, ways, addr):
    """LRU lookup-or-fill; returns True on hit."""
    clock[0] += 1
    base = (addr & (sets - 1)) * ways
    victim = base
    for w in range(base, base + ways):
        if l1_addr[w] == addr:
            l1_stamp[w] = clock[0]
            return True
        if l1_stamp[w] < l1_stamp[victim]:
            victim = w
    l1_addr[victim] = addr
    l1_stamp[victim] = clock[0]
    return False


@kernel
def access_one(l1_addr, l1_stamp, clock, l1_sets, l1_ways,
               tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng, tb_rng, keys,
               sets, ways, lines, addr, owner):
    if l1_touch(l1_addr, l1_stamp, clock, l1_sets, l1_ways, addr):
        return 0
    s0 = index_of(keys[0], keys[1], addr, sets)
    s1 = index_of(keys[2], keys[3], addr, sets)
    if llc_find(tag_addr, sets, ways, s0, s1, addr) >= 0:
        return 1
    llc_install(tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng, tb_rng,
                sets, ways, lines, s0, s1, addr, owner)
    return 2


@kernel
def access_many(l1_addr, l1_stamp, clock, l1_sets, l1_ways,
                tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng, tb_rng, keys,
                sets, ways, lines, addrs, owner, levels):
    for i in range(addrs.shape[0]):
        levels[i] = access_one(l1_addr, l1_stamp, clock, l1_sets, l1_ways,
                               tag_addr, tag_fptr, tag_owner, set_valid, data_rptr, stats, rng,
                               tb_rng, keys, sets, ways, lines, addrs[i], owner)


class Hierarchy:
    def __init__(self, llc: MirageCache, l1: L1Config = L1Config(),
                 latency: LatencyModel = LatencyModel()):
        l1.validate()
        self.llc = llc
        self.l1_config = l1
        self.latency = latency
        self._lat = latency.as_array()
        self.l1_sets = l1.sets
        self.l1_ways = l1.effective_ways
        self.l1_addr = np.full(l1.sets * self.l1_ways, -1, dtype=np.int64)
        self.l1_stamp = np.zeros(l1.sets * self.l1_ways, dtype=np.int64)
        self.clock = np.zeros(1, dtype=np.int64)

    def _args(self):
        c = self.llc
        return (self.l1_addr, self.l1_stamp, self.clock, self.l1_sets, self.l1_ways,
                c.tag_addr, c.tag_fptr, c.tag_owner, c.set_valid, c.data_rptr, c.stats,
                c.rng.state, c.tiebreak_rng.state, c.key_words, c.sets, c.ways, c.lines)

    def access(self, line_addr: int, actor: Owner = Owner.OTHER) -> AccessEvent:
        level = Level(int(access_one(*self._args(), np.int64(line_addr), int(actor))))
        return AccessEvent(int(line_addr), Owner(actor), level, int(self._lat[level]))

    def run(self, line_addrs, actor: Owner = Owner.OTHER) -> np.ndarray:
        """Access a sequence of lines in order; returns the level of each access."""
        addrs = np.ascontiguousarray(line_addrs, dtype=np.int64)
        levels = np.empty(addrs.shape[0], dtype=np.int64)
        access_many(*self._args(), addrs, int(actor), levels)
        return levels

    def latencies(self, levels: np.ndarray) -> np.ndarray:
        return self._lat[levels]

    def copy(self) -> "Hierarchy":
        dup = Hierarchy(self.llc.copy(), self.l1_config, self.latency)
        dup.l1_addr[:] = self.l1_addr
        dup.l1_stamp[:] = self.l1_stamp
        dup.clock[:] = self.clock
        return dup

    def reset_l1(self):
        self.l1_addr.fill(-1)
        self.l1_stamp.fill(0)
