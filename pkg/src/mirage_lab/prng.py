"""Seedable xoshiro256** generator with fixed and entropy seeding.

State expansion from a 64-bit seed uses SplitMix64, as recommended by the
xoshiro authors. Both algorithms are bit-exact on every platform, so a
recorded seed always replays the same stream.
"""

import enum
import os

import numpy as np

from ._jit import kernel

MASK64 = (1 << 64) - 1


class EntropyUnavailable(RuntimeError):
    """The entropy source returned a degenerate (repeating) value."""


class InvalidBound(ValueError):
    pass


class SeedKind(enum.Enum):
    FIXED = "fixed"
    ENTROPY = "entropy"


@kernel
def splitmix64_next(x):
    """Advance a SplitMix64 state; returns ``(new_state, output)`` as uint64."""
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x, z ^ (z >> np.uint64(31))


@kernel
def seed_state(seed, state):
    x = np.uint64(seed)
    for i in range(4):
        x, out = splitmix64_next(x)
        state[i] = out


@kernel
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@kernel
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@kernel
def below(s, n):
    """Uniform integer in ``[0, n)`` by rejection; ``n`` must be >= 1."""
    bound = np.uint64(n)
    # values below 2**64 mod n are rejected so the remaining range divides evenly
    threshold = (np.uint64(0) - bound) % bound
    while True:
        r = next_u64(s)
        if r >= threshold:
            return r % bound


@kernel
def below_many(s, n, out):
    for i in range(out.shape[0]):
        out[i] = below(s, n)


class Rng:
    """A xoshiro256** stream that remembers the seed it came from."""

    __slots__ = ("state", "origin_seed", "mode")

    def __init__(self, seed: int, mode: SeedKind = SeedKind.FIXED):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.origin_seed = int(seed)
        self.mode = mode
        self.state = np.zeros(4, dtype=np.uint64)
        seed_state(np.uint64(seed), self.state)

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def next_below(self, n: int) -> int:
        return next_below(self, n)

    def draws_below(self, n: int, count: int) -> np.ndarray:
        """``count`` consecutive ``next_below(n)`` values as an int64 array."""
        if not 1 <= n < 1 << 63:
            raise InvalidBound(f"bound must be in [1, 2**63), got {n}")
        out = np.empty(count, dtype=np.int64)
        below_many(self.state, np.uint64(n), out)
        return out

    def __repr__(self):
        return f"Rng(origin_seed={self.origin_seed}, mode={self.mode.value})"


def seed_fixed(seed: int) -> Rng:
    return Rng(seed, SeedKind.FIXED)


def _urandom_u64() -> int:
    return int.from_bytes(os.urandom(8), "little")


def seed_entropy(source=None) -> Rng:
    """Seed from the system entropy source.

    The source is sampled twice; identical samples mean it is stuck (some
    platforms hand back a deterministic "random" device), and running would
    silently reproduce fixed-seed behaviour, so we refuse.
    """
    source = source or _urandom_u64
    first, second = source() & MASK64, source() & MASK64
    if first == second:
        raise EntropyUnavailable(f"entropy source returned {first} twice in a row")
    return Rng(first, SeedKind.ENTROPY)


def derive_stream(rng: Rng, label: str) -> Rng:
    """An independent stream tied to ``rng``'s origin seed, separated by ``label``."""
    tag = int.from_bytes(label.encode()[:8].ljust(8, b"\0"), "little")
    state = np.zeros(4, dtype=np.uint64)
    seed_state(np.uint64(rng.origin_seed ^ tag), state)
    return Rng(int(state[0]), rng.mode)


def next_below(rng: Rng, n: int) -> int:
    if n < 1:
        raise InvalidBound(f"bound must be >= 1, got {n}")
    if n > MASK64:
        raise InvalidBound(f"bound must fit in 64 bits, got {n}")
    return int(below(rng.state, np.uint64(n)))
