"""Keyed randomized set indexing, one independent SipHash-2-4 key per skew."""

from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .prng import MASK64, seed_state

# ASCII "skew0idx" / "skew1idx"; separates the two derivations from one master seed
_LABELS = (0x736B657730696478, 0x736B657731696478)


@dataclass(frozen=True)
class IndexKey:
    skew_id: int
    k0: int
    k1: int

    @property
    def key_material(self) -> bytes:
        return self.k0.to_bytes(8, "little") + self.k1.to_bytes(8, "little")


def derive_keys(master_seed: int) -> tuple[IndexKey, IndexKey]:
    keys = []
    for skew, label in enumerate(_LABELS):
        state = np.zeros(4, dtype=np.uint64)
        seed_state(np.uint64((master_seed ^ label) & MASK64), state)
        keys.append(IndexKey(skew, int(state[0]), int(state[1])))
    return keys[0], keys[1]


@kernel
def _rotl(x, b):
    return (x << np.uint64(b)) | (x >> np.uint64(64 - b))


@kernel
def siphash24_u64(k0, k1, m):
    """SipHash-2-4 of the 8-byte little-endian encoding of ``m``."""
    v0 = k0 ^ np.uint64(0x736F6D6570736575)
    v1 = k1 ^ np.uint64(0x646F72616E646F6D)
    v2 = k0 ^ np.uint64(0x6C7967656E657261)
    v3 = k1 ^ np.uint64(0x7465646279746573)
    # one full message block, then the length block (8 << 56)
    last = np.uint64(8) << np.uint64(56)
    for blk in range(2):
        b = m if blk == 0 else last
        v3 ^= b
        for _ in range(2):
            v0 += v1
            v1 = _rotl(v1, 13)
            v1 ^= v0
            v0 = _rotl(v0, 32)
            v2 += v3
            v3 = _rotl(v3, 16)
            v3 ^= v2
            v0 += v3
            v3 = _rotl(v3, 21)
            v3 ^= v0
            v2 += v1
            v1 = _rotl(v1, 17)
            v1 ^= v2
            v2 = _rotl(v2, 32)
        v0 ^= b
    v2 ^= np.uint64(0xFF)
    for _ in range(4):
        v0 += v1
        v1 = _rotl(v1, 13)
        v1 ^= v0
        v0 = _rotl(v0, 32)
        v2 += v3
        v3 = _rotl(v3, 16)
        v3 ^= v2
        v0 += v3
        v3 = _rotl(v3, 21)
        v3 ^= v0
        v2 += v1
        v1 = _rotl(v1, 17)
        v1 ^= v2
        v2 = _rotl(v2, 32)
    return v0 ^ v1 ^ v2 ^ v3


@kernel
def index_of(k0, k1, line_addr, num_sets):
    h = siphash24_u64(k0, k1, np.uint64(line_addr))
    return np.int64(h & np.uint64(num_sets - 1))


@kernel
def _index_many(k0, k1, addrs, num_sets, out):
    for i in range(addrs.shape[0]):
        out[i] = index_of(k0, k1, addrs[i], num_sets)


def _check_sets(num_sets):
    if num_sets < 1 or num_sets & (num_sets - 1):
        raise ValueError(f"num_sets must be a power of two, got {num_sets}")


def set_index(key: IndexKey, line_addr: int, num_sets: int) -> int:
    _check_sets(num_sets)
    return int(index_of(np.uint64(key.k0), np.uint64(key.k1), np.int64(line_addr), num_sets))


def set_indices(key: IndexKey, line_addrs, num_sets: int) -> np.ndarray:
    """Vectorized ``set_index`` over an array of line addresses."""
    _check_sets(num_sets)
    addrs = np.ascontiguousarray(line_addrs, dtype=np.int64)
    out = np.empty(addrs.shape[0], dtype=np.int64)
    _index_many(np.uint64(key.k0), np.uint64(key.k1), addrs, num_sets, out)
    return out
