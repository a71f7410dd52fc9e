"""AES-128 with T-table lookups routed through the simulated hierarchy.

Rounds 1-9 use the four classic 1 KiB tables T0-T3; round 10 reads a separate
256-entry S-box table with 4-byte entries. Every table is line-aligned, so
each table spans 16 cache lines of 16 entries.
"""

from dataclasses import dataclass

import numpy as np

from .hierarchy import AccessEvent, Hierarchy, Level
from .mirage import Owner


def _xtime(a):
    a <<= 1
    return (a ^ 0x11B) & 0xFF if a & 0x100 else a


def _gmul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _build_sbox():
    inv = [0] * 256
    for a in range(1, 256):
        for b in range(1, 256):
            if _gmul(a, b) == 1:
                inv[a] = b
                break
    box = []
    for x in range(256):
        b = inv[x]
        s = b
        for k in range(1, 5):
            s ^= ((b << k) | (b >> (8 - k))) & 0xFF
        box.append(s ^ 0x63)
    return box


SBOX = _build_sbox()
INV_SBOX = [0] * 256
for _i, _s in enumerate(SBOX):
    INV_SBOX[_s] = _i
del _i, _s

# T0[x] packs the MixColumns column (2s, s, s, 3s); T1-T3 are byte rotations
_T = [[0] * 256 for _ in range(4)]
for _x, _s in enumerate(SBOX):
    col = (_gmul(_s, 2), _s, _s, _gmul(_s, 3))
    for _r in range(4):
        c = col[-_r:] + col[:-_r] if _r else col
        _T[_r][_x] = (c[0] << 24) | (c[1] << 16) | (c[2] << 8) | c[3]
T0, T1, T2, T3 = _T
del _x, _s, _r, col, c

_RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)

LOOKUPS_PER_ENCRYPTION = 160


def sbox(b: int) -> int:
    return SBOX[b]


def inv_sbox(b: int) -> int:
    return INV_SBOX[b]


@dataclass(frozen=True)
class AesKey:
    key: bytes
    round_keys: tuple[bytes, ...]

    @property
    def last_round_key(self) -> bytes:
        return self.round_keys[10]


def expand_key(key: bytes) -> AesKey:
    key = bytes(key)
    if len(key) != 16:
        raise ValueError(f"AES-128 key must be 16 bytes, got {len(key)}")
    w = [list(key[4 * i:4 * i + 4]) for i in range(4)]
    for i in range(4, 44):
        t = list(w[i - 1])
        if i % 4 == 0:
            t = [SBOX[b] for b in t[1:] + t[:1]]
            t[0] ^= _RCON[i // 4 - 1]
        w.append([a ^ b for a, b in zip(w[i - 4], t)])
    rks = tuple(bytes(sum(w[4 * r:4 * r + 4], [])) for r in range(11))
    return AesKey(key, rks)


@dataclass(frozen=True)
class TableLayout:
    """Byte base addresses of the five lookup tables."""

    t_bases: tuple[int, int, int, int] = (0x40000000, 0x40000400, 0x40000800, 0x40000C00)
    sbox_base: int = 0x40001000
    entry_size: int = 4
    line_size: int = 64

    @property
    def entries_per_line(self) -> int:
        return self.line_size // self.entry_size

    def line_of(self, table: int, index: int) -> int:
        """Line address of entry ``index`` of table 0-3 (T0-T3) or 4 (S-box)."""
        base = self.sbox_base if table == 4 else self.t_bases[table]
        return (base + (index // self.entries_per_line) * self.line_size) // self.line_size

    def table_lines(self) -> list[int]:
        return [self.line_of(t, i) for t in range(5) for i in range(0, 256, self.entries_per_line)]

    def describe(self) -> str:
        return (f"T0-T3@{','.join(hex(b) for b in self.t_bases)} "
                f"sbox@{self.sbox_base:#x} entry={self.entry_size}B")


DEFAULT_LAYOUT = TableLayout()


def encrypt_lookups(key: AesKey, plaintext: bytes) -> tuple[bytes, list[tuple[int, int]]]:
    """Encrypt one block; also return every ``(table, index)`` lookup in issue order.

    State bytes are column-major (byte ``4c + r`` is row ``r`` of column ``c``).
    """
    rk = key.round_keys
    s = [p ^ k for p, k in zip(plaintext, rk[0])]
    lookups = []
    for rnd in range(1, 10):
        out = [0] * 16
        for c in range(4):
            idx = (s[4 * c], s[4 * ((c + 1) % 4) + 1], s[4 * ((c + 2) % 4) + 2], s[4 * ((c + 3) % 4) + 3])
            word = T0[idx[0]] ^ T1[idx[1]] ^ T2[idx[2]] ^ T3[idx[3]]
            lookups.extend(enumerate(idx))
            for r in range(4):
                out[4 * c + r] = ((word >> (24 - 8 * r)) & 0xFF) ^ rk[rnd][4 * c + r]
        s = out
    ct = [0] * 16
    for c in range(4):
        for r in range(4):
            x = s[4 * ((c + r) % 4) + r]
            lookups.append((4, x))
            ct[4 * c + r] = SBOX[x] ^ rk[10][4 * c + r]
    return bytes(ct), lookups


def encrypt(key: AesKey, plaintext: bytes) -> bytes:
    return encrypt_lookups(key, plaintext)[0]


def victim_lines(key: AesKey, plaintext: bytes, layout: TableLayout = DEFAULT_LAYOUT):
    """Ciphertext plus the 160 line addresses the encryption touches, in order."""
    ct, lookups = encrypt_lookups(key, plaintext)
    return ct, np.array([layout.line_of(t, i) for t, i in lookups], dtype=np.int64)


def encrypt_traced(hier: Hierarchy, key: AesKey, plaintext: bytes,
                   layout: TableLayout = DEFAULT_LAYOUT) -> tuple[bytes, list[AccessEvent]]:
    ct, lines = victim_lines(key, plaintext, layout)
    levels = hier.run(lines, Owner.VICTIM)
    lat = hier.latencies(levels)
    events = [AccessEvent(int(a), Owner.VICTIM, Level(int(lv)), int(t))
              for a, lv, t in zip(lines, levels, lat)]
    return ct, events
