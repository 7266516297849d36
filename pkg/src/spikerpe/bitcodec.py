"""Reflected binary Gray codes and Hamming distances over fixed-width words."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class GrayWord:
    """Fixed-width bit vector, least-significant bit at index 0."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) == 0:
            raise ValueError("GrayWord needs at least one bit")
        if any(v not in (0, 1) for v in self.bits):
            raise ValueError(f"bits must be 0/1, got {self.bits}")

    @property
    def width(self) -> int:
        return len(self.bits)

    @property
    def value(self) -> int:
        return sum(v << i for i, v in enumerate(self.bits))

    @classmethod
    def from_int(cls, value: int, width: int) -> GrayWord:
        if value < 0 or value >= (1 << width):
            raise ValueError(f"{value} does not fit in {width} bits")
        return cls(tuple((value >> i) & 1 for i in range(width)))

    @classmethod
    def from_string(cls, s: str) -> GrayWord:
        """Parse an MSB-first 0/1 string, e.g. ``"1011"``."""
        return cls(tuple(int(c) for c in reversed(s)))

    def to_string(self) -> str:
        """MSB-first 0/1 string."""
        return "".join(str(v) for v in reversed(self.bits))

    def __str__(self) -> str:
        return self.to_string()


def min_bits(length: int) -> int:
    """Smallest width giving every position in [0, length) a distinct word."""
    return max(1, math.ceil(math.log2(max(length, 2))))


def gray_map(x):
    """Binary-reflected Gray map x -> x XOR (x >> 1); ints or integer arrays."""
    return x ^ (x >> 1)


def gray_encode(x: int, b: int) -> GrayWord:
    if b < 1:
        raise ValueError(f"bit-width must be positive, got {b}")
    if not 0 <= x < (1 << b):
        raise ValueError(f"position {x} out of range for {b} bits")
    return GrayWord.from_int(gray_map(x), b)


def gray_decode(g: GrayWord) -> int:
    v = g.value
    x = 0
    while v:
        x ^= v
        v >>= 1
    return x


def hamming_distance(a, b) -> int:
    """Number of differing positions between two equal-width bit vectors.

    Accepts GrayWords or any 0/1 sequences.
    """
    a_bits = a.bits if isinstance(a, GrayWord) else tuple(int(v) for v in a)
    b_bits = b.bits if isinstance(b, GrayWord) else tuple(int(v) for v in b)
    if len(a_bits) != len(b_bits):
        raise DimensionError(f"width mismatch: {len(a_bits)} vs {len(b_bits)}")
    return sum(x != y for x, y in zip(a_bits, b_bits))


def gray_codes(length: int, b: int | None = None) -> np.ndarray:
    """Integer Gray codes G(0..length-1); raises if they do not fit in b bits."""
    if b is None:
        b = min_bits(length)
    if (1 << b) < length:
        raise ConfigError(f"{b} bits cannot give {length} positions distinct Gray words")
    return gray_map(np.arange(length, dtype=np.int64))


def gray_bits(length: int, b: int | None = None) -> np.ndarray:
    """[length, b] 0/1 matrix of Gray words, LSB in column 0."""
    if b is None:
        b = min_bits(length)
    codes = gray_codes(length, b)
    return ((codes[:, None] >> np.arange(b)) & 1).astype(np.int8)


def gray_hamming_matrix(length: int, b: int | None = None) -> np.ndarray:
    """Pairwise d_H(G(i), G(j)) over positions [0, length)."""
    return _kernels.hamming_table(gray_codes(length, b))


def truncated_gray_hamming(length: int, b: int) -> np.ndarray:
    """Hamming matrix when only the low b bits of each Gray word are kept.

    With fewer bits than positions this is what a b-bit encoder sees;
    distinct positions can then collide.
    """
    idx = np.arange(length, dtype=np.int64)
    codes = gray_map(idx) & ((1 << b) - 1)
    return _kernels.hamming_table(codes)


@dataclass
class Theorem1Report:
    b_max: int
    pairs_checked: int = 0
    distance_counts: dict[int, int] = field(default_factory=dict)
    counterexamples: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.pairs_checked > 0 and not self.counterexamples

    def to_dict(self) -> dict:
        return {
            "b_max": self.b_max,
            "pairs_checked": self.pairs_checked,
            "distance_counts": {str(k): v for k, v in sorted(self.distance_counts.items())},
            "counterexamples": [list(c) for c in self.counterexamples],
            "passed": self.passed,
        }


def verify_theorem1(b_max: int, encode=None, max_counterexamples: int = 10) -> Theorem1Report:
    """Exhaustively check d_H(G(a), G(a + 2^n)) over all a + 2^n < 2^b_max.

    Every width b <= b_max is covered because the pairs for smaller widths
    are a subset of those for b_max. ``encode`` defaults to :func:`gray_map`
    and may be replaced for mutation testing.
    """
    if not 2 <= b_max <= 20:
        raise ValueError(f"b_max must be in [2, 20], got {b_max}")
    if encode is None:
        encode = gray_map

    report = Theorem1Report(b_max=b_max)
    top = 1 << b_max
    for n in range(b_max):
        step = 1 << n
        a = np.arange(top - step, dtype=np.int64)
        diff = np.asarray(encode(a), dtype=np.int64) ^ np.asarray(encode(a + step), dtype=np.int64)
        dist = _popcount(diff)
        expected = 1 if n == 0 else 2
        report.pairs_checked += a.size
        vals, counts = np.unique(dist, return_counts=True)
        for v, c in zip(vals.tolist(), counts.tolist()):
            report.distance_counts[v] = report.distance_counts.get(v, 0) + c
        bad = np.nonzero(dist != expected)[0]
        for i in bad[: max(0, max_counterexamples - len(report.counterexamples))]:
            report.counterexamples.append((int(a[i]), n, int(dist[i])))
        if bad.size and len(report.counterexamples) >= max_counterexamples:
            break
    return report


def _popcount(x: np.ndarray) -> np.ndarray:
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(x.astype(np.uint64)).astype(np.int64)
    return _kernels._popcount_np(x.astype(np.uint64))


def find_pigeonhole_collision(length: int, b: int):
    """Two position pairs at different offsets with the same positional term.

    Keeps only the low b bits of each Gray word. Once length > 2**b two
    positions p != p2 share a word, so (p, x) and (p2, x) get identical
    Hamming distances although |p - x| != |p2 - x|. Returns
    ((p, x), (p2, x)) or None when all words are distinct.
    """
    idx = np.arange(length, dtype=np.int64)
    codes = gray_map(idx) & ((1 << b) - 1)
    first: dict[int, int] = {}
    for pos, code in enumerate(codes.tolist()):
        if code in first:
            p, p2 = first[code], pos
            for x in range(length):
                if x not in (p, p2) and abs(p - x) != abs(p2 - x):
                    return (p, x), (p2, x)
        first.setdefault(code, pos)
    return None
