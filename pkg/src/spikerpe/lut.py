"""Fixed-point piecewise-linear log2 lookup table for hardware Log-PE.

Evaluation path (integer multiply, add, shift and mask only):

1. leading-one detection: z = 2^e * (1 + f), f in [0, 1) held as an
   (N-1)-bit mantissa;
2. the top log2(K) mantissa bits pick a segment s;
3. log2(1 + f) ~ a_s * f + b_s with (a_s, b_s) stored as P-bit
   sign-magnitude fixed point. The line is in terms of the whole mantissa,
   so a segment's pair stays valid on both halves when K doubles.

The Log-PE bias is then ceil(log2(L-1) - log2(|i-j|+1)), clamped at 0,
computed as a difference of two table lookups. Ratios that are exact
powers of two share a mantissa and therefore cancel exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import RelativeBias, log_pe_bias
from .errors import ConfigError, LUTBuildError


@dataclass(frozen=True)
class Log2LUT:
    n_bits: int
    k_segments: int
    p_bits: int
    a: tuple[int, ...]
    b: tuple[int, ...]

    @property
    def slope_frac_bits(self) -> int:
        return self.p_bits - 2

    @property
    def out_frac_bits(self) -> int:
        return self.p_bits - 1

    @property
    def storage_bits(self) -> int:
        return self.k_segments * (self.n_bits + 2 * self.p_bits)

    @property
    def storage_bytes(self) -> float:
        return self.storage_bits / 8

    def log2_fixed(self, z: int) -> int:
        """log2(z) in fixed point with ``out_frac_bits`` fraction bits."""
        n = self.n_bits
        if not 1 <= z < (1 << n):
            raise ConfigError(f"LUT input {z} outside [1, 2^{n})")
        e = z.bit_length() - 1
        m_bits = n - 1
        f = (z << (m_bits - e)) - (1 << m_bits)
        seg_shift = m_bits - (self.k_segments.bit_length() - 1)
        s = f >> seg_shift
        prod = self.a[s] * f
        sh = self.slope_frac_bits + m_bits - self.out_frac_bits
        if sh > 0:
            prod = (prod + (1 << (sh - 1))) >> sh
        elif sh < 0:
            prod <<= -sh
        return (e << self.out_frac_bits) + prod + self.b[s]

    def log2(self, z: int) -> float:
        return self.log2_fixed(z) / (1 << self.out_frac_bits)

    def max_error(self) -> float:
        zs = np.arange(1, 1 << self.n_bits)
        approx = np.array([self.log2(int(z)) for z in zs])
        return float(np.max(np.abs(approx - np.log2(zs))))


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def build_log2_lut(n_bits: int, k_segments: int, p_bits: int) -> Log2LUT:
    """Least-squares line per equal-width mantissa segment, quantised to P bits.

    Quantisation picks, among grid pairs next to the fitted line and the
    pair the K/2 table used on the enclosing segment, the one with the
    smallest max error through the integer path. Including the parent pair
    makes the error non-increasing in K; plain rounding does not.
    """
    if not 1 <= n_bits <= 16:
        raise ConfigError(f"N must be in [1, 16], got {n_bits}")
    if p_bits < 4:
        raise ConfigError(f"P must be >= 4, got {p_bits}")
    m_bits = n_bits - 1
    if not _is_pow2(k_segments) or k_segments > max(1, 1 << m_bits):
        raise ConfigError(f"K must be a power of two <= 2^{m_bits}, got {k_segments}")
    parent = build_log2_lut(n_bits, k_segments // 2, p_bits) if k_segments > 1 else None
    seg_shift = m_bits - (k_segments.bit_length() - 1)
    width = 1 << seg_shift
    limit = 1 << (p_bits - 1)
    a_scale = 1 << (p_bits - 2)
    b_scale = 1 << (p_bits - 1)
    a_q, b_q = [], []
    for s in range(k_segments):
        f = s * width + np.arange(width, dtype=np.int64)
        y = np.log2(1.0 + f / (1 << m_bits))
        if width > 1:
            slope, icept = np.polyfit(f / (1 << m_bits), y, 1)
        else:
            slope, icept = 0.0, float(y[0])
        qa0 = int(math.floor(slope * a_scale))
        qb0 = int(round(icept * b_scale))
        cands = [(qa, qb) for qa in range(qa0 - 1, qa0 + 3) for qb in range(qb0 - 2, qb0 + 3)]
        if parent is not None:
            cands.append((parent.a[s // 2], parent.b[s // 2]))
        best = None
        for qa, qb in cands:
            if abs(qa) >= limit or abs(qb) >= limit:
                continue
            err = np.abs(_eval_line(qa, qb, f, p_bits, m_bits) - y).max()
            if best is None or err < best[0] - 1e-15:
                best = (err, qa, qb)
        if best is None:
            raise LUTBuildError(
                f"segment {s}: coefficients ({slope:.4f}, {icept:.4f}) overflow {p_bits}-bit fixed point"
            )
        a_q.append(best[1])
        b_q.append(best[2])
    return Log2LUT(n_bits, k_segments, p_bits, tuple(a_q), tuple(b_q))


def _eval_line(qa, qb, f, p_bits, m_bits):
    """Vectorised twin of the mantissa part of Log2LUT.log2_fixed, as a float."""
    prod = qa * f
    sh = (p_bits - 2) + m_bits - (p_bits - 1)
    if sh > 0:
        prod = (prod + (1 << (sh - 1))) >> sh
    elif sh < 0:
        prod = prod << -sh
    return (prod + qb) / (1 << (p_bits - 1))


def lut_log_pe_bias(length: int, lut: Log2LUT) -> RelativeBias:
    """Log-PE bias matrix evaluated through the table (integers only)."""
    if length < 2:
        raise ConfigError(f"Log-PE needs L >= 2, got {length}")
    if length - 1 >= (1 << lut.n_bits):
        raise ConfigError(f"L-1={length - 1} does not fit the {lut.n_bits}-bit LUT")
    p = length - 1
    fb = lut.out_frac_bits
    top = lut.log2_fixed(p) if p >= 1 else 0
    vals = np.zeros(length, dtype=np.int64)
    for d in range(length):
        q = d + 1
        if q >= p:
            continue
        y = top - lut.log2_fixed(q)
        vals[d] = max(0, -((-y) >> fb))
    idx = np.arange(length)
    return RelativeBias(vals[np.abs(idx[:, None] - idx[None, :])])


@dataclass
class LUTCheck:
    n_bits: int
    k_segments: int
    p_bits: int
    length_max: int
    max_error: float
    mismatches: int
    at_risk: int
    first_mismatch: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return {
            "N": self.n_bits,
            "K": self.k_segments,
            "P": self.p_bits,
            "length_max": self.length_max,
            "max_error": self.max_error,
            "storage_bits": self.k_segments * (self.n_bits + 2 * self.p_bits),
            "mismatches": self.mismatches,
            "at_risk_entries": self.at_risk,
            "first_mismatch": self.first_mismatch,
            "passed": self.passed,
        }


def check_lut(lut: Log2LUT, length_max: int = 512, length_min: int = 2) -> LUTCheck:
    """Compare LUT bias against the exact bias for every L in [length_min, length_max].

    ``at_risk`` counts (L, offset) entries whose exact log-ratio is not an
    integer but lies within twice the LUT error of one; these are the only
    places a ceiling can flip.
    """
    err = lut.max_error()
    mismatches = 0
    at_risk = 0
    first = None
    for length in range(length_min, length_max + 1):
        exact = np.asarray(log_pe_bias(length))[0]
        approx = np.asarray(lut_log_pe_bias(length, lut))[0]
        bad = np.nonzero(exact != approx)[0]
        if bad.size:
            mismatches += int(bad.size)
            if first is None:
                d = int(bad[0])
                first = (length, d, int(exact[d]), int(approx[d]))
        ratio = np.log2((length - 1) / (np.arange(length) + 1.0))
        frac = np.abs(ratio - np.rint(ratio))
        at_risk += int(np.sum((frac > 1e-12) & (frac < 2 * err) & (ratio > -1)))
    return LUTCheck(lut.n_bits, lut.k_segments, lut.p_bits, length_max, err, mismatches, at_risk, first)


def search_exact_lut(length_max: int = 512, k_max: int = 64, p_max: int = 16, n_bits: int | None = None):
    """Cheapest (by storage) passing table with K <= k_max and P <= p_max."""
    if n_bits is None:
        n_bits = max(2, (length_max - 1).bit_length())
    candidates = []
    k = 1
    while k <= k_max:
        for p in range(4, p_max + 1):
            candidates.append((k * (n_bits + 2 * p), k, p))
        k *= 2
    for _, k, p in sorted(candidates):
        try:
            lut = build_log2_lut(n_bits, k, p)
        except (LUTBuildError, ConfigError):
            continue
        result = check_lut(lut, length_max)
        if result.passed:
            return lut, result
    return None, None


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def _sign_magnitude(v: int, bits: int) -> int:
    mag = abs(v)
    if mag >= 1 << (bits - 1):
        raise LUTBuildError(f"{v} does not fit {bits}-bit sign-magnitude")
    return ((1 if v < 0 else 0) << (bits - 1)) | mag


def _from_sign_magnitude(u: int, bits: int) -> int:
    mag = u & ((1 << (bits - 1)) - 1)
    return -mag if u >> (bits - 1) else mag


def lut_to_bytes(lut: Log2LUT) -> bytes:
    """u16 LE header (N, K, P), then K (a, b) pairs as P-bit sign-magnitude
    fields packed MSB-first, zero-padded to a whole byte."""
    acc = 0
    nbits = 0
    for a, b in zip(lut.a, lut.b):
        for v in (a, b):
            acc = (acc << lut.p_bits) | _sign_magnitude(v, lut.p_bits)
            nbits += lut.p_bits
    pad = (-nbits) % 8
    acc <<= pad
    body = acc.to_bytes((nbits + pad) // 8, "big") if nbits else b""
    return struct.pack("<HHH", lut.n_bits, lut.k_segments, lut.p_bits) + body


def lut_from_bytes(data: bytes) -> Log2LUT:
    n, k, p = struct.unpack_from("<HHH", data, 0)
    body = data[6:]
    nbits = 2 * k * p
    acc = int.from_bytes(body, "big") >> (len(body) * 8 - nbits) if body else 0
    vals = []
    for i in range(2 * k):
        shift = nbits - (i + 1) * p
        vals.append(_from_sign_magnitude((acc >> shift) & ((1 << p) - 1), p))
    return Log2LUT(n, k, p, tuple(vals[0::2]), tuple(vals[1::2]))


def write_lut(lut: Log2LUT, path: str | Path):
    Path(path).write_bytes(lut_to_bytes(lut))


def read_lut(path: str | Path) -> Log2LUT:
    return lut_from_bytes(Path(path).read_bytes())
