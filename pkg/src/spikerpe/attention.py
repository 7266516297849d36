"""Attention-map constructions for binary (spiking) queries and keys.

All maps take spike tensors shaped [..., L, D] (typically [T, L, D]) and
return integer score tensors shaped [..., L, L]. Leading axes are treated
as independent slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .bitcodec import gray_bits, gray_hamming_matrix, min_bits
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class Grid2D:
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ConfigError(f"grid dims must be positive, got {self.h}x{self.w}")

    @property
    def length(self) -> int:
        return self.h * self.w

    def coords(self):
        """Row-major (row, col) index arrays for every flattened position."""
        idx = np.arange(self.length)
        return idx // self.w, idx % self.w


@dataclass(frozen=True)
class RelativeBias:
    r: np.ndarray

    @property
    def length(self) -> int:
        return self.r.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.r if dtype is None else self.r.astype(dtype)


def as_spikes(x, name: str = "tensor") -> np.ndarray:
    a = np.asarray(x)
    if a.ndim < 2:
        raise DimensionError(f"{name} needs at least [L, D] axes, got shape {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary")
    return a.astype(np.int8, copy=False)


def _pair(q, k):
    q = as_spikes(q, "Q")
    k = as_spikes(k, "K")
    if q.shape[:-2] != k.shape[:-2] or q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"Q {q.shape} and K {k.shape} disagree")
    return q, k


def _batched(fn, q, k):
    lead = q.shape[:-2]
    out = fn(q.reshape((-1,) + q.shape[-2:]), k.reshape((-1,) + k.shape[-2:]))
    return out.reshape(lead + out.shape[-2:])


def ssa_dot_map(q, k) -> np.ndarray:
    """Dot-product spiking attention: count of channels where both spike."""
    q, k = _pair(q, k)
    return _batched(_kernels.dot_counts, q, k)


def xnor_map(q, k) -> np.ndarray:
    """Count of channels where query and key agree (D minus Hamming distance)."""
    q, k = _pair(q, k)
    return _batched(_kernels.xnor_counts, q, k)


@lru_cache(maxsize=64)
def _cached_gray_bits(length: int, b: int) -> np.ndarray:
    g = gray_bits(length, b)
    g.flags.writeable = False
    return g


def _append_code(x, code):
    code = np.broadcast_to(code, x.shape[:-1] + code.shape[-1:])
    return np.concatenate([x, code], axis=-1)


def gray_pe_map(q, k, b: int | None = None) -> np.ndarray:
    """XNOR map over rows with each position's Gray word appended."""
    q, k = _pair(q, k)
    length = q.shape[-2]
    if b is None:
        b = min_bits(length)
    if b < min_bits(length):
        raise ConfigError(f"{b} Gray bits cannot separate {length} positions")
    g = _cached_gray_bits(length, b)
    return _batched(_kernels.xnor_counts, _append_code(q, g), _append_code(k, g))


def gray_term(length: int, b: int | None = None) -> np.ndarray:
    """Positional contribution b - d_H(G(i), G(j)) added by Gray concatenation."""
    if b is None:
        b = min_bits(length)
    if b < min_bits(length):
        raise ConfigError(f"{b} Gray bits cannot separate {length} positions")
    return b - gray_hamming_matrix(length, b)


def grid_codes(grid: Grid2D, b_h: int | None = None, b_w: int | None = None) -> np.ndarray:
    """[h*w, b_h + b_w] row-major Gray words: row code then column code."""
    b_h = min_bits(grid.h) if b_h is None else b_h
    b_w = min_bits(grid.w) if b_w is None else b_w
    if b_h < min_bits(grid.h) or b_w < min_bits(grid.w):
        raise ConfigError(f"bits ({b_h}, {b_w}) too few for grid {grid.h}x{grid.w}")
    rows, cols = grid.coords()
    return np.concatenate([gray_bits(grid.h, b_h)[rows], gray_bits(grid.w, b_w)[cols]], axis=-1)


def gray_pe_2d_map(q, k, grid: Grid2D, b_h: int | None = None, b_w: int | None = None) -> np.ndarray:
    q, k = _pair(q, k)
    if q.shape[-2] != grid.length:
        raise ConfigError(f"sequence length {q.shape[-2]} != grid {grid.h}x{grid.w}")
    g = grid_codes(grid, b_h, b_w)
    return _batched(_kernels.xnor_counts, _append_code(q, g), _append_code(k, g))


def log_pe_bias(length: int) -> RelativeBias:
    """Integer bias ceil(log2((L-1)/(|i-j|+1))), clamped at zero.

    Computed exactly in integers: ceil(log2(p/q)) is the smallest m with
    q * 2^m >= p.
    """
    if length < 2:
        raise ConfigError(f"Log-PE needs L >= 2, got {length}")
    p = length - 1
    vals = np.zeros(length, dtype=np.int64)
    for d in range(length):
        q = d + 1
        m = 0
        while q << m < p:
            m += 1
        vals[d] = m
    idx = np.arange(length)
    return RelativeBias(vals[np.abs(idx[:, None] - idx[None, :])])


def log_pe_map(q, k, bias: RelativeBias) -> np.ndarray:
    q, k = _pair(q, k)
    r = np.asarray(bias)
    if r.shape != (q.shape[-2], q.shape[-2]):
        raise DimensionError(f"bias shape {r.shape} does not match L={q.shape[-2]}")
    return xnor_map(q, k) + r


def complete_rpe_bias(length: int) -> np.ndarray:
    """Unquantised bias (L-1)/(|i-j|+1); real-valued, ablation only."""
    if length < 2:
        raise ConfigError(f"C-RPE needs L >= 2, got {length}")
    idx = np.arange(length)
    return (length - 1) / (np.abs(idx[:, None] - idx[None, :]) + 1.0)


def default_sigma(d_effective: int) -> float:
    return 1.0 / math.sqrt(d_effective)


def attend(attn_map, v, sigma: float = 1.0) -> np.ndarray:
    """sigma * (AttnMap @ V) for each leading slice."""
    m = np.asarray(attn_map, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if m.shape[:-2] != v.shape[:-2] or m.shape[-1] != v.shape[-2]:
        raise DimensionError(f"map {m.shape} and V {v.shape} disagree")
    return (m @ v) * sigma
