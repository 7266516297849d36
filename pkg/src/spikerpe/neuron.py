"""Leaky integrate-and-fire dynamics and the arctangent surrogate gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class LIFParams:
    tau: float = 2.0
    u_thr: float = 1.0
    u_reset: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.u_thr > self.u_reset:
            raise ValueError(f"u_thr ({self.u_thr}) must exceed u_reset ({self.u_reset})")


@dataclass
class LIFState:
    u: np.ndarray

    @classmethod
    def rest(cls, n: int, params: LIFParams = LIFParams()) -> LIFState:
        return cls(np.full(n, params.u_reset, dtype=np.float64))


def lif_step(state: LIFState, input_current, params: LIFParams = LIFParams()):
    """Advance one time-step. Returns (spikes, next_state).

    H = u + (I - (u - u_reset)) / tau; spike where H >= u_thr; spiking
    neurons reset to u_reset, the rest keep H.
    """
    u = np.asarray(state.u, dtype=np.float64)
    i = np.asarray(input_current, dtype=np.float64)
    if u.shape != i.shape:
        raise DimensionError(f"state shape {u.shape} != input shape {i.shape}")
    if not np.all(np.isfinite(i)):
        raise NumericError("non-finite input current")
    h = u + (i - (u - params.u_reset)) / params.tau
    spikes = (h >= params.u_thr).astype(np.float64)
    u_next = np.where(spikes > 0, params.u_reset, h)
    return spikes, LIFState(u_next)


def surrogate_grad(x, alpha: float = 2.0):
    """d/dx of (1/pi) arctan(pi alpha x / 2) + 1/2, the stand-in for Heaviside'."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    c = math.pi * alpha / 2.0
    x = np.asarray(x, dtype=np.float64)
    out = alpha / (2.0 * (1.0 + (c * x) ** 2))
    return float(out) if out.ndim == 0 else out


def surrogate_primitive(x, alpha: float = 2.0):
    """The smooth step whose derivative is :func:`surrogate_grad`."""
    x = np.asarray(x, dtype=np.float64)
    return np.arctan(math.pi * alpha * x / 2.0) / math.pi + 0.5
