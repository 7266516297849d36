"""Synthetic position-sensitive datasets and forecasting metrics."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NumericError


def gen_offset_copy(length: int, vocab: int, k: int, n_samples: int, seed: int):
    """One-hot token sequences; the label is the token k places before the end.

    Every sequence draws from the same (as-balanced-as-possible) token
    multiset in shuffled order, so bag-of-tokens statistics carry no
    information about the label and a position-blind model sits at chance.

    Returns (x [n, L, vocab] float64, y [n] int64).
    """
    if vocab < 2:
        raise ConfigError(f"vocab must be >= 2, got {vocab}")
    if not 0 <= k < length:
        raise ConfigError(f"offset k={k} out of range for L={length}")
    rng = np.random.default_rng(seed)
    base = np.arange(length) % vocab
    tokens = np.empty((n_samples, length), dtype=np.int64)
    for m in range(n_samples):
        # relabel tokens so that the leftover (L mod vocab) tokens vary
        tokens[m] = rng.permutation(vocab)[rng.permutation(base)]
    x = np.zeros((n_samples, length, vocab))
    np.put_along_axis(x, tokens[..., None], 1.0, axis=-1)
    return x, tokens[:, length - 1 - k].copy()


def gen_sinusoid_forecast(
    length: int, horizon: int, n_channels: int, n_samples: int, noise_std: float, seed: int
):
    """Windows of mixed sinusoids; target is the next ``horizon`` values.

    Each channel has two fixed periods; every window draws its own phases
    and amplitudes. Returns (x [n, L, C], y [n, H, C]).
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    rng = np.random.default_rng(seed)
    periods = 4.0 + 12.0 * np.random.default_rng(1000 + n_channels).random((n_channels, 2))
    t = np.arange(length + horizon, dtype=np.float64)
    phase = rng.uniform(0, 2 * math.pi, (n_samples, n_channels, 2))
    amp = rng.uniform(0.5, 1.5, (n_samples, n_channels, 2))
    arg = 2 * math.pi * t[None, None, None, :] / periods[None, :, :, None] + phase[..., None]
    series = (amp[..., None] * np.sin(arg)).sum(axis=2)  # [n, C, L+H]
    if noise_std > 0:
        series = series + rng.normal(0.0, noise_std, series.shape)
    series = series.transpose(0, 2, 1)
    return series[:, :length].copy(), series[:, length:].copy()


@dataclass(frozen=True)
class Task:
    name: str
    seed: int
    length: int
    vocab: int = 8
    k: int = 3
    horizon: int = 4
    n_channels: int = 2
    noise_std: float = 0.05
    n_train: int = 1024
    n_val: int = 256

    @property
    def kind(self) -> str:
        return "classification" if self.name == "offset_copy" else "regression"

    @property
    def features(self) -> int:
        return self.vocab if self.name == "offset_copy" else self.n_channels

    @property
    def n_outputs(self) -> int:
        return self.vocab if self.name == "offset_copy" else self.horizon * self.n_channels

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def _generate(self, n, seed):
        if self.name == "offset_copy":
            return gen_offset_copy(self.length, self.vocab, self.k, n, seed)
        if self.name == "sinusoid":
            return gen_sinusoid_forecast(
                self.length, self.horizon, self.n_channels, n, self.noise_std, seed
            )
        raise ConfigError(f"unknown task {self.name!r}")

    def splits(self):
        """((x_train, y_train), (x_val, y_val)) from independent seed streams."""
        s_train, s_val = np.random.SeedSequence(self.seed).spawn(2)
        train = self._generate(self.n_train, int(s_train.generate_state(1)[0]))
        val = self._generate(self.n_val, int(s_val.generate_state(1)[0]))
        return train, val

    def load(self, cache_dir: str | Path | None = None):
        """Like :meth:`splits` but cached as an .npz keyed by the task digest."""
        if cache_dir is None:
            return self.splits()
        path = Path(cache_dir) / f"{self.name}-{self.digest()}.npz"
        if path.exists():
            with np.load(path) as z:
                return (z["xt"], z["yt"]), (z["xv"], z["yv"])
        (xt, yt), (xv, yv) = self.splits()
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, xt=xt, yt=yt, xv=xv, yv=yv)
        return (xt, yt), (xv, yv)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    loss: float | None = None
    r2: float | None = None
    rse: float | None = None
    accuracy: float | None = None
    excluded_channels: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"r2": self.r2, "rse": self.rse, "accuracy": self.accuracy})


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    if target.ndim == 1:
        pred, target = pred[:, None, None], target[:, None, None]
    elif target.ndim == 2:
        pred, target = pred[:, :, None], target[:, :, None]
    return pred, target


def r2_per_cell(pred, target):
    """R^2 for every (horizon, channel) cell over the sample axis.

    Cells with zero target variance come back as NaN.
    """
    pred, target = _check_pair(pred, target)
    if target.shape[0] < 2:
        raise NumericError("R^2 needs at least two samples")
    mean = target.mean(axis=0)
    num = ((target - pred) ** 2).sum(axis=0)
    den = ((target - mean) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, 1.0 - num / den, np.nan)


def metric_r2(pred, target, report=None) -> float:
    """Mean over (horizon, channel) of the per-cell coefficient of determination.

    pred/target: [M] or [M, H] or [M, H, C]. Zero-variance cells are
    dropped from the mean and listed in ``report.excluded_channels`` when a
    MetricReport is passed.
    """
    cells = r2_per_cell(pred, target)
    bad = np.argwhere(np.isnan(cells))
    if report is not None:
        report.excluded_channels = [tuple(int(v) for v in b) for b in bad]
    if bad.shape[0] == cells.size:
        raise NumericError("target has zero variance in every channel")
    return float(np.nanmean(cells))


def metric_rse(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    den = ((target - target.mean()) ** 2).sum()
    if den == 0:
        raise NumericError("RSE undefined for a constant target")
    return float(math.sqrt(((target - pred) ** 2).sum() / den))


def metric_accuracy(logits_or_labels, labels) -> float:
    a = np.asarray(logits_or_labels)
    pred = a.argmax(axis=-1) if a.ndim > 1 else a
    return float(np.mean(pred == np.asarray(labels)))
