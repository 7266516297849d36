"""Surrogate-gradient training loop with Adam and cosine learning-rate decay."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, TrainingDivergence
from .model import SpikingTransformer
from .tasks import Task, metric_accuracy, metric_r2, metric_rse

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    min_lr: float = 0.0
    # stop once validation accuracy reaches this (classification only)
    target_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")


def evaluate(model: SpikingTransformer, task: Task, x, y) -> dict:
    out = model.predict(x)
    if task.kind == "classification":
        loss = float(ag.cross_entropy(ag.tensor(out), y).values)
        return {"loss": loss, "accuracy": metric_accuracy(out, y)}
    pred = out.reshape(y.shape)
    loss = float(np.mean((pred - y) ** 2))
    return {"loss": loss, "r2": metric_r2(pred, y), "rse": metric_rse(pred, y)}


def train(model: SpikingTransformer, task: Task, cfg: TrainConfig, data=None, on_epoch=None) -> list[dict]:
    """Train in place; returns one metrics dict per epoch (epoch 0 = before training).

    Raises TrainingDivergence if the loss or any gradient goes non-finite.
    """
    (xt, yt), (xv, yv) = task.splits() if data is None else data
    rng = np.random.default_rng(cfg.seed)
    opt = ag.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(xt)
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    total = cfg.epochs * steps_per_epoch
    history = []

    def record(epoch, train_loss):
        row = {"epoch": epoch, "train_loss": train_loss}
        row.update({f"val_{k}" if k == "loss" else k: v for k, v in evaluate(model, task, xv, yv).items()})
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        return row

    record(0, None)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            if len(idx) < 2:
                continue
            out = model.forward(xt[idx])
            if task.kind == "classification":
                loss = ag.cross_entropy(out, yt[idx])
            else:
                loss = ag.mse(out, yt[idx].reshape(len(idx), -1))
            lv = float(loss.values)
            if not np.isfinite(lv):
                raise TrainingDivergence(epoch, "non-finite loss")
            opt.zero_grad()
            loss.backward()
            if any(p.grad is not None and not np.all(np.isfinite(p.grad)) for p in opt.params):
                raise TrainingDivergence(epoch, "non-finite gradient")
            opt.step(ag.cosine_lr(cfg.lr, step, total, cfg.min_lr))
            step += 1
            losses.append(lv)
        row = record(epoch, float(np.mean(losses)))
        if not np.isfinite(row["val_loss"]):
            raise TrainingDivergence(epoch, "non-finite validation loss")
        log.info("epoch %d %s", epoch, row)
        if cfg.target_accuracy is not None and row.get("accuracy", 0.0) >= cfg.target_accuracy:
            break
    model.eval()
    return history
