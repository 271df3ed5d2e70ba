"""Mini-batch training of GraspPointCNN with weighted BCE and AdamW."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import GraspPointCNN, ModelWeights, init_weights

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 16
    pos_weight: float = 2.0
    patience: int = 15
    max_epochs: int = 100
    val_fraction: float = 0.2
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    threshold: float = 0.5
    # A strictly better epoch than 100 % validation accuracy cannot exist, so the
    # restored best weights are already final; stopping there only shortens the log.
    stop_at_perfect: bool = True

    def validate(self):
        for name in ("lr", "batch_size", "pos_weight", "patience", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped: str = ""

    @property
    def best_val_acc(self) -> float:
        return max((e.val_acc for e in self.epochs), default=0.0)


class AdamW:
    """Adam with decoupled weight decay: ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``."""

    def __init__(self, params: dict, cfg: TrainConfig, m: dict | None = None, v: dict | None = None, step: int = 0):
        self.cfg = cfg
        self.m = {k: (m[k].astype(np.float64) if m and k in m else np.zeros_like(p)) for k, p in params.items()}
        self.v = {k: (v[k].astype(np.float64) if v and k in v else np.zeros_like(p)) for k, p in params.items()}
        self.t = step

    def step(self, params: dict, grads: dict):
        b1, b2 = self.cfg.betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        lr, wd, eps = self.cfg.lr, self.cfg.weight_decay, self.cfg.adam_eps
        for k in sorted(params):
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + wd * params[k])


def split_indices(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    """Stratified split so both classes appear in train and validation."""
    train, val = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = max(1, int(round(len(idx) * val_fraction)))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def evaluate(net: GraspPointCNN, x, y, pos_weight: float, threshold: float = 0.5, batch: int = 64):
    logits = np.concatenate([net.logits(x[i : i + batch]) for i in range(0, len(x), batch)])
    loss, _ = L.weighted_bce(logits, y, pos_weight)
    acc = float(((L.sigmoid(logits) >= threshold) == (y >= 0.5)).mean())
    return loss, acc


def train(patches, labels, cfg: TrainConfig = TrainConfig(), init: ModelWeights | None = None):
    """Fit a GraspPointCNN; returns ``(best weights, log)``.

    The best-validation-accuracy epoch is restored (the first one on ties).
    Computation is float64; the returned weights are float32.
    """
    cfg.validate()
    x = np.asarray(patches, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise ValueError(f"{len(x)} patches but {len(y)} labels")
    classes = set(np.unique(y).tolist())
    if classes != {0.0, 1.0}:
        raise ValueError(f"training needs both classes, got labels {sorted(classes)}")
    rng = np.random.default_rng(cfg.seed)
    tr, va = split_indices(y.astype(int), cfg.val_fraction, rng)
    weights = init if init is not None else init_weights(cfg.seed)
    net = GraspPointCNN(weights, np.float64)
    opt = AdamW(net.params, cfg, weights.adam_m, weights.adam_v, weights.step)
    tlog = TrainLog()
    best_acc, best, since = -1.0, None, 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = tr[rng.permutation(len(tr))]
        losses, correct, seen = [], 0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            logits = net.logits(x[idx], train=True)
            loss, dz = L.weighted_bce(logits, y[idx], cfg.pos_weight)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {opt.t + 1}: "
                    f"logit range [{np.nanmin(logits):.3g}, {np.nanmax(logits):.3g}]"
                )
            grads = net.backward(dz)
            opt.step(net.params, grads)
            net._folded = None
            losses.append(loss * len(idx))
            correct += int(((logits >= 0) == (y[idx] >= 0.5)).sum())
            seen += len(idx)
        val_loss, val_acc = evaluate(net, x[va], y[va], cfg.pos_weight, cfg.threshold)
        entry = EpochLog(epoch, float(sum(losses) / seen), correct / seen, val_loss, val_acc)
        tlog.epochs.append(entry)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, entry.train_loss, val_loss, val_acc)
        if val_acc > best_acc:
            best_acc, since = val_acc, 0
            tlog.best_epoch = epoch
            best = net.export(weights)
            best.adam_m = {k: v.astype(np.float32) for k, v in opt.m.items()}
            best.adam_v = {k: v.astype(np.float32) for k, v in opt.v.items()}
            best.step = opt.t
        else:
            since += 1
        if cfg.stop_at_perfect and val_acc >= 1.0:
            tlog.stopped = "perfect validation accuracy"
            break
        if since >= cfg.patience:
            tlog.stopped = f"no improvement for {cfg.patience} epochs"
            break
    else:
        tlog.stopped = "max epochs"
    return best, tlog


def separable_dataset(n: int = 400, seed: int = 0, noise: float = 0.25):
    """Two-class 9x32x32 patches separable by the mean of the combined-score channel.

    Positives carry a raised plateau (0.52..0.9) in every score channel, negatives
    a low one (0.1..0.48), so the channel means separate the classes linearly;
    depth relief, a random half-plane mask and per-pixel noise are shared
    nuisance factors.  Classes alternate so any prefix is balanced.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64) - 15.5
    patches = np.empty((n, 9, 32, 32), dtype=np.float32)
    labels = np.arange(n) % 2
    for i in range(n):
        theta = rng.uniform(0, 2 * np.pi)
        offset = rng.uniform(-14, 14)
        mask = (np.cos(theta) * xx + np.sin(theta) * yy) > offset
        relief = rng.normal(0, 0.3) * (xx / 16) + rng.normal(0, 0.3) * (yy / 16)
        level = rng.uniform(0.52, 0.9) if labels[i] else rng.uniform(0.1, 0.48)
        p = np.empty((9, 32, 32))
        p[0] = np.clip(relief + rng.normal(0, noise, (32, 32)), -1, 1)
        p[1] = mask
        for c in range(2, 9):
            p[c] = np.clip(level + rng.normal(0, noise, (32, 32)), 0, 1)
        patches[i] = p
    return patches, labels
