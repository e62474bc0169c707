"""Adam training with plateau LR reduction, early stopping and best-epoch
restore, plus clean evaluation."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .engine import loss_and_param_gradients, loss_value
from .errors import Divergence, InvalidParams, TooFewExamples
from .receiver import Dataset

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "Adam", "split_dataset", "train", "evaluate", "write_history_csv"]


@dataclass(frozen=True)
class TrainConfig:
    val_ratio: float = 0.1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_reduce_factor: float = 0.2
    lr_patience: int = 10
    early_stop_patience: int = 30
    batch_size: int = 32
    max_epochs: int = 300
    shuffle_seed: int = 0
    min_delta: float = 1e-6

    def validate(self) -> "TrainConfig":
        if not 0 < self.val_ratio < 1:
            raise InvalidParams("val_ratio must lie in (0, 1)")
        if self.lr_patience <= 0 or self.early_stop_patience <= 0:
            raise InvalidParams("patience values must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidParams("batch_size and max_epochs must be >= 1")
        return self


class Adam:
    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def split_dataset(ds: Dataset, val_ratio: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Label-stratified random split; each class contributes round(n_c * ratio)
    (at least one) examples to validation."""
    if len(ds) == 0:
        raise TooFewExamples("empty dataset")
    rng = np.random.default_rng([int(seed), 9001])
    tr, va = [], []
    for c in np.unique(ds.y):
        idx = np.flatnonzero(ds.y == c)
        if idx.size < 2:
            raise TooFewExamples(f"class {c} has {idx.size} example(s); need at least 2")
        idx = rng.permutation(idx)
        n_val = min(max(1, int(round(idx.size * val_ratio))), idx.size - 1)
        va.append(idx[:n_val])
        tr.append(idx[n_val:])
    return ds.subset(np.sort(np.concatenate(tr))), ds.subset(np.sort(np.concatenate(va)))


def _mean_loss_acc(model, ds: Dataset, batch_size=64):
    losses, correct = [], 0
    for i in range(0, len(ds), batch_size):
        xb, yb = ds.x[i : i + batch_size], ds.y[i : i + batch_size]
        losses.append(loss_value(model, xb, yb) if len(xb) > 1 else [loss_value(model, xb[0], yb[0])])
        correct += int(np.sum(model.predict(xb) == yb))
    return float(np.mean(np.concatenate([np.atleast_1d(l) for l in losses]))), correct / len(ds)


def train(model, ds: Dataset, cfg: TrainConfig = TrainConfig(), val: Dataset | None = None, progress=None):
    """Train in place and return ``(model, history)``.

    Without an explicit ``val`` the dataset is split by ``cfg.val_ratio``.  The
    returned model carries the parameters of the best validation epoch.
    """
    cfg.validate()
    if val is None:
        ds, val = split_dataset(ds, cfg.val_ratio, cfg.shuffle_seed)
    if tuple(ds.shape) != tuple(model.input_shape):
        raise InvalidParams(f"dataset shape {ds.shape} does not match model input {model.input_shape}")
    opt = Adam(model.params.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    best_loss, best_params = math.inf, model.params.copy()
    best_epoch = -1
    wait_lr = wait_stop = 0
    history = []
    for epoch in range(cfg.max_epochs):
        t0 = time.time()
        order = np.random.default_rng([int(cfg.shuffle_seed), epoch, 9002]).permutation(len(ds))
        batch_losses = []
        for i in range(0, len(order), cfg.batch_size):
            b = order[i : i + cfg.batch_size]
            loss, grad = loss_and_param_gradients(model, ds.x[b], ds.y[b])
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise Divergence(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size} (lr={opt.lr:g})")
            model.set_params(opt.step(model.params, grad))
            batch_losses.append(loss)
        val_loss, val_acc = _mean_loss_acc(model, val)
        if not math.isfinite(val_loss):
            raise Divergence(f"non-finite validation loss at epoch {epoch}")
        rec = {
            "epoch": epoch,
            "lr": opt.lr,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        history.append(rec)
        if progress is not None:
            progress(rec)
        log.info("epoch %d lr %.2e train %.4f val %.4f acc %.3f (%.1fs)", epoch, opt.lr,
                 rec["train_loss"], val_loss, val_acc, time.time() - t0)
        if val_loss < best_loss - cfg.min_delta:
            best_loss, best_params, best_epoch = val_loss, model.params.copy(), epoch
            wait_lr = wait_stop = 0
        else:
            wait_lr += 1
            wait_stop += 1
            if wait_stop >= cfg.early_stop_patience:
                break
            if wait_lr >= cfg.lr_patience:
                opt.lr *= cfg.lr_reduce_factor
                wait_lr = 0
    model.set_params(best_params)
    for rec in history:
        rec["best"] = rec["epoch"] == best_epoch
    return model, history


def evaluate(model, ds: Dataset, n_classes: int | None = None) -> dict:
    n = n_classes or max(ds.n_classes, model.n_classes)
    pred = model.predict(ds.x) if len(ds) else np.zeros(0, dtype=int)
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (ds.y, pred), 1)
    acc = float(np.trace(conf) / conf.sum()) if conf.sum() else 0.0
    return {"accuracy": acc, "confusion": conf, "pred": pred}


def write_history_csv(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_loss", "val_acc"])
        for r in history:
            w.writerow([r["epoch"], repr(r["lr"]), repr(r["train_loss"]), repr(r["val_loss"]), repr(r["val_acc"])])
    return path


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
