"""Toy-scale training and evaluation loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .attention import ForwardContext
from .checkpoint import save_checkpoint
from .data import Dataset
from .errors import ContractError, NonFiniteError, TrainingDivergedError
from .model import TtModel
from .optim import AdamW, CosineSchedule
from .tensor import no_grad

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "loss", "acc", "lr")


@dataclass
class StepMetrics:
    step: int
    loss: float
    acc: float
    lr: float

    def row(self) -> list:
        return [self.step, f"{self.loss:.6f}", f"{self.acc:.6f}", f"{self.lr:.6e}"]


def _check_compatible(model: TtModel, ds: Dataset):
    cfg = model.cfg
    if ds.image_size != cfg.input_size:
        raise ContractError(f"dataset images are {ds.image_size}px, model expects {cfg.input_size}px")
    if ds.num_classes > cfg.num_classes:
        raise ContractError(f"dataset has {ds.num_classes} classes, model head has {cfg.num_classes}")


def _infinite_batches(ds: Dataset, batch_size: int, rng: np.random.Generator):
    while True:
        yield from ds.batches(batch_size, rng, drop_last=len(ds) >= batch_size)


def train(model: TtModel, ds: Dataset, steps: int | None = None, epochs: int | None = None,
          lr: float = 1e-4, weight_decay: float = 0.05, batch_size: int = 32, seed: int = 0,
          warmup_fraction: float = 0.05, log_path=None, checkpoint_path=None) -> list:
    """Train in place with AdamW and a warm-up + cosine schedule; return per-step metrics.

    Exactly one of ``steps`` / ``epochs`` sets the run length. A non-finite
    loss or update restores the parameters of the last good step, writes
    them to ``checkpoint_path`` if given, and raises TrainingDivergedError.
    """
    _check_compatible(model, ds)
    if (steps is None) == (epochs is None):
        raise ContractError("give exactly one of steps or epochs")
    if steps is None:
        per_epoch = max(1, len(ds) // batch_size) if len(ds) >= batch_size else 1
        steps = epochs * per_epoch
    rng = np.random.default_rng(seed)
    opt = AdamW(model.named_parameters(), lr=lr, weight_decay=weight_decay)
    schedule = CosineSchedule.with_warmup_fraction(lr, steps, warmup_fraction)
    cfg = model.cfg
    history = []
    writer, fh = None, None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
    try:
        batches = _infinite_batches(ds, batch_size, rng)
        for step in range(steps):
            images, labels = next(batches)
            snapshot = {n: t.data.copy() for n, t in model.named_parameters()}
            step_lr = schedule(step)
            ctx = ForwardContext(training=True, rng=rng, attn_drop=cfg.attn_drop, proj_drop=cfg.proj_drop)
            try:
                opt.zero_grad()
                logits = model(images, ctx)
                loss = F.cross_entropy(logits, labels)
                if not np.isfinite(loss.item()):
                    raise NonFiniteError("cross_entropy")
                loss.backward()
                opt.step(step_lr)
                if not all(np.isfinite(t.data).all() for t in model.parameters()):
                    raise NonFiniteError("adamw")
            except NonFiniteError as exc:
                for n, t in model.named_parameters():
                    t.data[...] = snapshot[n]
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model)
                raise TrainingDivergedError(step, exc) from exc
            acc = float((logits.data.argmax(axis=1) == labels).mean())
            metrics = StepMetrics(step, loss.item(), acc, step_lr)
            history.append(metrics)
            if writer is not None:
                writer.writerow(metrics.row())
            log.debug("step %d loss %.4f acc %.3f lr %.2e", step, metrics.loss, acc, step_lr)
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, opt.state)
    return history


def predict(model: TtModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Logits for ``images`` in eval mode (no dropout, no graph)."""
    out = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            out.append(model(images[i:i + batch_size]).data)
    return np.concatenate(out)


def evaluate(model: TtModel, ds: Dataset, batch_size: int = 64) -> tuple:
    """(mean cross-entropy, accuracy) over the whole dataset."""
    logits = predict(model, ds.images, batch_size)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(ds)), ds.labels].mean())
    acc = float((logits.argmax(axis=1) == ds.labels).mean())
    return loss, acc
