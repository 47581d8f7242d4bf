"""Teacher-forced training of OrderNet with Adam."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import atomic_write_bytes, save_checkpoint
from .data import DatasetError, OrderingExample
from .model import ModelConfig, OrderNet
from .tsp import derive_seed

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "make_batches",
    "train_step",
    "evaluate_loss",
    "train",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    clip_norm: float | None = None
    checkpoint: str | None = None
    metrics_csv: str | None = None
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    eval_loss: list[float] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    seconds: float = 0.0
    checkpoint_digest: str | None = None


def make_batches(examples: list[OrderingExample], batch_size: int, seed: int, shuffle_order: bool = True):
    """Group by set size, shuffle within each group, cut into dense batches.

    Returns a list of ``(x, y)`` pairs of shapes (B, n, d) and (B, n). The
    last batch of a group may be short. With ``shuffle_order`` the batch
    sequence is also permuted so set sizes interleave.
    """
    if not examples:
        return []
    dims = {ex.x.shape[1] for ex in examples}
    if len(dims) > 1:
        raise DatasetError(f"mixed feature dimensions in dataset: {sorted(dims)}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    groups: dict[int, list[int]] = {}
    for idx, ex in enumerate(examples):
        groups.setdefault(ex.n, []).append(idx)
    batches = []
    for n in sorted(groups):
        members = np.array(groups[n])[rng.permutation(len(groups[n]))]
        for start in range(0, len(members), batch_size):
            chosen = members[start : start + batch_size]
            x = np.stack([examples[i].x for i in chosen])
            y = np.stack([examples[i].y for i in chosen])
            batches.append((x, y))
    if shuffle_order:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _loss_and_hits(model: OrderNet, x: np.ndarray, y: np.ndarray):
    logits = model.forward(x, y)
    with T.precision(model.config.precision):
        loss = T.masked_softmax_cross_entropy(logits, y)
    hits = int((logits.data.argmax(axis=-1) == y).sum())
    return loss, hits


def train_step(model: OrderNet, x, y, optimizer: T.AdamState, clip_norm: float | None = None, step: int | None = None) -> float:
    """One teacher-forced Adam step on a batch; returns the batch loss."""
    loss, _ = _step(model, np.asarray(x), np.asarray(y), optimizer, clip_norm, step)
    return loss


def _step(model, x, y, optimizer, clip_norm, step):
    model.train()
    loss, hits = _loss_and_hits(model, x, y)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss {value} at step {step if step is not None else optimizer.step + 1} "
            f"(batch of {x.shape[0]} sets of size {x.shape[1]})"
        )
    model.params.zero_grad()
    loss.backward()
    T.adam_step(model.params, optimizer, clip_norm=clip_norm)
    return value, hits


def evaluate_loss(model: OrderNet, examples: list[OrderingExample], batch_size: int = 256):
    """Eval-mode mean cross entropy and teacher-forced accuracy."""
    model.eval()
    total = hits = tokens = 0.0
    with T.no_grad():
        for x, y in make_batches(examples, batch_size, seed=0, shuffle_order=False):
            loss, h = _loss_and_hits(model, x, y)
            total += loss.item() * y.size
            hits += h
            tokens += y.size
    return total / tokens, hits / tokens


def _metrics_csv(report: TrainReport) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss", "tf_accuracy", "seconds"])
    for k, (loss, acc, sec) in enumerate(zip(report.epoch_loss, report.epoch_accuracy, report.epoch_seconds), 1):
        writer.writerow([k, f"{loss:.9g}", f"{acc:.9g}", f"{sec:.3f}"])
    return buf.getvalue().encode()


def train(
    config: TrainConfig,
    examples: list[OrderingExample],
    eval_examples: list[OrderingExample] | None = None,
    model: OrderNet | None = None,
) -> tuple[TrainReport, OrderNet]:
    """Run ``config.epochs`` epochs; optionally checkpoint and write metrics."""
    if not examples:
        raise DatasetError("training set is empty")
    dim = examples[0].x.shape[1]
    if dim != config.model.input_dim:
        raise DatasetError(f"dataset elements are {dim}-dimensional but the model expects {config.model.input_dim}")
    if model is None:
        model = OrderNet(config.model, seed=derive_seed(config.seed, 0))
    opt = T.AdamState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.epsilon)
    report = TrainReport()
    began = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(examples, config.batch_size, seed=derive_seed(config.seed, 1, epoch))
        loss_sum = hit_sum = token_sum = 0.0
        for x, y in batches:
            value, hits = _step(model, x, y, opt, config.clip_norm, None)
            loss_sum += value * y.size
            hit_sum += hits
            token_sum += y.size
        report.epoch_loss.append(loss_sum / token_sum)
        report.epoch_accuracy.append(hit_sum / token_sum)
        report.epoch_seconds.append(time.perf_counter() - t0)
        msg = f"epoch {epoch}: loss {report.epoch_loss[-1]:.4f} tf_acc {report.epoch_accuracy[-1]:.4f} ({report.epoch_seconds[-1]:.1f}s)"
        if eval_examples and epoch % config.eval_every == 0:
            ev_loss, ev_acc = evaluate_loss(model, eval_examples)
            report.eval_loss.append(ev_loss)
            report.eval_accuracy.append(ev_acc)
            msg += f" eval_loss {ev_loss:.4f} eval_tf_acc {ev_acc:.4f}"
        log.info(msg)
        if config.metrics_csv:
            atomic_write_bytes(config.metrics_csv, _metrics_csv(report))
    report.seconds = time.perf_counter() - began
    model.eval()
    if config.checkpoint:
        report.checkpoint_digest = save_checkpoint(config.checkpoint, model)
    return report, model
