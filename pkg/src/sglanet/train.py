"""Optimisation, schedules, metrics and the epoch loop."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import TrainConfig
from .errors import LabelError, ShapeError
from .network import LossWeights, SGLANet, total_loss
from .tensor import Parameter, Tensor, no_grad


@dataclass
class SGDState:
    lr: float = 1e-2
    momentum: float = 0.9
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(params: Sequence[Parameter], state: SGDState) -> None:
    """``v <- mu * v + g``, ``w <- w - lr * v``, then clear the gradients."""
    for p in params:
        if p.grad is None or p.grad.shape != p.shape:
            got = None if p.grad is None else p.grad.shape
            raise ShapeError("sgd_step", f"gradient {got} does not match parameter {p.name} {p.shape}")
        v = state.velocity.get(p.name)
        if v is None:
            v = state.velocity[p.name] = np.zeros_like(p.data)
        elif v.shape != p.shape:
            raise ShapeError("sgd_step", f"velocity {v.shape} does not match parameter {p.name} {p.shape}")
        v *= p.dtype.type(state.momentum)
        v += p.grad
        p.data -= p.dtype.type(state.lr) * v
        p.grad[...] = 0


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: ``lr * factor ** (epoch // decay_epoch)`` for a 0-based epoch."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_epoch)


def label_ranks(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """0-based rank of each row's label; equal scores rank the lower class index first."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        raise LabelError(int(labels[bad][0]), k)
    target = logits[np.arange(n), labels][:, None]
    above = (logits > target).sum(axis=1)
    tied_before = ((logits == target) & (np.arange(k)[None, :] < labels[:, None])).sum(axis=1)
    return above + tied_before


def topk_accuracy(logits, labels, k: int) -> float:
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if not 1 <= k <= logits.shape[1]:
        raise ValueError(f"k={k} outside [1, {logits.shape[1]}]")
    if logits.shape[0] == 0:
        return 0.0
    return float(np.mean(label_ranks(logits, labels) < k))


@dataclass
class MetricsReport:
    top1: float
    top5: float
    per_class_top1: List[float]
    n: int
    loss: float = float("nan")
    loss_joint: float = float("nan")
    loss_global: float = float("nan")
    loss_local: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def _report(ranks: np.ndarray, labels: np.ndarray, classes: int, sums: Dict[str, float]) -> MetricsReport:
    n = len(labels)
    k5 = min(5, classes)
    per_class = []
    for c in range(classes):
        sel = labels == c
        per_class.append(float(np.mean(ranks[sel] < 1)) if sel.any() else float("nan"))
    return MetricsReport(
        top1=float(np.mean(ranks < 1)) if n else 0.0,
        top5=float(np.mean(ranks < k5)) if n else 0.0,
        per_class_top1=per_class,
        n=n,
        loss=sums["total"] / max(n, 1),
        loss_joint=sums["joint"] / max(n, 1),
        loss_global=sums["global"] / max(n, 1),
        loss_local=sums["local"] / max(n, 1),
    )


def _accumulate(sums: Dict[str, float], losses, count: int) -> None:
    sums["total"] += float(losses.total.data) * count
    sums["joint"] += float(losses.joint.data) * count
    sums["global"] += float(losses.global_.data) * count
    sums["local"] += float(losses.local.data) * count


def _zero_sums() -> Dict[str, float]:
    return {"total": 0.0, "joint": 0.0, "global": 0.0, "local": 0.0}


@dataclass
class EpochSummary:
    epoch: int
    lr: float
    report: MetricsReport
    step_losses: List[float]


def batch_order(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(model: SGLANet, images: np.ndarray, labels: np.ndarray, state: SGDState, cfg: TrainConfig,
                epoch: int, rng: np.random.Generator, weights: Optional[LossWeights] = None,
                max_steps: Optional[int] = None) -> EpochSummary:
    """One pass over seeded-shuffled mini-batches.  ``epoch`` is 0-based and sets the learning rate."""
    weights = weights or LossWeights(cfg.gamma1, cfg.gamma2)
    state.lr = lr_schedule(epoch, cfg)
    params = model.parameters()
    sums = _zero_sums()
    ranks, seen, trace = [], [], []
    for step, idx in enumerate(batch_order(len(labels), cfg.batch_size, rng)):
        if max_steps is not None and step >= max_steps:
            break
        batch = images[idx]
        if cfg.flip:
            flip = rng.random(len(idx)) < 0.5
            batch = np.where(flip[:, None, None, None], batch[..., ::-1], batch)
        y = labels[idx]
        out = model(Tensor(np.ascontiguousarray(batch, dtype=model.dtype)))
        losses = total_loss(out, y, weights)
        losses.total.backward()
        sgd_step(params, state)
        _accumulate(sums, losses, len(idx))
        trace.append(float(losses.total.data))
        ranks.append(label_ranks(out.joint_logits.data, y))
        seen.append(y)
    ranks = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    seen = np.concatenate(seen) if seen else np.zeros(0, dtype=np.int64)
    return EpochSummary(epoch, state.lr, _report(ranks, seen, model.cfg.classes, sums), trace)


def predict(model: SGLANet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Joint logits for every image, forward only."""
    outs = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            outs.append(model(Tensor(np.ascontiguousarray(images[i:i + batch_size], dtype=model.dtype)))
                        .joint_logits.data)
    if not outs:
        return np.zeros((0, model.cfg.classes), dtype=model.dtype)
    return np.concatenate(outs)


def evaluate(model: SGLANet, images: np.ndarray, labels: np.ndarray, batch_size: int = 64,
             weights: Optional[LossWeights] = None) -> MetricsReport:
    """Forward-only metrics over one split; predictions are the joint logits."""
    weights = weights or LossWeights()
    sums = _zero_sums()
    ranks = []
    with no_grad():
        for i in range(0, len(labels), batch_size):
            y = labels[i:i + batch_size]
            out = model(Tensor(np.ascontiguousarray(images[i:i + batch_size], dtype=model.dtype)))
            _accumulate(sums, total_loss(out, y, weights), len(y))
            ranks.append(label_ranks(out.joint_logits.data, y))
    ranks = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    return _report(ranks, np.asarray(labels), model.cfg.classes, sums)


def fit(model: SGLANet, train_data, cfg: TrainConfig, val_data=None,
        on_epoch: Optional[Callable[[EpochSummary, Optional[MetricsReport]], None]] = None) -> List[EpochSummary]:
    """Train for ``cfg.epochs`` epochs; ``on_epoch`` sees each summary and the validation report."""
    rng = np.random.default_rng(cfg.seed)
    state = SGDState(lr=cfg.lr, momentum=cfg.momentum)
    weights = LossWeights(cfg.gamma1, cfg.gamma2)
    history = []
    images, labels = train_data
    for epoch in range(cfg.epochs):
        summary = train_epoch(model, images, labels, state, cfg, epoch, rng, weights)
        history.append(summary)
        val = evaluate(model, val_data[0], val_data[1], weights=weights) if val_data is not None else None
        if on_epoch is not None:
            on_epoch(summary, val)
    return history


def metric_record(epoch: int, split: str, report: MetricsReport, lr: float) -> dict:
    """One line of the metrics log."""
    return {"epoch": epoch, "split": split, "top1": report.top1, "top5": report.top5, "loss": report.loss,
            "loss_joint": report.loss_joint, "loss_global": report.loss_global,
            "loss_local": report.loss_local, "lr": lr}
