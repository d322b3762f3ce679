"""Mini-batch SGD training for the three learning strategies.

* ``CLS``: large-margin cosine softmax on labeled data.
* ``KT``: regress the student's embeddings onto a frozen teacher's; labels unused.
* ``CL``: ``alpha * CLS + (1 - alpha) * KT``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datagen import LabeledDataset
from .embedder import ClassificationHead, EmbeddingModel, backward, forward
from .errors import ConfigError, DimensionError, NumericError, ProtocolError
from .losses import CosFaceConfig, combined_loss, cosface_loss, kt_loss

STRATEGIES = ("CLS", "KT", "CL")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 64
    milestones: tuple[int, ...] = (40, 48, 52)
    seed: int = 0
    # std of optional Gaussian feature jitter (0 disables augmentation)
    jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        ms = self.milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {ms}")
        if ms and (ms[0] < 0 or ms[-1] >= self.epochs):
            raise ConfigError(f"milestones must lie in [0, epochs), got {ms}")
        if self.jitter < 0:
            raise ConfigError("jitter must be nonnegative")


@dataclass(frozen=True)
class Strategy:
    variant: str
    alpha: float | None = None

    def __post_init__(self):
        if self.variant not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.variant!r}")
        if self.variant == "CL":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ConfigError("CL requires alpha in [0, 1]")
        elif self.alpha is not None:
            raise ConfigError(f"{self.variant} takes no alpha")

    @property
    def needs_teacher(self) -> bool:
        return self.variant in ("KT", "CL")

    @property
    def needs_head(self) -> bool:
        return self.variant in ("CLS", "CL")

    @property
    def name(self) -> str:
        return f"CL({self.alpha:g})" if self.variant == "CL" else self.variant

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        """Accepts ``CLS``, ``KT``, ``CL(1e-05)`` or ``CL:1e-5``."""
        text = text.strip()
        if text.startswith("CL(") and text.endswith(")"):
            return cls("CL", float(text[3:-1]))
        if text.startswith("CL:"):
            return cls("CL", float(text[3:]))
        return cls(text)


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_lr: list[float] = field(default_factory=list)
    epochs: int = 0
    seconds: float = 0.0

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,lr,mean_loss\n")
            for e, (lr, loss) in enumerate(zip(self.epoch_lr, self.epoch_loss)):
                fh.write(f"{e},{lr!r},{loss!r}\n")


def lr_at(epoch: int, opt: OptimizerConfig) -> float:
    drops = sum(1 for m in opt.milestones if m <= epoch)
    return opt.learning_rate / 10**drops


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
):
    """In-place momentum SGD with weight decay folded into the gradient::

        v <- momentum * v + (grad + weight_decay * theta)
        theta <- theta - lr * v
    """
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise DimensionError(f"shape mismatch {p.shape}, {g.shape}, {v.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return params, velocity


def _check_inputs(model, head, data, strategy, teacher):
    cfg = model.config
    if data.input_dim != cfg.input_dim:
        raise DimensionError(f"data has {data.input_dim} features, model expects {cfg.input_dim}")
    if strategy.needs_teacher:
        if teacher is None:
            raise ConfigError(f"strategy {strategy.name} requires a teacher model")
        if teacher.config.input_dim != data.input_dim:
            raise DimensionError("teacher input_dim does not match the data")
        if teacher.config.embedding_dim != cfg.embedding_dim:
            raise DimensionError("teacher and student embedding_dim differ")
    if strategy.needs_head:
        if head is None:
            raise ConfigError(f"strategy {strategy.name} requires a classification head")
        if head.embedding_dim != cfg.embedding_dim:
            raise DimensionError("head rows must equal embedding_dim")
        if head.num_classes != data.num_classes:
            raise ProtocolError(f"head has {head.num_classes} classes, data has {data.num_classes}")
        if data.labels.size and (data.labels.min() < 0 or data.labels.max() >= head.num_classes):
            raise ProtocolError("label out of range for the head")


def train(
    model: EmbeddingModel,
    head: ClassificationHead | None,
    data: LabeledDataset,
    strategy: Strategy,
    opt: OptimizerConfig,
    teacher: EmbeddingModel | None = None,
    cosface: CosFaceConfig = CosFaceConfig(),
):
    """Train ``model`` (and ``head`` for CLS/CL) in place.

    Returns ``(model, head, report)``.  Shuffling and jitter are driven by
    ``opt.seed`` only, so the KT path is independent of the labels.
    """
    _check_inputs(model, head, data, strategy, teacher)
    rng = np.random.default_rng(opt.seed)
    params = model.params()
    if strategy.needs_head:
        params = params + [head.weight]
    velocity = [np.zeros_like(p) for p in params]
    report = TrainReport()
    started = time.perf_counter()
    m = len(data)

    for epoch in range(opt.epochs):
        lr = lr_at(epoch, opt)
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            x = data.samples[idx]
            if opt.jitter > 0:
                x = x + opt.jitter * rng.standard_normal(x.shape)
            emb, cache = forward(model, x)
            if strategy.variant == "CLS":
                out = cosface_loss(emb, data.labels[idx], head, cosface)
            else:
                target, _ = forward(teacher, x)
                if strategy.variant == "KT":
                    out = kt_loss(emb, target)
                else:
                    out = combined_loss(emb, data.labels[idx], head, target, strategy.alpha, cosface)
            if not np.isfinite(out.value):
                raise NumericError(f"epoch {epoch}: loss is not finite")
            grads = backward(model, cache, out.grad_embeddings)
            if strategy.needs_head:
                grads.append(out.grad_head)
            try:
                sgd_step(params, grads, velocity, lr, opt.momentum, opt.weight_decay)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch at {start}: {exc}") from exc
            model.mark_updated()
            total += out.value * len(idx)
        report.epoch_loss.append(total / m)
        report.epoch_lr.append(lr)

    report.epochs = opt.epochs
    report.seconds = time.perf_counter() - started
    return model, head, report
