"""Training losses: large-margin cosine softmax, embedding regression, and their blend.

All gradients are taken with respect to the raw (unnormalized) embeddings and
class-center weights; normalization happens inside the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedder import ClassificationHead
from .errors import ConfigError, DegenerateInputError, DimensionError, ProtocolError


@dataclass(frozen=True)
class CosFaceConfig:
    margin: float = 0.35
    scale: float = 64.0

    def __post_init__(self):
        if not 0.0 <= self.margin < 1.0:
            raise ConfigError(f"margin must lie in [0, 1), got {self.margin}")
        if not self.scale > 0.0:
            raise ConfigError(f"scale must be positive, got {self.scale}")


@dataclass
class LossOutput:
    value: float
    grad_embeddings: np.ndarray
    grad_head: np.ndarray | None = None


def _head_matrix(W) -> np.ndarray:
    return W.weight if isinstance(W, ClassificationHead) else np.asarray(W, dtype=np.float64)


def cosine_logits(F: np.ndarray, W) -> np.ndarray:
    """Cosine between every embedding row and every class center, shape ``(N, C)``."""
    F = np.asarray(F, dtype=np.float64)
    W = _head_matrix(W)
    fn = np.linalg.norm(F, axis=1, keepdims=True)
    wn = np.linalg.norm(W, axis=0, keepdims=True)
    if np.any(fn == 0.0):
        raise DegenerateInputError("zero-norm embedding row")
    if np.any(wn == 0.0):
        raise DegenerateInputError("zero-norm class-center column")
    return (F / fn) @ (W / wn)


def cosface_loss(F, labels, W, cfg: CosFaceConfig = CosFaceConfig()) -> LossOutput:
    """Mean large-margin cosine loss over the batch.

    The target logit is ``s * (cos - m)``, all other logits ``s * cos``.
    """
    F = np.asarray(F, dtype=np.float64)
    Wm = _head_matrix(W)
    labels = np.asarray(labels)
    if F.ndim != 2 or F.shape[0] < 1:
        raise DimensionError(f"embeddings must be a non-empty (N, d) matrix, got {F.shape}")
    if Wm.ndim != 2 or Wm.shape[0] != F.shape[1]:
        raise DimensionError(f"head must have shape ({F.shape[1]}, C), got {Wm.shape}")
    n, _ = F.shape
    c = Wm.shape[1]
    if c < 2:
        raise ConfigError("need at least two classes")
    if labels.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ProtocolError(f"labels must lie in [0, {c})")

    fn = np.linalg.norm(F, axis=1, keepdims=True)
    wn = np.linalg.norm(Wm, axis=0, keepdims=True)
    if np.any(fn == 0.0):
        raise DegenerateInputError("zero-norm embedding row")
    if np.any(wn == 0.0):
        raise DegenerateInputError("zero-norm class-center column")
    Fh = F / fn
    Wh = Wm / wn
    cos = Fh @ Wh

    rows = np.arange(n)
    logits = cfg.scale * cos
    logits[rows, labels] -= cfg.scale * cfg.margin
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    denom = e.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(denom[:, 0])
    value = float(np.mean(lse - logits[rows, labels]))

    # dL/dcos, then through the two normalizations
    G = e / denom
    G[rows, labels] -= 1.0
    G *= cfg.scale / n
    dFh = G @ Wh.T
    dWh = Fh.T @ G
    dF = (dFh - Fh * np.sum(dFh * Fh, axis=1, keepdims=True)) / fn
    dW = (dWh - Wh * np.sum(dWh * Wh, axis=0, keepdims=True)) / wn
    return LossOutput(value, dF, dW)


def kt_loss(F_S, F_P) -> LossOutput:
    """Mean squared error between student and (frozen) teacher embeddings."""
    F_S = np.asarray(F_S, dtype=np.float64)
    F_P = np.asarray(F_P, dtype=np.float64)
    if F_S.shape != F_P.shape or F_S.ndim != 2:
        raise DimensionError(f"student and teacher embeddings differ in shape: {F_S.shape} vs {F_P.shape}")
    if F_S.shape[0] < 1:
        raise DimensionError("empty batch")
    n, d = F_S.shape
    diff = F_S - F_P
    value = float(np.mean(np.mean(diff * diff, axis=1)))
    return LossOutput(value, 2.0 * diff / (n * d), None)


def combined_loss(F_S, labels, W, F_P, alpha: float, cfg: CosFaceConfig = CosFaceConfig()) -> LossOutput:
    """``alpha * cosface + (1 - alpha) * kt`` with gradients blended the same way."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    cf = cosface_loss(F_S, labels, W, cfg)
    kt = kt_loss(F_S, F_P)
    beta = 1.0 - alpha
    return LossOutput(
        alpha * cf.value + beta * kt.value,
        alpha * cf.grad_embeddings + beta * kt.grad_embeddings,
        alpha * cf.grad_head,
    )
