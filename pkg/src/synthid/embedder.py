"""Fully connected embedding network with a hand-written backward pass.

Layers compute ``h = act(x @ W + b)`` with ``W`` stored as ``(fan_in, fan_out)``.
The last layer is linear unless ``output_activation`` is set.  Everything is
float64 so that central finite differences at ``eps=1e-5`` are meaningful.

Model file layout (all integers and floats little-endian)::

    bytes 0..7    magic  b"SIDMDL01"
    bytes 8..11   uint32 length L of the config block
    next L bytes  UTF-8 JSON object, keys sorted: activation, embedding_dim,
                  head_classes, hidden_dims, init_seed, input_dim,
                  output_activation
    remainder     float64 arrays, row-major, in order
                  W0, b0, W1, b1, ..., W_last, b_last[, head (d x C)]

``head_classes`` is 0 when no classification head is stored.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    InputError,
    NumericError,
    StateError,
)

ACTIVATIONS = ("relu", "tanh")
MODEL_MAGIC = b"SIDMDL01"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (128,)
    embedding_dim: int = 64
    activation: str = "relu"
    init_seed: int = 0
    output_activation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        for name, value in [("input_dim", self.input_dim), ("embedding_dim", self.embedding_dim)]:
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0 <= int(self.init_seed) < 2**64:
            raise ConfigError("init_seed must fit in an unsigned 64-bit integer")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.embedding_dim]


@dataclass
class EmbeddingModel:
    config: ModelConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # bumped whenever parameters are modified through ``mark_updated``
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        dims = self.config.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DimensionError("number of layers does not match config")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise DimensionError(
                    f"layer {k}: expected W {(dims[k], dims[k + 1])} and b {(dims[k + 1],)}, "
                    f"got {W.shape} and {b.shape}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def mark_updated(self) -> None:
        self.version += 1

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.config,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class ClassificationHead:
    """Class-center matrix of shape ``(d, C)``; column ``j`` is class ``j``."""

    weight: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[1] < 2:
            raise ConfigError("head needs a (d, C) weight matrix with C >= 2")
        if not np.all(np.isfinite(self.weight)):
            raise InputError("head weights must be finite")

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.weight.shape[0]

    def centers(self) -> np.ndarray:
        """Unit-normalized class centers, one per column."""
        return self.weight / np.linalg.norm(self.weight, axis=0, keepdims=True)

    def copy(self) -> "ClassificationHead":
        return ClassificationHead(self.weight.copy())


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    model_id: int
    model_version: int


def init_model(cfg: ModelConfig) -> EmbeddingModel:
    """Fan-in scaled uniform weights, zero biases, deterministic in ``init_seed``."""
    rng = np.random.default_rng(cfg.init_seed)
    dims = cfg.layer_dims
    weights, biases = [], []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        activated = k < len(dims) - 2 or cfg.output_activation
        gain = 2.0 if (activated and cfg.activation == "relu") else 1.0
        bound = np.sqrt(3.0 * gain / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(cfg, weights, biases)


def init_head(embedding_dim: int, num_classes: int, seed: int) -> ClassificationHead:
    rng = np.random.default_rng(seed)
    return ClassificationHead(rng.standard_normal((embedding_dim, num_classes)))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        # subgradient at exactly 0 is 0
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _is_activated(model: EmbeddingModel, layer: int) -> bool:
    return layer < model.num_layers - 1 or model.config.output_activation


def forward(model: EmbeddingModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch of shape ``(N, input_dim)``.

    Returns the ``(N, d)`` embeddings and the cache consumed by :func:`backward`.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise DimensionError(
            f"batch must have shape (N, {model.config.input_dim}), got {x.shape}"
        )
    if x.shape[0] < 1:
        raise DimensionError("batch must contain at least one row")
    if not np.all(np.isfinite(x)):
        raise InputError("batch contains non-finite values")

    inputs, preacts = [], []
    h = x
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ W + b
        preacts.append(z)
        h = _activate(z, model.config.activation) if _is_activated(model, k) else z
    if not np.all(np.isfinite(h)):
        raise NumericError("forward pass produced non-finite embeddings")
    return h, ForwardCache(inputs, preacts, id(model), model.version)


def backward(model: EmbeddingModel, cache: ForwardCache, upstream: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients given ``upstream = dLoss/dEmbeddings``.

    The result is ordered like :meth:`EmbeddingModel.params`.
    """
    if cache.model_id != id(model) or cache.model_version != model.version:
        raise StateError("cache was produced by a different model or an earlier parameter state")
    n = cache.inputs[0].shape[0]
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (n, model.config.embedding_dim):
        raise DimensionError(f"upstream must have shape {(n, model.config.embedding_dim)}, got {g.shape}")

    grads: list[np.ndarray] = [None] * (2 * model.num_layers)  # type: ignore[list-item]
    for k in reversed(range(model.num_layers)):
        if _is_activated(model, k):
            g = g * _activation_grad(cache.preacts[k], model.config.activation)
        grads[2 * k] = cache.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = g @ model.weights[k].T
    return grads


def grad_check(
    params: EmbeddingModel | Sequence[np.ndarray],
    loss_closure: Callable[[], tuple[float, Sequence[np.ndarray]]],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_closure()`` evaluates the loss at the current contents of ``params``
    and returns ``(value, grads)`` with ``grads`` aligned to ``params``.  Entries
    are perturbed in place and restored.  With ``max_entries`` set, that many
    entries per array are sampled; otherwise every entry is checked.

    Returns the maximum of ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 0 < eps <= 1e-2:
        raise ConfigError(f"eps must lie in (0, 1e-2], got {eps}")
    arrays = params.params() if isinstance(params, EmbeddingModel) else list(params)
    value, grads = loss_closure()
    if not np.isfinite(value):
        raise NumericError("loss is not finite")
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(arrays, grads):
        flat = p.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = loss_closure()
            flat[i] = orig - eps
            down, _ = loss_closure()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss became non-finite under perturbation")
            numeric = (up - down) / (2 * eps)
            analytic = g.reshape(-1)[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst


def _config_block(cfg: ModelConfig, head_classes: int) -> bytes:
    doc = {
        "activation": cfg.activation,
        "embedding_dim": cfg.embedding_dim,
        "head_classes": head_classes,
        "hidden_dims": list(cfg.hidden_dims),
        "init_seed": int(cfg.init_seed),
        "input_dim": cfg.input_dim,
        "output_activation": bool(cfg.output_activation),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_model(path, model: EmbeddingModel, head: ClassificationHead | None = None) -> None:
    head_classes = 0 if head is None else head.num_classes
    if head is not None and head.embedding_dim != model.config.embedding_dim:
        raise DimensionError("head rows must equal embedding_dim")
    block = _config_block(model.config, head_classes)
    arrays = model.params() + ([head.weight] if head is not None else [])
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(block)))
        fh.write(block)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> tuple[EmbeddingModel, ClassificationHead | None]:
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise InputError(f"{path}: not a model file (bad magic)")
    (length,) = struct.unpack("<I", raw[8:12])
    doc = json.loads(raw[12 : 12 + length].decode("utf-8"))
    head_classes = doc.pop("head_classes")
    cfg = ModelConfig(**doc)
    offset = 12 + length
    dims = cfg.layer_dims

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise InputError(f"{path}: truncated parameter data")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
        return arr

    weights, biases = [], []
    for k in range(len(dims) - 1):
        weights.append(take((dims[k], dims[k + 1])))
        biases.append(take((dims[k + 1],)))
    head = ClassificationHead(take((cfg.embedding_dim, head_classes))) if head_classes else None
    if offset != len(raw):
        raise InputError(f"{path}: trailing bytes after parameter data")
    return EmbeddingModel(cfg, weights, biases), head
