"""Flat ``key = value`` configuration files and seed derivation.

Blank lines and lines starting with ``#`` are ignored.  List values are
comma-separated (``subsets = 10, 20, 40, 60``).  Every key has a default;
unknown keys are configuration errors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from typing import Any

from .embedder import ModelConfig
from .errors import ConfigError
from .losses import CosFaceConfig
from .trainer import OptimizerConfig, Strategy


def derive_seed(master: int, stage: str, rep: int = 0) -> int:
    """64-bit seed for one pipeline stage: first 8 bytes of
    ``sha256(f"{master}:{stage}:{rep}")``, little-endian."""
    digest = hashlib.sha256(f"{int(master)}:{stage}:{int(rep)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv_file(path) -> dict[str, str]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_kv_text(text, str(path))


def _convert(key: str, raw: str, default: Any):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(v) for v in items)
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _FlatConfig:
    """Mixin: build from / render to flat key-value text."""

    @classmethod
    def from_mapping(cls, values: dict[str, str]):
        defaults = cls()
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs = {k: _convert(k, v, getattr(defaults, k)) for k, v in values.items()}
        return replace(defaults, **kwargs)

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(read_kv_file(path))

    def to_text(self, exclude: tuple[str, ...] = ()) -> str:
        return "".join(
            f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self) if f.name not in exclude
        )

    def as_dict(self, exclude: tuple[str, ...] = ()) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in exclude}


@dataclass(frozen=True)
class TrainConfig(_FlatConfig):
    """Model, loss and optimizer settings for a single training run."""

    hidden_dims: tuple[int, ...] = (128,)
    embedding_dim: int = 64
    activation: str = "relu"
    margin: float = 0.35
    scale: float = 64.0
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 64
    milestones: tuple[int, ...] = (40, 48, 52)
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.cosface()
        self.optimizer()

    def model(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim, self.hidden_dims, self.embedding_dim, self.activation, derive_seed(self.seed, "student_init")
        )

    def head_seed(self) -> int:
        return derive_seed(self.seed, "student_head")

    def cosface(self) -> CosFaceConfig:
        return CosFaceConfig(self.margin, self.scale)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.milestones,
            derive_seed(self.seed, "student_train"),
            self.jitter,
        )


@dataclass(frozen=True)
class ExperimentConfig(_FlatConfig):
    """Everything the end-to-end pipeline needs.

    ``classes``, ``per_class``, ``sigma_intra``, ``identity_dim`` and
    ``nuisance`` describe the authentic source; ``leakage``, ``synth_sigma``,
    ``synth_per_class``, ``fresh`` and ``reproduce_variation`` the fitted
    generator.  ``id_leakages`` are the leakage values probed by the
    identification stage and ``link_subset`` is the synthetic subset size
    used by the linkage report.
    """

    # authentic source
    classes: int = 100
    per_class: int = 60
    input_dim: int = 64
    identity_dim: int = 8
    sigma_intra: float = 0.2
    nuisance: float = 0.4
    # generator
    leakage: float = 0.5
    synth_sigma: float = 0.2
    synth_per_class: int = 60
    fresh: str = "fitted"
    reproduce_variation: float = 1.0
    # model and loss
    hidden_dims: tuple[int, ...] = (128,)
    embedding_dim: int = 64
    activation: str = "relu"
    margin: float = 0.35
    scale: float = 64.0
    # optimizer
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    jitter: float = 0.0
    teacher_epochs: int = 32
    teacher_milestones: tuple[int, ...] = (20, 28)
    student_epochs: int = 64
    student_milestones: tuple[int, ...] = (40, 48, 52)
    # grid
    strategies: tuple[str, ...] = ("CLS", "KT", "CL")
    alphas: tuple[float, ...] = (1e-5, 2e-5)
    subsets: tuple[int, ...] = (10, 20, 40, 60)
    # evaluation
    link_subset: int = 10
    id_leakages: tuple[float, ...] = (0.0, 0.25)
    id_per_class: int = 10
    heldout_classes: int = 100
    heldout_per_class: int = 10
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        if self.per_class < 3 or self.synth_per_class < 3:
            raise ConfigError("per_class and synth_per_class must be at least 3 for the pair protocol")
        if not self.subsets:
            raise ConfigError("subsets must not be empty")
        too_big = [n for n in self.subsets + (self.link_subset,) if not 1 <= n <= self.synth_per_class]
        if too_big:
            raise ConfigError(f"subset sizes must lie in [1, synth_per_class={self.synth_per_class}], got {too_big}")
        if self.link_subset < 3:
            raise ConfigError("link_subset must be at least 3 for the pair protocol")
        if self.heldout_classes < 2 or self.heldout_per_class < 2:
            raise ConfigError("held-out set needs at least 2 classes with 2 samples")
        if self.id_per_class < 1:
            raise ConfigError("id_per_class must be positive")
        if not 0.0 <= self.leakage <= 1.0 or any(not 0.0 <= v <= 1.0 for v in self.id_leakages):
            raise ConfigError("leakage values must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if not self.strategies:
            raise ConfigError("strategies must not be empty")
        self.strategy_list()
        self.model_config(0)
        self.cosface()
        self.teacher_optimizer(0)
        self.student_optimizer(0)

    def strategy_list(self) -> list[Strategy]:
        out = []
        for name in self.strategies:
            if name == "CL":
                if not self.alphas:
                    raise ConfigError("strategy CL needs at least one alpha")
                out.extend(Strategy("CL", a) for a in self.alphas)
            else:
                out.append(Strategy.parse(name))
        names = [s.name for s in out]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate strategies in {names}")
        return out

    def model_config(self, init_seed: int) -> ModelConfig:
        return ModelConfig(self.input_dim, self.hidden_dims, self.embedding_dim, self.activation, init_seed)

    def cosface(self) -> CosFaceConfig:
        return CosFaceConfig(self.margin, self.scale)

    def _optimizer(self, epochs, milestones, seed) -> OptimizerConfig:
        return OptimizerConfig(
            self.learning_rate, self.momentum, self.weight_decay, self.batch_size, epochs, milestones, seed, self.jitter
        )

    def teacher_optimizer(self, seed: int) -> OptimizerConfig:
        return self._optimizer(self.teacher_epochs, self.teacher_milestones, seed)

    def student_optimizer(self, seed: int) -> OptimizerConfig:
        return self._optimizer(self.student_epochs, self.student_milestones, seed)
