"""Labeled identity data on the unit sphere: an "authentic" source and a
class-conditional prototype sampler fitted to it.

Every emitted sample is unit-normalized.  Samples are stored class-major: all
samples of class 0 first (in generation order), then class 1, and so on.

Dataset CSV layout: header ``label,f0,f1,...``; one row per sample; floats use
Python's shortest round-trip ``repr`` so files are byte-stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, InputError, ProtocolError

Provenance = Literal["authentic", "synthetic"]


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: Provenance = "authentic"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.labels.shape != (self.samples.shape[0],):
            raise InputError("samples must be (M, D) with one label per row")
        if self.provenance not in ("authentic", "synthetic"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ProtocolError(f"labels must lie in [0, {self.num_classes})")
        if np.any(self.class_counts() == 0):
            raise ProtocolError("every class needs at least one sample")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def class_indices(self, c: int) -> np.ndarray:
        """Row indices of class ``c`` in dataset order."""
        return np.flatnonzero(self.labels == c)

    def class_means(self) -> np.ndarray:
        """Per-class mean sample, shape ``(C, D)``."""
        sums = np.zeros((self.num_classes, self.input_dim))
        np.add.at(sums, self.labels, self.samples)
        return sums / self.class_counts()[:, None]


@dataclass
class GeneratorModel:
    """Class-conditional sampler: one unit prototype per class plus noise.

    Noise is isotropic with per-coordinate std ``sigma_intra``, plus
    ``variation_factor @ z`` (``z`` standard normal) when the generator was
    fitted to reproduce the authentic within-class variation.
    """

    prototypes: np.ndarray
    sigma_intra: float
    leakage: float
    seed: int
    variation_factor: np.ndarray | None = None

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        norms = np.linalg.norm(self.prototypes, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-12, rtol=0.0):
            raise InputError("generator prototypes must be unit vectors")
        if self.sigma_intra < 0:
            raise ConfigError("sigma_intra must be nonnegative")
        if not 0.0 <= self.leakage <= 1.0:
            raise ConfigError("leakage must lie in [0, 1]")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return _unit_rows(rng.standard_normal((count, dim)))


def _sample_around(prototypes, per_class, sigma, rng, factor=None, nuisance=0.0, identity_dim=None):
    c, dim = prototypes.shape
    x = prototypes[:, None, :] + sigma * rng.standard_normal((c, per_class, dim))
    if factor is not None:
        x += rng.standard_normal((c, per_class, dim)) @ factor.T
    if nuisance > 0.0:
        h = rng.standard_normal((c, per_class, dim - identity_dim))
        x[:, :, identity_dim:] += nuisance * h
    return _unit_rows(x.reshape(c * per_class, dim))


def make_authentic(
    num_classes: int,
    per_class: int,
    input_dim: int,
    sigma_intra: float,
    seed: int,
    *,
    identity_dim: int | None = None,
    nuisance: float = 0.0,
) -> LabeledDataset:
    """Random unit identity prototypes; each sample is the normalized prototype
    plus per-coordinate Gaussian noise of standard deviation ``sigma_intra``.

    With ``identity_dim < input_dim`` the prototypes occupy only the first
    ``identity_dim`` coordinates, and ``nuisance`` adds identity-independent
    Gaussian variation (per-coordinate std) to the remaining coordinates.
    The coordinate split is fixed, so datasets drawn with different seeds
    share the same identity and nuisance subspaces.
    """
    if num_classes < 2:
        raise ConfigError("need at least two classes")
    if per_class < 2:
        raise ConfigError("need at least two samples per class")
    if input_dim < 8:
        raise ConfigError("input_dim must be at least 8")
    if sigma_intra < 0 or nuisance < 0:
        raise ConfigError("noise scales must be nonnegative")
    identity_dim = input_dim if identity_dim is None else int(identity_dim)
    if not 2 <= identity_dim <= input_dim:
        raise ConfigError(f"identity_dim must lie in [2, {input_dim}]")
    if nuisance > 0.0 and identity_dim == input_dim:
        raise ConfigError("nuisance variation needs identity_dim < input_dim")
    rng = np.random.default_rng(seed)
    protos = np.zeros((num_classes, input_dim))
    protos[:, :identity_dim] = random_unit_vectors(rng, num_classes, identity_dim)
    samples = _sample_around(protos, per_class, sigma_intra, rng, nuisance=nuisance, identity_dim=identity_dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    return LabeledDataset(samples, labels, num_classes, "authentic")


def fit_generator(
    authentic: LabeledDataset,
    leakage: float,
    sigma_intra: float,
    seed: int,
    *,
    fresh: str = "isotropic",
    reproduce_variation: float = 0.0,
) -> GeneratorModel:
    """Synthetic prototype for class ``c`` is ``normalize(leakage * p_c + (1 - leakage) * r_c)``
    with ``p_c`` the normalized authentic class mean and ``r_c`` a fresh random unit vector.

    ``fresh="fitted"`` draws ``r_c`` from a Gaussian with the empirical covariance
    of the normalized class means (a new identity from the fitted identity
    distribution) instead of uniformly on the sphere.  ``reproduce_variation``
    scales a square-root factor of the pooled authentic within-class covariance
    that is added to the sampling noise.
    """
    if not 0.0 <= leakage <= 1.0:
        raise ConfigError(f"leakage must lie in [0, 1], got {leakage}")
    if sigma_intra < 0 or reproduce_variation < 0:
        raise ConfigError("noise scales must be nonnegative")
    if fresh not in ("isotropic", "fitted"):
        raise ConfigError(f"fresh must be 'isotropic' or 'fitted', got {fresh!r}")
    means = authentic.class_means()
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InputError("an authentic class mean has zero norm")
    p = means / norms
    dim = authentic.input_dim
    rng = np.random.default_rng(seed)
    if fresh == "isotropic":
        r = random_unit_vectors(rng, authentic.num_classes, dim)
    else:
        r = _unit_rows(rng.standard_normal(p.shape) @ _psd_factor(np.cov(p.T)).T)
    mixed = leakage * p + (1.0 - leakage) * r

    factor = None
    if reproduce_variation > 0.0:
        resid = authentic.samples - means[authentic.labels]
        factor = reproduce_variation * _psd_factor(resid.T @ resid / max(len(authentic) - authentic.num_classes, 1))
    return GeneratorModel(_unit_rows(mixed), float(sigma_intra), float(leakage), int(seed), factor)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == cov`` for a symmetric positive semidefinite ``cov``."""
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_synthetic(gen: GeneratorModel, k_per_class: int, seed: int) -> LabeledDataset:
    """Draw exactly ``k_per_class`` samples for every generator class."""
    if k_per_class < 1:
        raise ConfigError("k_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    samples = _sample_around(gen.prototypes, k_per_class, gen.sigma_intra, rng, factor=gen.variation_factor)
    labels = np.repeat(np.arange(gen.num_classes), k_per_class)
    return LabeledDataset(samples, labels, gen.num_classes, "synthetic")


def derive_subset(ds: LabeledDataset, n_per_class: int) -> LabeledDataset:
    """Keep the first ``n_per_class`` samples of every class, preserving row order."""
    if n_per_class < 1:
        raise ConfigError("n_per_class must be at least 1")
    counts = ds.class_counts()
    short = np.flatnonzero(counts < n_per_class)
    if short.size:
        raise ProtocolError(
            f"class {int(short[0])} has {int(counts[short[0]])} samples, fewer than {n_per_class}"
        )
    # rank of each row within its class, in dataset order
    rank = np.empty(len(ds), dtype=np.int64)
    seen = np.zeros(ds.num_classes, dtype=np.int64)
    for i, c in enumerate(ds.labels):
        rank[i] = seen[c]
        seen[c] += 1
    keep = rank < n_per_class
    return LabeledDataset(ds.samples[keep], ds.labels[keep], ds.num_classes, ds.provenance)


def write_dataset_csv(path, ds: LabeledDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(ds.input_dim)])
        for label, row in zip(ds.labels.tolist(), ds.samples.tolist()):
            w.writerow([label] + [repr(v) for v in row])


def read_dataset_csv(path, provenance: Provenance = "authentic", num_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise InputError(f"{path}: expected header starting with 'label'")
        labels, rows = [], []
        for line in reader:
            if len(line) != len(header):
                raise InputError(f"{path}: row {len(rows) + 2} has {len(line)} fields, expected {len(header)}")
            labels.append(int(line[0]))
            rows.append([float(v) for v in line[1:]])
    samples = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    labels = np.array(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(samples, labels, num_classes, provenance)
