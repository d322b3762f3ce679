"""Biometric evaluation: pair protocols, cosine scores, EER / FMR-point metrics,
verification accuracy, top-1 identification, and cross-dataset linkage.

Conventions
-----------
* A comparison with score ``>= t`` is a match.
* ``FMR(t)`` is the fraction of imposter scores ``>= t``; ``FNMR(t)`` the
  fraction of genuine scores ``< t``.
* Candidate thresholds are every distinct score, every midpoint between
  adjacent distinct scores, and one value just above the largest score
  (where nothing matches).  Ties between candidates go to the smallest
  threshold.
* Rates are kept as exact :class:`fractions.Fraction` counts and only turned
  into floats for display.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .datagen import LabeledDataset
from .embedder import ClassificationHead, EmbeddingModel, forward
from .errors import DegenerateInputError, DimensionError, InputError, ProtocolError

FMR100 = 0.01
FMR1000 = 0.001


@dataclass
class PairProtocol:
    references: np.ndarray
    probes: np.ndarray


@dataclass
class ScoreSet:
    genuine: np.ndarray
    imposter: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.imposter = np.asarray(self.imposter, dtype=np.float64).reshape(-1)
        for name in ("genuine", "imposter"):
            s = getattr(self, name)
            if not np.all(np.isfinite(s)):
                raise InputError(f"{name} scores must be finite")

    def require_nonempty(self):
        if self.genuine.size == 0 or self.imposter.size == 0:
            raise ProtocolError("both genuine and imposter scores are required")


@dataclass
class VerificationReport:
    eer: Fraction
    eer_threshold: float
    fmr100: Fraction
    fmr100_threshold: float
    fmr1000: Fraction
    fmr1000_threshold: float
    n_genuine: int
    n_imposter: int

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LinkageReport:
    intra_authentic: VerificationReport
    intra_synthetic: VerificationReport
    cross: VerificationReport
    expected_nonmatches_per_100: Fraction


# ---------------------------------------------------------------- embeddings


def embed(model: EmbeddingModel | None, samples: np.ndarray) -> np.ndarray:
    """Embed rows of ``samples``; ``model=None`` scores the raw features."""
    samples = np.asarray(samples, dtype=np.float64)
    if model is None:
        return samples.copy()
    if samples.ndim != 2 or samples.shape[1] != model.config.input_dim:
        raise DimensionError(f"expected (M, {model.config.input_dim}) samples, got {samples.shape}")
    if samples.shape[0] == 0:
        return np.zeros((0, model.config.embedding_dim))
    emb, _ = forward(model, samples)
    return emb


def embed_dataset(model: EmbeddingModel | None, ds: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    return embed(model, ds.samples), ds.labels.copy()


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise DegenerateInputError("zero-norm embedding")
    return x / n


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.clip(_unit_rows(a) @ _unit_rows(b).T, -1.0, 1.0)


# ------------------------------------------------------------------- protocol


def build_protocol(ds: LabeledDataset) -> PairProtocol:
    """First two samples of each class (dataset order) are references, the rest probes."""
    counts = ds.class_counts()
    short = np.flatnonzero(counts < 3)
    if short.size:
        raise ProtocolError(f"class {int(short[0])} has fewer than 3 samples")
    refs = []
    is_ref = np.zeros(len(ds), dtype=bool)
    for c in range(ds.num_classes):
        first_two = ds.class_indices(c)[:2]
        refs.extend(first_two.tolist())
        is_ref[first_two] = True
    return PairProtocol(np.array(refs, dtype=np.int64), np.flatnonzero(~is_ref))


def collect_scores(ref_emb, ref_labels, probe_emb, probe_labels) -> ScoreSet:
    """Score every (reference, probe) pair; order is reference-major, probe-minor."""
    ref_emb = np.asarray(ref_emb, dtype=np.float64)
    probe_emb = np.asarray(probe_emb, dtype=np.float64)
    ref_labels = np.asarray(ref_labels)
    probe_labels = np.asarray(probe_labels)
    if len(ref_emb) == 0 or len(probe_emb) == 0:
        raise ProtocolError("references and probes must both be non-empty")
    if ref_emb.shape[1] != probe_emb.shape[1]:
        raise DimensionError("reference and probe embeddings differ in width")
    scores = cosine_matrix(ref_emb, probe_emb)
    same = ref_labels[:, None] == probe_labels[None, :]
    return ScoreSet(scores[same], scores[~same])


# -------------------------------------------------------------------- metrics


def candidate_thresholds(s: ScoreSet) -> np.ndarray:
    u = np.unique(np.concatenate([s.genuine, s.imposter]))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2.0
    above = np.nextafter(u[-1], np.inf)
    return np.unique(np.concatenate([u, mids, [above]]))


def _error_counts(s: ScoreSet, t: np.ndarray):
    """(imposter matches, genuine non-matches) at each threshold."""
    imp = np.sort(s.imposter)
    gen = np.sort(s.genuine)
    false_matches = imp.size - np.searchsorted(imp, t, side="left")
    false_nonmatches = np.searchsorted(gen, t, side="left")
    return false_matches, false_nonmatches


def _eer_fraction(s: ScoreSet) -> tuple[Fraction, float]:
    s.require_nonempty()
    t = candidate_thresholds(s)
    fm, fnm = _error_counts(s, t)
    ng, ni = s.genuine.size, s.imposter.size
    # |fm/ni - fnm/ng| compared on a common denominator, exact in integers
    gap = np.abs(fm.astype(np.int64) * ng - fnm.astype(np.int64) * ni)
    k = int(np.argmin(gap))
    eer = (Fraction(int(fm[k]), ni) + Fraction(int(fnm[k]), ng)) / 2
    return eer, float(t[k])


def compute_eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and the threshold where ``|FMR - FNMR|`` is smallest."""
    eer, t = _eer_fraction(s)
    return float(eer), t


def _fmr_point_fraction(s: ScoreSet, fmr_bound: float) -> tuple[Fraction, float]:
    s.require_nonempty()
    if not 0.0 < fmr_bound < 1.0:
        raise ProtocolError(f"fmr_bound must lie in (0, 1), got {fmr_bound}")
    bound = Fraction(repr(float(fmr_bound)))
    t = candidate_thresholds(s)
    fm, fnm = _error_counts(s, t)
    ni = s.imposter.size
    feasible = fm * bound.denominator <= bound.numerator * ni
    # FNMR is nondecreasing in t, so the smallest feasible threshold wins
    k = int(np.flatnonzero(feasible)[0])
    return Fraction(int(fnm[k]), s.genuine.size), float(t[k])


def compute_fmr_point(s: ScoreSet, fmr_bound: float) -> tuple[float, float]:
    """Lowest FNMR subject to ``FMR <= fmr_bound`` and the smallest threshold reaching it."""
    fnmr, t = _fmr_point_fraction(s, fmr_bound)
    return float(fnmr), t


def verification_accuracy(s: ScoreSet) -> tuple[float, float]:
    """Best fraction of correctly decided comparisons over all candidate thresholds."""
    s.require_nonempty()
    t = candidate_thresholds(s)
    fm, fnm = _error_counts(s, t)
    correct = (s.genuine.size - fnm) + (s.imposter.size - fm)
    k = int(np.argmax(correct))
    return float(Fraction(int(correct[k]), s.genuine.size + s.imposter.size)), float(t[k])


def verification_report(s: ScoreSet) -> VerificationReport:
    eer, eer_t = _eer_fraction(s)
    f100, t100 = _fmr_point_fraction(s, FMR100)
    f1000, t1000 = _fmr_point_fraction(s, FMR1000)
    return VerificationReport(eer, eer_t, f100, t100, f1000, t1000, s.genuine.size, s.imposter.size)


# ------------------------------------------------------------- identification


def identification_top1(embeddings, labels, head: ClassificationHead) -> float:
    """Fraction of rows whose best-matching class center is the true label.

    A row whose maximum cosine is shared by several classes counts as an error.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or embeddings.shape[1] != head.embedding_dim:
        raise DimensionError(f"embeddings must be (M, {head.embedding_dim})")
    if labels.size and labels.max() >= head.num_classes:
        raise ProtocolError("head does not cover every label")
    if labels.size == 0:
        raise ProtocolError("no samples to identify")
    cos = _unit_rows(embeddings) @ head.centers()
    best = cos.max(axis=1)
    winners = (cos == best[:, None]).sum(axis=1)
    hit = (cos[np.arange(len(labels)), labels] == best) & (winners == 1)
    return float(np.mean(hit))


# -------------------------------------------------------------------- linkage


def linkage_from_scores(authentic: ScoreSet, synthetic: ScoreSet, cross: ScoreSet) -> LinkageReport:
    cross_report = verification_report(cross)
    return LinkageReport(
        verification_report(authentic),
        verification_report(synthetic),
        cross_report,
        100 * cross_report.fmr1000,
    )


def linkage_scores(
    authentic: LabeledDataset,
    synthetic: LabeledDataset,
    scorer: EmbeddingModel | None,
    synthetic_scorer: EmbeddingModel | None = None,
) -> tuple[ScoreSet, ScoreSet, ScoreSet]:
    """Intra-authentic, intra-synthetic and cross score sets.

    Class ``c`` of the synthetic set is taken to be identity ``c`` of the
    authentic set.  Cross comparisons use authentic references against
    synthetic probes.  ``synthetic_scorer`` defaults to ``scorer``.
    """
    if authentic.num_classes != synthetic.num_classes:
        raise ProtocolError("authentic and synthetic class spaces differ")
    if synthetic_scorer is None:
        synthetic_scorer = scorer
    pa, ps = build_protocol(authentic), build_protocol(synthetic)
    ea, la = embed_dataset(scorer, authentic)
    es, ls = embed_dataset(synthetic_scorer, synthetic)
    intra_a = collect_scores(ea[pa.references], la[pa.references], ea[pa.probes], la[pa.probes])
    intra_s = collect_scores(es[ps.references], ls[ps.references], es[ps.probes], ls[ps.probes])
    cross = collect_scores(ea[pa.references], la[pa.references], es[ps.probes], ls[ps.probes])
    return intra_a, intra_s, cross


def linkage_report(
    authentic: LabeledDataset,
    synthetic: LabeledDataset,
    scorer: EmbeddingModel | None,
    synthetic_scorer: EmbeddingModel | None = None,
) -> LinkageReport:
    return linkage_from_scores(*linkage_scores(authentic, synthetic, scorer, synthetic_scorer))


# ------------------------------------------------------------------- exports


def histogram_export(s: ScoreSet, bins: int = 50):
    """Uniform bins over ``[-1, 1]``; returns ``(edges, genuine_counts, imposter_counts)``."""
    if bins < 2:
        raise ProtocolError("need at least two bins")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    g, _ = np.histogram(s.genuine, bins=edges)
    i, _ = np.histogram(s.imposter, bins=edges)
    return edges, g, i


def write_histogram_csv(path, edges, genuine_counts, imposter_counts) -> None:
    with open(path, "w") as fh:
        fh.write("bin_low,bin_high,genuine_count,imposter_count\n")
        for lo, hi, g, i in zip(edges[:-1], edges[1:], genuine_counts, imposter_counts):
            fh.write(f"{float(lo)!r},{float(hi)!r},{int(g)},{int(i)}\n")


def read_histogram_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    lo = [float(r["bin_low"]) for r in rows]
    edges = np.array(lo + [float(rows[-1]["bin_high"])])
    g = np.array([int(r["genuine_count"]) for r in rows])
    i = np.array([int(r["imposter_count"]) for r in rows])
    return edges, g, i


def write_scores_csv(path, s: ScoreSet) -> None:
    with open(path, "w") as fh:
        fh.write("kind,score\n")
        for v in s.genuine.tolist():
            fh.write(f"genuine,{v!r}\n")
        for v in s.imposter.tolist():
            fh.write(f"imposter,{v!r}\n")


def read_scores_csv(path) -> ScoreSet:
    genuine, imposter = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["kind"]
            if kind == "genuine":
                genuine.append(float(row["score"]))
            elif kind == "imposter":
                imposter.append(float(row["score"]))
            else:
                raise InputError(f"{path}: unknown score kind {kind!r}")
    return ScoreSet(genuine, imposter)


def percent(x: Fraction | float) -> str:
    """Percentage with three decimals, e.g. ``Fraction(1, 3) -> '33.333'``."""
    return f"{float(x) * 100:.3f}"


def report_lines(r: VerificationReport, prefix: str = "") -> list[str]:
    return [
        f"{prefix}eer = {percent(r.eer)}",
        f"{prefix}eer_threshold = {r.eer_threshold!r}",
        f"{prefix}fmr100 = {percent(r.fmr100)}",
        f"{prefix}fmr100_threshold = {r.fmr100_threshold!r}",
        f"{prefix}fmr1000 = {percent(r.fmr1000)}",
        f"{prefix}fmr1000_threshold = {r.fmr1000_threshold!r}",
        f"{prefix}n_genuine = {r.n_genuine}",
        f"{prefix}n_imposter = {r.n_imposter}",
    ]


def linkage_lines(r: LinkageReport) -> list[str]:
    return (
        report_lines(r.intra_authentic, "intra_authentic.")
        + report_lines(r.intra_synthetic, "intra_synthetic.")
        + report_lines(r.cross, "cross.")
        + [f"expected_nonmatches_per_100 = {float(r.expected_nonmatches_per_100)!r}"]
    )


def write_report(path, lines: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
