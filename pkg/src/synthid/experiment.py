"""End-to-end study at desk scale.

Pipeline: authentic data -> teacher (CLS on authentic) -> fitted generator ->
synthetic data -> for every subset size and strategy a student -> held-out
verification, identification in both directions, and the linkage report.

Output layout under the results directory::

    config.txt                      resolved configuration
    data/authentic.csv              authentic training identities
    data/synthetic.csv              synthetic samples (synth_per_class per class)
    data/heldout.csv                fresh identities for held-out verification
    models/teacher.bin              teacher with its classification head
    models/SFace-<n>_<strategy>.bin students, e.g. SFace-10_CL-1e-05.bin
    train/<model name>.csv          per-epoch loss and learning rate
    reports/linkage.txt             intra-authentic, intra-synthetic, cross
    reports/scores_<kind>.csv       raw linkage scores
    reports/hist_<kind>.csv         50-bin score histograms
    reports/identification.csv      train data x evaluation data top-1 table
    summary.csv                     one row per (subset, strategy) plus baseline
    manifest.json                   version, config, seeds, checksums, status

All randomness comes from ``derive_seed(master, stage)``.  Every student
cell uses the same initialization and shuffling seeds, so strategy and
subset comparisons are paired.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Callable

import numpy as np

from .bioeval import (
    ScoreSet,
    embed,
    embed_dataset,
    histogram_export,
    identification_top1,
    linkage_from_scores,
    linkage_lines,
    linkage_scores,
    verification_accuracy,
    verification_report,
    write_histogram_csv,
    write_report,
    write_scores_csv,
)
from .config import ExperimentConfig, derive_seed
from .datagen import (
    LabeledDataset,
    derive_subset,
    fit_generator,
    make_authentic,
    sample_synthetic,
    write_dataset_csv,
)
from .embedder import EmbeddingModel, init_head, init_model, save_model
from .errors import ToolkitError
from .trainer import Strategy, train

SUMMARY_COLUMNS = ("dataset", "strategy", "verify_acc", "eer", "fmr100", "fmr1000", "id_top1_synth", "id_top1_auth")


class StageError(ToolkitError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def toolkit_version() -> str:
    try:
        return metadata.version("synthid")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ------------------------------------------------------------ held-out pairs


@dataclass
class PairSet:
    """Index pairs into one dataset: all genuine pairs, equally many imposters."""

    genuine: np.ndarray  # (G, 2)
    imposter: np.ndarray  # (G, 2)


def balanced_pairs(ds: LabeledDataset, seed: int) -> PairSet:
    """Every within-class pair plus the same number of random cross-class pairs."""
    gen = []
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        a, b = np.triu_indices(len(idx), k=1)
        gen.append(np.stack([idx[a], idx[b]], axis=1))
    genuine = np.concatenate(gen)
    rng = np.random.default_rng(seed)
    picked = np.zeros((0, 2), dtype=np.int64)
    while len(picked) < len(genuine):
        cand = rng.integers(0, len(ds), size=(2 * len(genuine), 2))
        cand = cand[ds.labels[cand[:, 0]] != ds.labels[cand[:, 1]]]
        picked = np.concatenate([picked, cand])
    return PairSet(genuine, picked[: len(genuine)])


def pair_scores(model: EmbeddingModel | None, ds: LabeledDataset, pairs: PairSet) -> ScoreSet:
    e = embed(model, ds.samples)
    e = e / np.linalg.norm(e, axis=1, keepdims=True)

    def score(p):
        return np.clip(np.sum(e[p[:, 0]] * e[p[:, 1]], axis=1), -1.0, 1.0)

    return ScoreSet(score(pairs.genuine), score(pairs.imposter))


# ------------------------------------------------------------------ results


@dataclass
class SummaryRow:
    dataset: str
    strategy: str
    verify_acc: float
    eer: float
    fmr100: float
    fmr1000: float
    id_top1_synth: float
    id_top1_auth: float

    def cells(self) -> list[str]:
        return [self.dataset, self.strategy] + [_fmt(getattr(self, k)) for k in SUMMARY_COLUMNS[2:]]


@dataclass
class IdentificationRow:
    train_data: str
    eval_data: str
    leakage: float
    top1: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    summary: list[SummaryRow] = field(default_factory=list)
    identification: list[IdentificationRow] = field(default_factory=list)
    linkage: object = None
    seeds: dict[str, int] = field(default_factory=dict)
    # wall-clock seconds per stage; kept in memory only so outputs stay deterministic
    timings: dict[str, float] = field(default_factory=dict)

    def row(self, dataset: str, strategy: str) -> SummaryRow:
        for r in self.summary:
            if r.dataset == dataset and r.strategy == strategy:
                return r
        raise KeyError((dataset, strategy))

    def identification_value(self, train_data: str, eval_data: str, leakage: float) -> float:
        for r in self.identification:
            if (r.train_data, r.eval_data, r.leakage) == (train_data, eval_data, leakage):
                return r.top1
        raise KeyError((train_data, eval_data, leakage))


def file_slug(name: str) -> str:
    """``CL(1e-05)`` -> ``CL-1e-05``; keeps file names shell-friendly."""
    return name.replace("(", "-").replace(")", "")


def _fmt(v: float) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def write_summary_csv(path, rows: list[SummaryRow]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(r.cells()) + "\n")


def read_summary_csv(path) -> list[SummaryRow]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(lines[0].split(",")) != SUMMARY_COLUMNS:
        raise ToolkitError(f"{path}: not a summary CSV")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        rows.append(SummaryRow(parts[0], parts[1], *(float(v) for v in parts[2:])))
    return rows


def write_identification_csv(path, rows: list[IdentificationRow]) -> None:
    with open(path, "w") as fh:
        fh.write("train_data,eval_data,leakage,top1\n")
        for r in rows:
            fh.write(f"{r.train_data},{r.eval_data},{r.leakage!r},{r.top1!r}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ----------------------------------------------------------------- pipeline


class _Run:
    """Bookkeeping shared by the stages: seeds, written files, manifest."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path, inputs: dict[str, Path]):
        self.cfg = cfg
        self.out = out_dir
        self.inputs = inputs
        self.seeds: dict[str, int] = {}
        self.files: list[str] = []
        self.timings: dict[str, float] = {}

    def seed(self, stage: str) -> int:
        s = derive_seed(self.cfg.seed, stage)
        self.seeds[stage] = s
        return s

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def stage(self, name: str, fn: Callable):
        started = time.perf_counter()
        try:
            return fn()
        except Exception as exc:
            self.write_manifest(complete=False, failed_stage=name)
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - started

    def write_manifest(self, complete: bool, failed_stage: str | None = None) -> None:
        outputs = {rel: sha256_file(self.out / rel) for rel in sorted(self.files) if (self.out / rel).exists()}
        manifest = {
            "version": toolkit_version(),
            "complete": complete,
            "failed_stage": failed_stage,
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in self.cfg.as_dict(exclude=("out",)).items()},
            "seeds": dict(sorted(self.seeds.items())),
            "inputs": {name: sha256_file(p) for name, p in sorted(self.inputs.items())},
            "outputs": outputs,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    inputs: dict[str, Path] | None = None,
    log: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """Run the full pipeline and write the results tree.

    ``inputs`` maps names to input files (e.g. the config file) whose
    checksums go into the manifest.  A failing stage raises
    :class:`StageError` after writing a manifest with ``complete = false``.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out, dict(inputs or {}))
    log = log or (lambda msg: None)
    res = ExperimentResult(cfg, out, seeds=run.seeds, timings=run.timings)
    cosface = cfg.cosface()

    # the output location is left out so results trees are relocatable
    run.path("config.txt").write_text(cfg.to_text(exclude=("out",)))

    def gen_authentic():
        auth = make_authentic(
            cfg.classes, cfg.per_class, cfg.input_dim, cfg.sigma_intra, run.seed("authentic"),
            identity_dim=cfg.identity_dim, nuisance=cfg.nuisance,
        )
        held = make_authentic(
            cfg.heldout_classes, cfg.heldout_per_class, cfg.input_dim, cfg.sigma_intra, run.seed("heldout"),
            identity_dim=cfg.identity_dim, nuisance=cfg.nuisance,
        )
        write_dataset_csv(run.path("data/authentic.csv"), auth)
        write_dataset_csv(run.path("data/heldout.csv"), held)
        return auth, held

    log("authentic data")
    auth, held = run.stage("authentic", gen_authentic)
    pairs = balanced_pairs(held, run.seed("heldout_pairs"))

    def train_teacher():
        teacher = init_model(cfg.model_config(run.seed("teacher_init")))
        head = init_head(cfg.embedding_dim, cfg.classes, run.seed("teacher_head"))
        _, _, rep = train(teacher, head, auth, Strategy("CLS"), cfg.teacher_optimizer(run.seed("teacher_train")), cosface=cosface)
        save_model(run.path("models/teacher.bin"), teacher, head)
        rep.write_csv(run.path("train/teacher.csv"))
        return teacher, head

    log("teacher")
    teacher, teacher_head = run.stage("teacher", train_teacher)

    def make_generator(leakage):
        return fit_generator(
            auth, leakage, cfg.synth_sigma, run.seed("generator"),
            fresh=cfg.fresh, reproduce_variation=cfg.reproduce_variation,
        )

    def gen_synthetic():
        syn = sample_synthetic(make_generator(cfg.leakage), cfg.synth_per_class, run.seed("synthetic"))
        write_dataset_csv(run.path("data/synthetic.csv"), syn)
        return syn

    log("synthetic data")
    syn = run.stage("synthetic", gen_synthetic)

    def linkage():
        scores = linkage_scores(auth, derive_subset(syn, cfg.link_subset), teacher)
        report = linkage_from_scores(*scores)
        write_report(run.path("reports/linkage.txt"), linkage_lines(report))
        for kind, s in zip(("intra_authentic", "intra_synthetic", "cross"), scores):
            write_scores_csv(run.path(f"reports/scores_{kind}.csv"), s)
            write_histogram_csv(run.path(f"reports/hist_{kind}.csv"), *histogram_export(s))
        return report

    log("linkage")
    res.linkage = run.stage("linkage", linkage)

    def identification():
        rows = []
        for lam in cfg.id_leakages:
            sid = sample_synthetic(make_generator(lam), cfg.id_per_class, run.seed("synthetic"))
            model = init_model(cfg.model_config(run.seed("student_init")))
            head = init_head(cfg.embedding_dim, cfg.classes, run.seed("student_head"))
            train(model, head, sid, Strategy("CLS"), cfg.student_optimizer(run.seed("student_train")), cosface=cosface)
            rows.append(IdentificationRow("synthetic", "synthetic", lam, identification_top1(*embed_dataset(model, sid), head)))
            rows.append(IdentificationRow("synthetic", "authentic", lam, identification_top1(*embed_dataset(model, auth), head)))
            rows.append(IdentificationRow("authentic", "synthetic", lam, identification_top1(*embed_dataset(teacher, sid), teacher_head)))
        rows.append(IdentificationRow("authentic", "authentic", 1.0, identification_top1(*embed_dataset(teacher, auth), teacher_head)))
        write_identification_csv(run.path("reports/identification.csv"), rows)
        return rows

    log("identification")
    res.identification = run.stage("identification", identification)

    def held_out_row(dataset, strategy, model, head, synth_eval):
        s = pair_scores(model, held, pairs)
        rep = verification_report(s)
        if head is None:
            id_syn = id_auth = float("nan")
        else:
            id_syn = identification_top1(*embed_dataset(model, synth_eval), head)
            id_auth = identification_top1(*embed_dataset(model, auth), head)
        return SummaryRow(
            dataset, strategy, verification_accuracy(s)[0],
            float(rep.eer), float(rep.fmr100), float(rep.fmr1000), id_syn, id_auth,
        )

    res.summary.append(run.stage("baseline", lambda: held_out_row("authentic", "CLS", teacher, teacher_head, syn)))

    strategies = cfg.strategy_list()
    for n in cfg.subsets:
        sub = derive_subset(syn, n)
        for strat in strategies:
            name = f"SFace-{n}_{file_slug(strat.name)}"

            def cell(sub=sub, strat=strat, name=name, n=n):
                model = init_model(cfg.model_config(run.seed("student_init")))
                head = init_head(cfg.embedding_dim, cfg.classes, run.seed("student_head")) if strat.needs_head else None
                _, _, rep = train(
                    model, head, sub, strat, cfg.student_optimizer(run.seed("student_train")),
                    teacher=teacher if strat.needs_teacher else None, cosface=cosface,
                )
                save_model(run.path(f"models/{name}.bin"), model, head)
                rep.write_csv(run.path(f"train/{name}.csv"))
                return held_out_row(f"SFace-{n}", strat.name, model, head, sub)

            log(name)
            res.summary.append(run.stage(name, cell))

    write_summary_csv(run.path("summary.csv"), res.summary)
    run.write_manifest(complete=True)
    return res
