"""Command-line front end.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or configuration
error.  Every subcommand is a thin wrapper over the library; seeds are derived
from ``--seed`` (or the config's ``seed``) exactly as the experiment pipeline
derives them, so a CLI run reproduces the matching pipeline artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bioeval
from .config import ExperimentConfig, TrainConfig, derive_seed, read_kv_file
from .datagen import (
    LabeledDataset,
    derive_subset,
    fit_generator,
    make_authentic,
    read_dataset_csv,
    sample_synthetic,
    write_dataset_csv,
)
from .embedder import init_head, init_model, load_model, save_model
from .errors import ConfigError, ToolkitError
from .experiment import (
    SUMMARY_COLUMNS,
    read_summary_csv,
    run_experiment,
    sha256_file,
    toolkit_version,
)
from .trainer import Strategy, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_manifest(out: Path, command: str, config: dict, seeds: dict, inputs: dict, outputs: list[str]) -> None:
    manifest = {
        "version": toolkit_version(),
        "command": command,
        "complete": True,
        "config": config,
        "seeds": seeds,
        "inputs": {k: sha256_file(v) for k, v in sorted(inputs.items()) if v is not None},
        "outputs": {rel: sha256_file(out / rel) for rel in sorted(outputs)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _experiment_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values = read_kv_file(args.config)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "out", None):
        values["out"] = str(args.out)
    return ExperimentConfig.from_mapping(values)


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    cfg = _experiment_config(args)
    out = _out_dir(cfg.out)
    seeds = {s: derive_seed(cfg.seed, s) for s in ("authentic", "generator", "synthetic")}
    auth = make_authentic(
        cfg.classes, cfg.per_class, cfg.input_dim, cfg.sigma_intra, seeds["authentic"],
        identity_dim=cfg.identity_dim, nuisance=cfg.nuisance,
    )
    gen = fit_generator(
        auth, cfg.leakage, cfg.synth_sigma, seeds["generator"],
        fresh=cfg.fresh, reproduce_variation=cfg.reproduce_variation,
    )
    syn = sample_synthetic(gen, cfg.synth_per_class, seeds["synthetic"])
    write_dataset_csv(out / "authentic.csv", auth)
    write_dataset_csv(out / "synthetic.csv", syn)
    _write_manifest(out, "gen", _plain(cfg.as_dict(exclude=("out",))), seeds, {"config": args.config}, ["authentic.csv", "synthetic.csv"])
    print(f"wrote {len(auth)} authentic and {len(syn)} synthetic samples to {out}")
    return EXIT_OK


def _strategy(args) -> Strategy:
    text = args.strategy
    if args.alpha is not None:
        if text != "CL":
            raise ConfigError("--alpha applies only to --strategy CL")
        return Strategy("CL", args.alpha)
    if text == "CL":
        raise ConfigError("--strategy CL requires --alpha")
    return Strategy.parse(text)


def cmd_train(args) -> int:
    strategy = _strategy(args)
    if strategy.needs_teacher and not args.teacher:
        raise ConfigError(f"strategy {strategy.name} requires --teacher (a trained model file)")
    values = {}
    if args.config:
        values = read_kv_file(args.config)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    tcfg = TrainConfig.from_mapping(values)
    data = read_dataset_csv(args.data, "synthetic")
    if args.subset is not None:
        data = derive_subset(data, args.subset)
    teacher = load_model(args.teacher)[0] if args.teacher else None
    model = init_model(tcfg.model(data.input_dim))
    head = init_head(tcfg.embedding_dim, data.num_classes, tcfg.head_seed()) if strategy.needs_head else None
    _, head, report = train(model, head, data, strategy, tcfg.optimizer(), teacher=teacher, cosface=tcfg.cosface())
    out = _out_dir(args.out)
    save_model(out / "model.bin", model, head)
    report.write_csv(out / "train_report.csv")
    seeds = {
        "student_init": model.config.init_seed,
        "student_head": tcfg.head_seed(),
        "student_train": tcfg.optimizer().seed,
    }
    cfg = dict(_plain(tcfg.as_dict()), strategy=strategy.name, subset=args.subset)
    inputs = {"config": args.config, "data": args.data, "teacher": args.teacher}
    _write_manifest(out, "train", cfg, seeds, inputs, ["model.bin", "train_report.csv"])
    print(f"{strategy.name}: {report.epochs} epochs, final mean loss {report.epoch_loss[-1]:.6g}")
    return EXIT_OK


def cmd_embed(args) -> int:
    model, _ = load_model(args.model)
    data = read_dataset_csv(args.data)
    emb = bioeval.embed(model, data.samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(out, LabeledDataset(emb, data.labels, data.num_classes, data.provenance))
    print(f"wrote {emb.shape[0]} embeddings of width {emb.shape[1]} to {out}")
    return EXIT_OK


def _scorer(path):
    return load_model(path)[0] if path else None


def _write_scores(out: Path, stem: str, s: bioeval.ScoreSet) -> list[str]:
    bioeval.write_scores_csv(out / f"scores_{stem}.csv", s)
    bioeval.write_histogram_csv(out / f"hist_{stem}.csv", *bioeval.histogram_export(s))
    return [f"scores_{stem}.csv", f"hist_{stem}.csv"]


def _run_link(model_path, authentic_path, synthetic_path, subset, out: Path) -> list[str]:
    auth = read_dataset_csv(authentic_path, "authentic")
    syn = read_dataset_csv(synthetic_path, "synthetic", num_classes=auth.num_classes)
    if subset is not None:
        syn = derive_subset(syn, subset)
    scores = bioeval.linkage_scores(auth, syn, _scorer(model_path))
    report = bioeval.linkage_from_scores(*scores)
    bioeval.write_report(out / "link.txt", bioeval.linkage_lines(report))
    files = ["link.txt"]
    for kind, s in zip(("intra_authentic", "intra_synthetic", "cross"), scores):
        files += _write_scores(out, kind, s)
    print(
        f"EER authentic {bioeval.percent(report.intra_authentic.eer)}%  "
        f"synthetic {bioeval.percent(report.intra_synthetic.eer)}%  "
        f"cross {bioeval.percent(report.cross.eer)}%  "
        f"non-matches per 100 at FMR1000: {float(report.expected_nonmatches_per_100)!r}"
    )
    return files


def cmd_eval(args) -> int:
    out = _out_dir(args.out)
    inputs = {"model": args.model, "data": args.data, "synthetic": args.synthetic}
    if args.mode == "link":
        if not args.synthetic:
            raise ConfigError("--mode link requires --synthetic")
        files = _run_link(args.model, args.data, args.synthetic, args.subset, out)
    elif args.mode == "verify":
        data = read_dataset_csv(args.data)
        proto = bioeval.build_protocol(data)
        emb, labels = bioeval.embed_dataset(_scorer(args.model), data)
        s = bioeval.collect_scores(emb[proto.references], labels[proto.references], emb[proto.probes], labels[proto.probes])
        acc, acc_t = bioeval.verification_accuracy(s)
        lines = bioeval.report_lines(bioeval.verification_report(s)) + [
            f"verify_acc = {acc!r}",
            f"verify_acc_threshold = {acc_t!r}",
        ]
        bioeval.write_report(out / "verify.txt", lines)
        files = ["verify.txt"] + _write_scores(out, "verify", s)
        print("\n".join(lines))
    else:
        if not args.model:
            raise ConfigError("--mode identify requires --model")
        model, head = load_model(args.model)
        if head is None:
            raise ConfigError(f"{args.model} has no classification head; identification needs one")
        data = read_dataset_csv(args.data, num_classes=head.num_classes)
        top1 = bioeval.identification_top1(*bioeval.embed_dataset(model, data), head)
        lines = [f"top1 = {top1!r}", f"n_samples = {len(data)}"]
        bioeval.write_report(out / "identify.txt", lines)
        files = ["identify.txt"]
        print("\n".join(lines))
    _write_manifest(out, f"eval {args.mode}", {"mode": args.mode, "subset": args.subset}, {}, inputs, files)
    return EXIT_OK


def cmd_link(args) -> int:
    out = _out_dir(args.out)
    files = _run_link(args.model, args.authentic, args.synthetic, args.subset, out)
    inputs = {"model": args.model, "authentic": args.authentic, "synthetic": args.synthetic}
    _write_manifest(out, "link", {"subset": args.subset}, {}, inputs, files)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    inputs = {"config": Path(args.config)} if args.config else {}
    res = run_experiment(cfg, cfg.out, inputs=inputs, log=lambda m: print(f"[stage] {m}", file=sys.stderr))
    print(f"results written to {res.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.results)
    rows = read_summary_csv(root / "summary.csv")
    widths = [max(len(c), 12) for c in SUMMARY_COLUMNS]
    print("  ".join(c.ljust(w) for c, w in zip(SUMMARY_COLUMNS, widths)))
    for r in rows:
        cells = [r.dataset, r.strategy] + [
            "-" if v != v else f"{100 * v:.3f}" for v in (getattr(r, k) for k in SUMMARY_COLUMNS[2:])
        ]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    link = root / "reports" / "linkage.txt"
    if link.exists():
        rep = bioeval.read_report(link)
        print()
        for key in ("intra_authentic.eer", "intra_synthetic.eer", "cross.eer"):
            print(f"{key} = {rep[key]} %")
        print(f"expected_nonmatches_per_100 = {rep['expected_nonmatches_per_100']}")
    manifest = root / "manifest.json"
    if manifest.exists() and not json.loads(manifest.read_text()).get("complete", False):
        print("warning: manifest marks this run as incomplete", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synthid", description="Train and audit embedding models on synthetic identity data.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate authentic and synthetic datasets")
    g.add_argument("--config", help="experiment config file (key = value)")
    g.add_argument("--seed", type=int, help="master seed (overrides the config)")
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one student model")
    t.add_argument("--data", required=True, help="training dataset CSV")
    t.add_argument("--strategy", required=True, help="CLS, KT, CL (with --alpha) or CL(1e-05)")
    t.add_argument("--alpha", type=float, help="CosFace weight for CL")
    t.add_argument("--teacher", help="teacher model file (KT and CL)")
    t.add_argument("--subset", type=int, help="keep the first N samples per class")
    t.add_argument("--config", help="training config file (key = value)")
    t.add_argument("--seed", type=int, help="master seed (overrides the config)")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="embed a dataset with a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="output CSV file")
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("eval", help="verification, identification or linkage evaluation")
    v.add_argument("--mode", choices=("verify", "identify", "link"), required=True)
    v.add_argument("--model", help="model file; omit to score raw features (verify, link)")
    v.add_argument("--data", required=True, help="dataset CSV (authentic side for link)")
    v.add_argument("--synthetic", help="synthetic dataset CSV (link)")
    v.add_argument("--subset", type=int, help="synthetic subset size (link)")
    v.add_argument("--out", required=True, help="output directory")
    v.set_defaults(func=cmd_eval)

    k = sub.add_parser("link", help="cross-dataset identity linkage report")
    k.add_argument("--model", help="scorer model file; omit to score raw features")
    k.add_argument("--authentic", required=True)
    k.add_argument("--synthetic", required=True)
    k.add_argument("--subset", type=int, help="synthetic subset size")
    k.add_argument("--out", required=True, help="output directory")
    k.set_defaults(func=cmd_link)

    x = sub.add_parser("experiment", help="run the full pipeline")
    x.add_argument("--config", help="experiment config file (key = value)")
    x.add_argument("--seed", type=int, help="master seed (overrides the config)")
    x.add_argument("--out", help="results directory")
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="print the summary of a results directory")
    r.add_argument("--results", default="results", help="results directory of an experiment run")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"synthid {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ToolkitError, OSError, ValueError, ArithmeticError) as exc:
        print(f"synthid {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
