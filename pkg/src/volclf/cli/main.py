"""``volclf`` command line.

Exit codes: 0 ok, 1 unexpected library error, 2 configuration error,
3 data error, 4 leakage failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from volclf.errors import ConfigurationError, LeakageError, VolclfError


def _dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.lower().replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be N or AxBxC, got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for multi-CNN training")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, digest-exact mode")

    parser = argparse.ArgumentParser(prog="volclf", description="Volumetric classifier experiments with leakage audits")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("kind", choices=("inseparable", "separable", "fingerprint"))
    p.add_argument("--n", type=int, default=200, help="number of subjects")
    p.add_argument("--dims", type=_dims, default=(32, 32, 32))
    p.add_argument("--out", required=True)
    p.add_argument("--attenuation", type=float, default=0.5)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--sessions", type=int, default=2, help="sessions per subject (fingerprint)")
    p.add_argument("--amplitude", type=float, default=1.0, help="fingerprint amplitude")

    p = sub.add_parser("derive-labels", help="(re)derive diagnosis groups for a dataset")
    p.add_argument("dataset")
    p.add_argument("--window", type=int, default=36, help="conversion window in months")

    p = sub.add_parser("split", parents=[common], help="matched test split plus k folds")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="split plan file")
    p.add_argument("--n-test-per-class", type=int, default=20)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--task", default="AD_vs_CN")

    p = sub.add_parser("train", parents=[common], help="train every fold of an experiment")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--preset", help="packaged config name (see --list-presets)")
    g.add_argument("--list-presets", action="store_true")
    p.add_argument("--dataset", help="dataset directory for --preset")
    p.add_argument("--output", default="experiments", help="output root for --preset")
    p.add_argument("--allow-leaky", action="store_true", help="acknowledge a slice-level (leaky) split")
    p.add_argument("--folds", default=None, help="comma-separated subset of folds")

    p = sub.add_parser("test", parents=[common], help="single evaluation on the quarantined test set")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--experiment", help="experiment directory")

    p = sub.add_parser("vote", help="recompute subject-level voting for a trained fold")
    p.add_argument("experiment")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--threshold", type=float, default=None, help="zero the weight of units below this BA")

    p = sub.add_parser("leak-check", help="run the four leakage audits")
    p.add_argument("experiments", nargs="+", help="experiment directories (or their run_manifest.json)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every backward pass")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--ops-only", action="store_true")
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("shapecheck", help="symbolic shape trace against the transcribed tables")
    p.add_argument("names", nargs="*", help="golden tables (default: all)")
    p.add_argument("--quiet", action="store_true", help="print diffs only")
    return parser


# commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    from volclf.data import synthetic

    seed = 0 if args.seed is None else args.seed
    extra = {} if args.noise_sd is None else {"noise_sd": args.noise_sd}
    if args.kind == "inseparable":
        manifest = synthetic.generate_inseparable(args.out, seed, args.n, args.dims, **extra)
    elif args.kind == "separable":
        manifest = synthetic.generate_separable(args.out, seed, args.n, args.dims, args.attenuation, **extra)
    else:
        manifest = synthetic.generate_fingerprint(
            args.out, seed, args.n, args.sessions, args.dims, args.amplitude, **extra
        )
    print(f"{args.kind}: {len(manifest.subjects)} subjects, {len(manifest.sessions)} volumes -> {args.out}")
    return 0


def cmd_derive_labels(args) -> int:
    from collections import Counter

    from volclf.data.records import DatasetManifest

    manifest = DatasetManifest.read(args.dataset).with_labels(args.window)
    manifest.write_labels(args.dataset)
    counts = Counter(lab.group or "n/a" for lab in manifest.labels.values())
    for group in sorted(counts):
        print(f"{group}\t{counts[group]}")
    return 0


def cmd_split(args) -> int:
    from volclf.cli.config import task_classes
    from volclf.cli.pipeline import load_manifest
    from volclf.splitting.plan import make_kfold, make_test_split, manifest_digest

    manifest = load_manifest(args.dataset)
    classes = task_classes(args.task)
    seed = 2 if args.seed is None else args.seed
    split = make_test_split(manifest, args.n_test_per_class, seed, classes)
    labels = {s: classes.index(c) for s, c in manifest.subjects_by_class(classes).items() if s not in set(split.test)}
    plan = make_kfold(labels, args.k, seed, split.test, manifest_digest(manifest))
    out = Path(args.out)
    plan.write(out)
    out.with_name(out.name + ".matching.txt").write_text(split.report.as_text() + "\n")
    print(f"plan {plan.digest[:12]}: {len(plan.test)} test subjects, {args.k} folds over {len(labels)} subjects")
    print(split.report.as_text())
    return 0


def _load_config(args):
    from volclf.cli.config import ExperimentConfig, preset

    if getattr(args, "preset", None):
        if not args.dataset:
            raise ConfigurationError("--preset needs --dataset")
        cfg = preset(args.preset, args.dataset, args.output)
    else:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} not found")
        cfg = ExperimentConfig.from_ini(path.read_text(), base_dir=path.parent)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "folds", None):
        cfg = replace(cfg, folds=tuple(int(f) for f in args.folds.split(",")))
    return cfg


def cmd_train(args) -> int:
    from volclf.cli.config import preset_names
    from volclf.cli.pipeline import run_experiment

    if args.list_presets:
        print("\n".join(preset_names()))
        return 0
    cfg = _load_config(args)
    threads = 1 if args.deterministic else max(1, args.threads)

    def progress(fold, result):
        print(f"fold {fold}: validation BA {result['valid_ba']:.4f} (units {result['unit_valid_ba']:.4f})", flush=True)

    run = run_experiment(cfg, allow_leaky=args.allow_leaky, threads=threads, progress=progress)
    if "banner" in run:
        print(run["banner"])
    print(f"{cfg.name}: validation BA {run['validation_summary']}")
    failed = [c for c, status in run["leakage_report"].items() if status == "fail"]
    if failed:
        print(f"leakage audits failing: {', '.join(failed)}")
    return 0


def cmd_test(args) -> int:
    from volclf.cli.pipeline import experiment_dir, test_experiment

    root = Path(args.experiment) if args.experiment else experiment_dir(_load_config(args))
    result = test_experiment(root)
    for fold, ba in result["fold_ba"].items():
        print(f"fold {fold}: test BA {ba:.4f}")
    print(f"test BA {result['summary']}")
    return 0


def cmd_vote(args) -> int:
    from volclf.cli.pipeline import per_unit_ba, read_predictions, subject_report
    from volclf.evaluation.voting import compute_weights, vote_subjects

    preds = read_predictions(Path(args.experiment) / f"fold-{args.fold}" / "predictions.tsv")
    weights = compute_weights(per_unit_ba(preds), args.threshold)
    report = subject_report(vote_subjects(preds, weights))
    print("unit\tvalid_ba\tweight")
    for unit, w in weights.weights.items():
        print(f"{unit}\t{weights.source_ba[unit]:.4f}\t{w:.4f}")
    print(f"subject-level BA {report.ba:.4f}")
    return 0


def cmd_leak_check(args) -> int:
    from volclf.cli.pipeline import leak_check

    roots = [Path(e).parent if e.endswith(".json") else Path(e) for e in args.experiments]
    failed = False
    for root, report in leak_check(roots).items():
        print(f"== {root}")
        print(report.as_text(), end="")
        failed |= report.failed
    if failed:
        raise LeakageError("at least one leakage audit failed", ())
    return 0


def cmd_gradcheck(args) -> int:
    from volclf.tensor_engine.gradsuite import run_suite

    seed = 0 if args.seed is None else args.seed
    results = run_suite(args.instances, seed, include_networks=not args.ops_only)
    worst = 0.0
    for name, err in results.items():
        flag = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:22s} {err:.3e} {flag}")
        worst = max(worst, err)
    return 0 if worst < args.tolerance else 1


def cmd_shapecheck(args) -> int:
    from volclf.shape_oracle import diff_against_golden, format_extents, golden_architectures, infer_shapes, load_golden

    archs = golden_architectures()
    names = args.names or list(archs)
    unknown = [n for n in names if n not in archs]
    if unknown:
        raise ConfigurationError(f"unknown golden tables {unknown}; known: {sorted(archs)}")
    total = 0
    for name in names:
        trace = infer_shapes(archs[name])
        diffs = diff_against_golden(trace, load_golden(name))
        total += len(diffs)
        print(f"== {name}: {len(diffs)} diffs")
        if not args.quiet:
            for row, shape in trace.rows.items():
                print(f"{row}\t{format_extents(shape)}")
        for d in diffs:
            print(f"DIFF {d}")
    return 0 if total == 0 else 1


COMMANDS = {
    "generate": cmd_generate,
    "derive-labels": cmd_derive_labels,
    "split": cmd_split,
    "train": cmd_train,
    "test": cmd_test,
    "vote": cmd_vote,
    "leak-check": cmd_leak_check,
    "gradcheck": cmd_gradcheck,
    "shapecheck": cmd_shapecheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except VolclfError as exc:
        print(f"volclf {args.command}: {exc}", file=sys.stderr)
        evidence = getattr(exc, "evidence", ())
        for item in list(evidence)[:10]:
            print(f"  {item}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
