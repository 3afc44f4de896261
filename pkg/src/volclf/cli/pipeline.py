"""End-to-end experiment runs: split, (pre)train per fold, vote, audit, test once.

Output tree::

    <output>/<name>/
        config.ini  split_plan.tsv  matching_report.txt
        access_log.tsv  leakage_report.tsv  run_manifest.json
        test_metrics.tsv                        (after the single test run)
        fold-<j>/
            checkpoints/best.ckpt               (multi-CNN: best-cnn-<i>.ckpt; ae.ckpt if pretrained)
            curves.tsv                          (multi-CNN: curves-cnn-<i>.tsv)
            predictions.tsv  metrics.tsv  unit_metrics.tsv  weights.tsv
            test_predictions.tsv                (after the test run)
"""

from __future__ import annotations

import csv
import json
import os
import time
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

import volclf
from volclf.cli.config import ExperimentConfig
from volclf.data.records import DatasetManifest, SessionRecord, sessions_for_task
from volclf.data.units import extract_patches, extract_roi, extract_slices, patch_grid
from volclf.data.volume import minmax_rescale, read_volume
from volclf.errors import ConfigurationError, DataError, LeakageError
from volclf.evaluation.metrics import METRIC_COLUMNS, aggregate_cv, evaluate_predictions
from volclf.evaluation.voting import UnitPrediction, compute_weights, vote_subjects
from volclf.model_zoo.builders import build_autoencoder_from, build_conv4_fc3, build_conv5_fc3, build_resnet18_slice
from volclf.model_zoo.checkpoint import Checkpoint, load_checkpoint, save_checkpoint, transfer_encoder_weights
from volclf.model_zoo.freeze import apply_freeze
from volclf.model_zoo.network import Network
from volclf.model_zoo.spec import ModelSpec
from volclf.model_zoo.svm import SVMModel, svm_select_C, svm_train
from volclf.splitting.access import AccessLog, Quarantine, RoleToken
from volclf.splitting.audits import CAUSES, LeakageReport, audit_independent_test, run_audits
from volclf.splitting.plan import (
    SplitPlan,
    make_kfold,
    make_leaky_slice_split,
    make_test_split,
    manifest_digest,
    unit_subject,
)
from volclf.tensor_engine import kernels
from volclf.training.config import TrainingConfig, write_curve
from volclf.training.loop import UnitSet, evaluate_model, finetune_from, pretrain_autoencoder, train_classifier, train_multi_cnn

PREDICTION_COLUMNS = ("subject_id", "session_id", "unit_id", "prob_neg", "prob_pos", "true_label", "voted_label")


# dataset access -----------------------------------------------------------------


def load_manifest(path: str | Path) -> DatasetManifest:
    manifest = DatasetManifest.read(path)
    if not manifest.labels:
        manifest = manifest.with_labels()
    return manifest


class GuardedVolumes:
    """Reads volumes only for units a role token covers, logging every access."""

    def __init__(self, manifest: DatasetManifest, quarantine: Quarantine, rescaling: str):
        self.manifest = manifest
        self.quarantine = quarantine
        self.rescaling = rescaling
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def read(self, records: Iterable[SessionRecord], unit_ids: Iterable[str], token: RoleToken, phase: str, invocation: str = ""):
        self.quarantine.check(token, sorted(set(unit_ids)), phase, invocation)
        out = {}
        for rec in records:
            if rec.key not in self._cache:
                vol = read_volume(self.manifest.volume_path(rec))
                if self.rescaling == "minmax":
                    vol = minmax_rescale(vol)
                self._cache[rec.key] = vol.data
            out[rec.key] = self._cache[rec.key]
        return out


# experiment context ----------------------------------------------------------------


@dataclass
class Context:
    cfg: ExperimentConfig
    root: Path
    manifest: DatasetManifest
    plan: SplitPlan
    log: AccessLog
    quarantine: Quarantine
    volumes: GuardedVolumes
    dims: tuple[int, int, int]

    @property
    def leaky(self) -> bool:
        return self.plan.granularity == "slice"


def experiment_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output) / cfg.name


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _task_labels(manifest: DatasetManifest, classes) -> dict[str, int]:
    by_class = manifest.subjects_by_class(classes)
    return {s: classes.index(c) for s, c in by_class.items()}


def slice_positions(cfg: ExperimentConfig, dims) -> list[int]:
    drop = cfg.units.slice_drop
    return list(range(drop, dims[0] - drop))


def unit_positions(cfg: ExperimentConfig, dims) -> list[int]:
    """Unit indices produced per session (ROI side, patch number or slice position)."""
    a = cfg.approach
    if a in ("subject3d", "svm"):
        return [0]
    if a == "roi3d":
        return [0, 1]
    if a in ("patch3d_single", "patch3d_multi"):
        return list(range(len(patch_grid(dims, cfg.units.patch_size))))
    return slice_positions(cfg, dims)


def build_plan(cfg: ExperimentConfig, manifest: DatasetManifest, allow_leaky: bool = False) -> tuple[SplitPlan, str]:
    """Plan from ``cfg.plan`` or a fresh matched test split plus k folds."""
    classes = cfg.classes
    labels = _task_labels(manifest, classes)
    report = ""
    if cfg.plan:
        base = SplitPlan.read(cfg.plan)
        test = base.test
        report = f"plan read from {cfg.plan}"
    else:
        split = make_test_split(manifest, cfg.n_test_per_class, cfg.split_seed, classes)
        test = split.test
        report = split.report.as_text()
        base = None
    trainval = {s: l for s, l in labels.items() if s not in set(test)}
    prov = manifest_digest(manifest)
    if cfg.split == "slice_leaky":
        if not allow_leaky:
            raise ConfigurationError("split=slice_leaky leaks subjects across folds; pass --allow-leaky to run it anyway")
        dims = _dataset_dims(manifest)
        units = {}
        for rec, lab in sessions_for_task(manifest, classes, cfg.training_data, trainval):
            for pos in slice_positions(cfg, dims):
                units[f"{rec.subject}:{rec.session}:{pos}"] = lab
        return make_leaky_slice_split(units, cfg.k, cfg.split_seed, test, prov), report
    if base is not None and base.granularity == "subject" and set(base.trainval_subjects()) == set(trainval):
        return base, report
    return make_kfold(trainval, cfg.k, cfg.split_seed, test, prov), report


def _dataset_dims(manifest: DatasetManifest) -> tuple[int, int, int]:
    dims = manifest.description.get("dims")
    if dims:
        return tuple(int(d) for d in dims)
    return read_volume(manifest.volume_path(manifest.sessions[0])).shape


def build_spec(cfg: ExperimentConfig, dims) -> ModelSpec | None:
    u = cfg.units
    if cfg.approach == "subject3d":
        return build_conv5_fc3(dims, 2, cfg.training.dropout, u.fc1_width)
    if cfg.approach == "roi3d":
        return build_conv4_fc3((u.roi_size,) * 3, 2, cfg.training.dropout, u.conv_padding)
    if cfg.approach in ("patch3d_single", "patch3d_multi"):
        return build_conv4_fc3((u.patch_size,) * 3, 2, cfg.training.dropout, u.conv_padding)
    if cfg.approach == "slice2d":
        return build_resnet18_slice(2, u.slice_resize, u.resnet_width, cfg.training.dropout)
    return None


# unit sets ----------------------------------------------------------------------------


def _session_units(ctx: Context, arr: np.ndarray) -> list[np.ndarray]:
    cfg, u = ctx.cfg, ctx.cfg.units
    if cfg.approach in ("subject3d", "svm"):
        return [arr[None]]
    if cfg.approach == "roi3d":
        out = []
        for side, center in (("left", u.roi_left_center), ("right", u.roi_right_center)):
            out.append(extract_roi(arr, center or None, u.roi_size, side)[None])
        return out
    if cfg.approach in ("patch3d_single", "patch3d_multi"):
        return [p[None] for _, p in extract_patches(arr, u.patch_size)]
    return extract_slices(arr, 0, u.slice_drop, u.slice_resize)


def role_sessions(ctx: Context, fold: int | None, role: str) -> list[tuple[SessionRecord, int]]:
    subjects = ctx.plan.subjects(fold, role) if role != "test" else {unit_subject(s) for s in ctx.plan.test}
    mode = ctx.cfg.training_data if role == "train" else "baseline"
    return sessions_for_task(ctx.manifest, ctx.cfg.classes, mode, subjects)


def build_unit_set(ctx: Context, fold: int | None, role: str, token: RoleToken, phase: str, invocation: str = "") -> UnitSet:
    """All units of ``role`` in ``fold``, read through the quarantine."""
    sessions = role_sessions(ctx, fold, role)
    positions = unit_positions(ctx.cfg, ctx.dims)
    allowed = set(ctx.plan.units(fold, role)) if ctx.leaky and role != "test" else None
    items = []  # (record, label, position, unit id)
    for rec, lab in sessions:
        for pos in positions:
            if allowed is not None:
                uid = f"{rec.subject}:{rec.session}:{pos}"
                if uid not in allowed:
                    continue
            else:
                uid = rec.subject
            items.append((rec, lab, pos, uid))
    if not items:
        raise DataError(f"no {role} units in fold {fold}")
    records = list({rec.key: rec for rec, *_ in items}.values())
    vols = ctx.volumes.read(records, [it[3] for it in items], token, phase, invocation)
    cache: dict[tuple[str, str], list[np.ndarray]] = {}
    inputs = []
    for rec, lab, pos, uid in items:
        if rec.key not in cache:
            cache[rec.key] = _session_units(ctx, vols[rec.key])
        inputs.append(cache[rec.key][positions.index(pos)])
    return UnitSet(
        np.stack(inputs).astype(np.float32),
        np.array([it[1] for it in items]),
        [it[3] for it in items],
        [it[0].session for it in items],
        [it[2] for it in items],
        token,
    )


# outputs --------------------------------------------------------------------------------


def unit_predictions(data: UnitSet, probs: np.ndarray) -> list[UnitPrediction]:
    return [
        UnitPrediction(unit_subject(data.unit_ids[i]), data.sessions[i], data.unit_index[i], tuple(probs[i] / probs[i].sum()), int(data.labels[i]))
        for i in range(len(data))
    ]


def per_unit_ba(preds: list[UnitPrediction]) -> dict[int, float]:
    out = {}
    for unit in sorted({p.unit for p in preds}):
        sel = [p for p in preds if p.unit == unit]
        y = [p.label for p in sel]
        yhat = [int(np.argmax(p.probabilities)) for p in sel]
        ba = evaluate_predictions(y, yhat).ba
        out[unit] = 0.0 if np.isnan(ba) else float(ba)
    return out


def write_predictions(path: Path, preds: list[UnitPrediction], voted: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for p in preds:
            v = voted[(p.subject, p.session)][0]
            w.writerow([p.subject, p.session, p.unit, f"{p.probabilities[0]:.6f}", f"{p.probabilities[1]:.6f}", p.label, v])


def read_predictions(path: Path) -> list[UnitPrediction]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != PREDICTION_COLUMNS:
        raise DataError(f"{path}: not a predictions file")
    return [UnitPrediction(r[0], r[1], int(r[2]), (float(r[3]), float(r[4])), int(r[5])) for r in rows[1:] if r]


def write_weights(path: Path, weights) -> None:
    lines = ["unit_id\tvalid_ba\tweight"]
    for unit in weights.weights:
        lines.append(f"{unit}\t{weights.source_ba[unit]:.6f}\t{weights.weights[unit]:.6f}")
    path.write_text("\n".join(lines) + "\n")


def read_weights(path: Path) -> dict[int, float]:
    rows = path.read_text().splitlines()[1:]
    return {int(r.split("\t")[0]): float(r.split("\t")[2]) for r in rows if r}


def write_metrics(path: Path, rows: list[list[str]]) -> None:
    path.write_text("\n".join(["\t".join(METRIC_COLUMNS)] + ["\t".join(r) for r in rows]) + "\n")


def subject_report(voted: dict):
    y = [v[2] for v in voted.values()]
    yhat = [v[0] for v in voted.values()]
    scores = [v[1][1] / max(v[1].sum(), 1e-12) for v in voted.values()]
    return evaluate_predictions(y, yhat, scores if len(set(y)) == 2 else None)


# fold training ------------------------------------------------------------------------------


def _fold_seed(cfg: ExperimentConfig, fold: int) -> int:
    return cfg.seed * 1000 + fold


def _training_config(cfg: ExperimentConfig, fold: int) -> TrainingConfig:
    return replace(cfg.training, seed=_fold_seed(cfg, fold))


def _initial_state(ctx: Context, spec: ModelSpec, fold: int, train: UnitSet, fold_dir: Path, cnn: int | None = None) -> Checkpoint | None:
    """Starting parameters from autoencoder pretraining or an external checkpoint."""
    cfg = ctx.cfg
    seed = _fold_seed(cfg, fold) ^ (cnn or 0)
    if cfg.transfer_kind == "ae_pretrain":
        ae_spec = build_autoencoder_from(spec)
        ae = Network(ae_spec, seed=seed)
        ae_cfg = replace(cfg.ae_training, seed=seed)
        ae_ckpt, curve = pretrain_autoencoder(ae, train, ae_cfg, ctx.quarantine, metadata={"experiment": cfg.name, "fold": fold})
        tag = "" if cnn is None else f"-cnn-{cnn}"
        save_checkpoint(fold_dir / "checkpoints" / f"ae{tag}.ckpt", ae_ckpt)
        write_curve(fold_dir / f"ae_curves{tag}.tsv", curve)
        return transfer_encoder_weights(ae_ckpt, spec, seed, cfg.name)
    if cfg.transfer_kind == "external_checkpoint":
        ckpt = load_checkpoint(cfg.transfer_source)
        ckpt.check_matches(spec)
        return ckpt
    return None


def _source_checkpoint(cfg: ExperimentConfig, fold: int, cnn: int | None) -> tuple[Checkpoint, SplitPlan]:
    src = Path(cfg.transfer_source)
    if not src.is_absolute() and not src.exists():
        src = Path(cfg.output) / cfg.transfer_source
    name = "best.ckpt" if cnn is None else f"best-cnn-{cnn}.ckpt"
    return load_checkpoint(src / f"fold-{fold}" / "checkpoints" / name), SplitPlan.read(src / "split_plan.tsv")


def train_fold(ctx: Context, fold: int, threads: int = 1) -> dict:
    cfg = ctx.cfg
    fold_dir = ctx.root / f"fold-{fold}"
    (fold_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    train_tok = ctx.quarantine.token(fold, "train")
    valid_tok = ctx.quarantine.token(fold, "validation")
    train = build_unit_set(ctx, fold, "train", train_tok, "train")
    valid = build_unit_set(ctx, fold, "validation", valid_tok, "model_select")
    files = {}
    if cfg.approach == "svm":
        probs = _train_svm(ctx, fold, train, valid, fold_dir)
        files["checkpoint"] = "checkpoints/best.ckpt"
    elif cfg.approach == "patch3d_multi":
        probs = _train_multi(ctx, fold, train, valid, fold_dir, threads)
        files["checkpoint"] = [f"checkpoints/best-cnn-{i}.ckpt" for i in range(len(unit_positions(cfg, ctx.dims)))]
        files["curves"] = [f"curves-cnn-{i}.tsv" for i in range(len(unit_positions(cfg, ctx.dims)))]
    else:
        probs = _train_single(ctx, fold, train, valid, fold_dir)
        files["checkpoint"] = "checkpoints/best.ckpt"
        files["curves"] = "curves.tsv"
    # voting on the baseline validation sessions
    preds = unit_predictions(valid, probs)
    unit_ba = per_unit_ba(preds)
    threshold = 0.7 if cfg.threshold_voting else None
    weights = compute_weights(unit_ba, threshold)
    voted = vote_subjects(preds, weights)
    write_predictions(fold_dir / "predictions.tsv", preds, voted)
    write_weights(fold_dir / "weights.tsv", weights)
    report = subject_report(voted)
    unit_report = evaluate_predictions(valid.labels, probs.argmax(axis=1), probs[:, 1])
    write_metrics(fold_dir / "metrics.tsv", [report.row(cfg.task, fold)])
    write_metrics(fold_dir / "unit_metrics.tsv", [unit_report.row(cfg.task, fold)])
    files.update(predictions="predictions.tsv", metrics="metrics.tsv", unit_metrics="unit_metrics.tsv", weights="weights.tsv")
    return {"valid_ba": report.ba, "unit_valid_ba": unit_report.ba, "files": {k: _prefixed(f"fold-{fold}", v) for k, v in files.items()}}


def _prefixed(prefix: str, value):
    if isinstance(value, list):
        return [f"{prefix}/{v}" for v in value]
    return f"{prefix}/{value}"


def _train_single(ctx: Context, fold: int, train: UnitSet, valid: UnitSet, fold_dir: Path) -> np.ndarray:
    cfg = ctx.cfg
    spec = build_spec(cfg, ctx.dims)
    tcfg = _training_config(cfg, fold)
    net = Network(spec, seed=tcfg.seed)
    freeze = apply_freeze(spec, cfg.freeze)
    meta = {"experiment": cfg.name, "fold": fold, "task": cfg.task}
    if cfg.transfer_kind == "cross_task":
        source, source_plan = _source_checkpoint(cfg, fold, None)
        outcome = finetune_from(source, net, train, valid, tcfg, freeze, ctx.quarantine, source_plan, ctx.plan, cfg.transfer_source)
    else:
        init = _initial_state(ctx, spec, fold, train, fold_dir)
        if init is not None:
            net.load_state_dict(init.tensors)
            meta.update({k: v for k, v in init.metadata.items() if k.startswith("transfer")})
        outcome = train_classifier(net, train, valid, tcfg, freeze, ctx.quarantine, meta)
    outcome.best.metadata.update(experiment=cfg.name, fold=str(fold), task=cfg.task, stop_reason=outcome.stop_reason)
    save_checkpoint(fold_dir / "checkpoints" / "best.ckpt", outcome.best)
    write_curve(fold_dir / "curves.tsv", outcome.curve)
    return evaluate_model(net, valid).probabilities


def _train_multi(ctx: Context, fold: int, train: UnitSet, valid: UnitSet, fold_dir: Path, threads: int) -> np.ndarray:
    cfg = ctx.cfg
    spec = build_spec(cfg, ctx.dims)
    positions = unit_positions(cfg, ctx.dims)
    datasets = []
    for pos in positions:
        datasets.append((train.subset(np.array(train.unit_index) == pos), valid.subset(np.array(valid.unit_index) == pos)))
    tcfg = _training_config(cfg, fold)
    if cfg.transfer_kind == "none":
        outcomes = train_multi_cnn(spec, datasets, tcfg, threads, ctx.quarantine)
    else:
        outcomes = []
        for i, (tr, va) in enumerate(datasets):
            cnn_cfg = replace(tcfg, seed=tcfg.seed ^ i)
            net = Network(spec, seed=cnn_cfg.seed)
            if cfg.transfer_kind == "cross_task":
                source, source_plan = _source_checkpoint(cfg, fold, i)
                outcomes.append(finetune_from(source, net, tr, va, cnn_cfg, None, ctx.quarantine, source_plan, ctx.plan, cfg.transfer_source))
            else:
                init = _initial_state(ctx, spec, fold, tr, fold_dir, cnn=i)
                if init is not None:
                    net.load_state_dict(init.tensors)
                outcomes.append(train_classifier(net, tr, va, cnn_cfg, None, ctx.quarantine, {"unit": i}))
    probs = np.zeros((len(valid), 2))
    for i, (outcome, (tr, va)) in enumerate(zip(outcomes, datasets)):
        outcome.best.metadata.update(experiment=cfg.name, fold=str(fold), task=cfg.task, unit=str(i))
        save_checkpoint(fold_dir / "checkpoints" / f"best-cnn-{i}.ckpt", outcome.best)
        write_curve(fold_dir / f"curves-cnn-{i}.tsv", outcome.curve)
        net = outcome.best.to_network(spec)
        probs[np.array(valid.unit_index) == positions[i]] = evaluate_model(net, va).probabilities
    return probs


def _svm_features(data: UnitSet) -> np.ndarray:
    return data.inputs.reshape(len(data), -1).astype(np.float64)


def _svm_probabilities(model: SVMModel, features: np.ndarray) -> np.ndarray:
    # logistic squashing of the margin: a monotone score, not a calibrated probability
    f = np.clip(model.decision_function(features), -50, 50)
    pos = 1.0 / (1.0 + np.exp(-f))
    return np.stack([1 - pos, pos], axis=1)


def svm_checkpoint(model: SVMModel, n_features: int, **meta) -> Checkpoint:
    digest = f"svm-linear-{n_features}"
    tensors = {"weight": model.weights.astype(np.float32), "bias": np.array([model.bias], np.float32)}
    return Checkpoint(digest, tensors, {"C": repr(model.C), **{k: str(v) for k, v in meta.items()}})


def svm_from_checkpoint(ckpt: Checkpoint) -> SVMModel:
    return SVMModel(ckpt.tensors["weight"].astype(np.float64), float(ckpt.tensors["bias"][0]), float(ckpt.metadata["C"]))


def _train_svm(ctx: Context, fold: int, train: UnitSet, valid: UnitSet, fold_dir: Path) -> np.ndarray:
    cfg = ctx.cfg
    x = _svm_features(train)
    y = np.where(train.labels == 1, 1, -1)
    C = svm_select_C(x, y, cfg.svm_grid, cfg.svm_inner_k, _fold_seed(cfg, fold))
    model = svm_train(x, y, C)
    stored = svm_checkpoint(model, x.shape[1], experiment=cfg.name, fold=fold, task=cfg.task)
    save_checkpoint(fold_dir / "checkpoints" / "best.ckpt", stored)
    return _svm_probabilities(svm_from_checkpoint(stored), _svm_features(valid))


# commands -------------------------------------------------------------------------------------


def open_context(cfg: ExperimentConfig, root: Path, plan: SplitPlan, log: AccessLog) -> Context:
    manifest = load_manifest(cfg.dataset)
    quarantine = Quarantine(plan, log, cfg.name)
    return Context(cfg, root, manifest, plan, log, quarantine, GuardedVolumes(manifest, quarantine, cfg.rescaling), _dataset_dims(manifest))


def leakage_text(report: LeakageReport) -> str:
    lines = ["cause\tverdict\tevidence"]
    for cause in CAUSES:
        v = report.verdicts[cause]
        lines.append(f"{cause}\t{v.status}\t{' | '.join(v.evidence[:50])}")
    return "\n".join(lines) + "\n"


def _source_plan(cfg: ExperimentConfig) -> SplitPlan | None:
    if cfg.transfer_kind != "cross_task":
        return None
    src = Path(cfg.transfer_source)
    if not src.exists():
        src = Path(cfg.output) / cfg.transfer_source
    return SplitPlan.read(src / "split_plan.tsv")


def run_experiment(cfg: ExperimentConfig, allow_leaky: bool = False, threads: int = 1, progress=None) -> dict:
    """Train every requested fold and write the experiment tree; returns the run manifest."""
    started = time.time()
    root = experiment_dir(cfg)
    root.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(cfg.dataset)
    plan, matching = build_plan(cfg, manifest, allow_leaky)
    plan.write(root / "split_plan.tsv")
    (root / "matching_report.txt").write_text(matching + "\n")
    cfg.write(root / "config.ini")
    log = AccessLog()
    ctx = open_context(cfg, root, plan, log)
    folds = list(cfg.folds) if cfg.folds else list(range(cfg.k))
    if any(f < 0 or f >= cfg.k for f in folds):
        raise ConfigurationError(f"folds {folds} outside 0..{cfg.k - 1}")
    per_fold = {}
    for j in folds:
        per_fold[j] = train_fold(ctx, j, threads)
        if progress is not None:
            progress(j, per_fold[j])
    log.write(root / "access_log.tsv")
    report = run_audits(plan, log, _source_plan(cfg), manifest)
    (root / "leakage_report.tsv").write_text(leakage_text(report))
    summary = aggregate_cv([per_fold[j]["valid_ba"] for j in folds])
    run = {
        "experiment": cfg.name,
        "config_digest": cfg.digest(),
        "code_version": volclf.__version__,
        "kernel_backend": kernels.BACKEND,
        "seeds": {"run": cfg.seed, "split": cfg.split_seed},
        "plan_digest": plan.digest,
        "granularity": plan.granularity,
        "started": started,
        "finished": time.time(),
        "folds": {str(j): per_fold[j] for j in folds},
        "validation_summary": summary.format(),
        "leakage_report": {c: v.status for c, v in report.verdicts.items()},
        "files": {
            "config": "config.ini", "split_plan": "split_plan.tsv", "access_log": "access_log.tsv",
            "leakage_report": "leakage_report.tsv", "matching_report": "matching_report.txt",
        },
    }
    if plan.granularity == "slice":
        run["banner"] = "LEAKY SPLIT: slices of one subject occupy several roles; results are biased"
    _atomic_write(root / "run_manifest.json", json.dumps(run, indent=1, sort_keys=True) + "\n")
    return run


def load_experiment(root: str | Path) -> tuple[ExperimentConfig, SplitPlan, AccessLog, dict]:
    root = Path(root)
    run_path = root / "run_manifest.json"
    if not run_path.exists():
        raise ConfigurationError(f"{root} has no run manifest; train it first")
    cfg = ExperimentConfig.read(root / "config.ini")
    plan = SplitPlan.read(root / "split_plan.tsv")
    log = AccessLog.read(root / "access_log.tsv")
    return cfg, plan, log, json.loads(run_path.read_text())


def test_experiment(root: str | Path) -> dict:
    """Evaluate every trained fold on the quarantined test set; refuses a second run."""
    root = Path(root)
    cfg, plan, log, run = load_experiment(root)
    if any(e.phase == "final_eval" for e in log.events):
        raise LeakageError(f"experiment {cfg.name} was already evaluated on its test set", ("final_eval already logged",))
    prior = audit_independent_test(log, plan)
    if prior.failed:
        raise LeakageError("independent-test audit fails before testing", prior.evidence)
    ctx = open_context(cfg, root, plan, log)
    invocation = uuid.uuid4().hex
    token = ctx.quarantine.token(None, "test")
    test = build_unit_set(ctx, None, "test", token, "final_eval", invocation)
    spec = build_spec(cfg, ctx.dims)
    rows, bas, ba_by_fold = [], [], {}
    for key in sorted(run["folds"], key=int):
        j = int(key)
        fold_dir = root / f"fold-{j}"
        probs = _fold_test_probabilities(cfg, spec, fold_dir, test, ctx)
        preds = unit_predictions(test, probs)
        weights = read_weights(fold_dir / "weights.tsv")
        voted = vote_subjects(preds, weights)
        write_predictions(fold_dir / "test_predictions.tsv", preds, voted)
        report = subject_report(voted)
        rows.append(report.row(cfg.task, j))
        bas.append(report.ba)
        ba_by_fold[j] = report.ba
    summary = aggregate_cv(bas)
    rows.append([cfg.task, "mean", f"{summary.mean:.4f}"] + [""] * (len(METRIC_COLUMNS) - 3))
    write_metrics(root / "test_metrics.tsv", rows)
    log.write(root / "access_log.tsv")
    report = run_audits(plan, log, _source_plan(cfg), ctx.manifest)
    (root / "leakage_report.tsv").write_text(leakage_text(report))
    run["test"] = {"invocation": invocation, "fold_ba": {str(k): v for k, v in ba_by_fold.items()}, "summary": summary.format(), "files": ["test_metrics.tsv"]}
    run["leakage_report"] = {c: v.status for c, v in report.verdicts.items()}
    _atomic_write(root / "run_manifest.json", json.dumps(run, indent=1, sort_keys=True) + "\n")
    return run["test"]


def _fold_test_probabilities(cfg, spec, fold_dir: Path, test: UnitSet, ctx: Context) -> np.ndarray:
    if cfg.approach == "svm":
        model = svm_from_checkpoint(load_checkpoint(fold_dir / "checkpoints" / "best.ckpt"))
        return _svm_probabilities(model, _svm_features(test))
    if cfg.approach == "patch3d_multi":
        positions = unit_positions(cfg, ctx.dims)
        probs = np.zeros((len(test), 2))
        index = np.array(test.unit_index)
        for i, pos in enumerate(positions):
            net = load_checkpoint(fold_dir / "checkpoints" / f"best-cnn-{i}.ckpt").to_network(spec)
            probs[index == pos] = evaluate_model(net, test.subset(index == pos)).probabilities
        return probs
    net = load_checkpoint(fold_dir / "checkpoints" / "best.ckpt").to_network(spec)
    return evaluate_model(net, test).probabilities


def leak_check(roots: Iterable[str | Path]) -> dict[str, LeakageReport]:
    out = {}
    for root in roots:
        cfg, plan, log, _ = load_experiment(root)
        manifest = load_manifest(cfg.dataset)
        out[str(root)] = run_audits(plan, log, _source_plan(cfg), manifest)
    return out
