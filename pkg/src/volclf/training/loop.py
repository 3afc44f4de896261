"""Classifier and autoencoder training, evaluation and transfer workflows."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from volclf.errors import ConfigurationError, DataError, LeakageError, TransferError
from volclf.evaluation.metrics import balanced_accuracy
from volclf.model_zoo.checkpoint import Checkpoint
from volclf.model_zoo.freeze import FreezeMask
from volclf.model_zoo.network import Network
from volclf.model_zoo.spec import ModelSpec
from volclf.splitting.access import Quarantine, RoleToken
from volclf.splitting.audits import audit_transfer
from volclf.splitting.plan import SplitPlan, unit_subject
from volclf.tensor_engine import functional as F
from volclf.tensor_engine.optim import Adam
from volclf.tensor_engine.tensor import Tensor, backward, no_grad
from volclf.training.config import CurvePoint, TrainingConfig
from volclf.training.stopping import EarlyStopping, best_index

EVAL_BATCH = 64


@dataclass
class UnitSet:
    """In-memory units (subjects, patches, ROIs or slices) with labels and provenance.

    ``unit_ids`` are the ids used by the split plan (subject ids, or
    ``subject:session:index`` for slice-granularity plans); ``token`` is the
    role token that authorizes reading them.
    """

    inputs: np.ndarray
    labels: np.ndarray
    unit_ids: list[str]
    sessions: list[str] = field(default_factory=list)
    unit_index: list[int] = field(default_factory=list)
    token: RoleToken | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels) or len(self.labels) != len(self.unit_ids):
            raise DataError("inputs, labels and unit ids differ in length")
        if not self.sessions:
            self.sessions = [""] * len(self.labels)
        if not self.unit_index:
            self.unit_index = [0] * len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def subjects(self) -> list[str]:
        return [unit_subject(u) for u in self.unit_ids]

    def subset(self, mask) -> UnitSet:
        idx = np.flatnonzero(mask)
        return UnitSet(
            self.inputs[idx], self.labels[idx], [self.unit_ids[i] for i in idx],
            [self.sessions[i] for i in idx], [self.unit_index[i] for i in idx], self.token,
        )


@dataclass
class EvalResult:
    probabilities: np.ndarray
    loss: float
    ba: float

    @property
    def predictions(self) -> np.ndarray:
        return self.probabilities.argmax(axis=1)


@dataclass
class TrainingOutcome:
    best: Checkpoint
    curve: list[CurvePoint]
    stop_reason: str  # "early" or "exhausted"
    epochs_run: int
    best_epoch: int


def _authorize(quarantine: Quarantine | None, data: UnitSet, phase: str, invocation: str = "") -> None:
    if quarantine is None:
        return
    if data.token is None:
        raise LeakageError(f"{phase} data carries no role token", ())
    quarantine.check(data.token, sorted(set(data.unit_ids)), phase, invocation)


def evaluate_model(net: Network, data: UnitSet, batch_size: int = EVAL_BATCH) -> EvalResult:
    """Eval-mode probabilities for every unit, mean cross-entropy and BA."""
    probs, loss_sum = [], 0.0
    with no_grad():
        for start in range(0, len(data), batch_size):
            x = data.inputs[start : start + batch_size]
            y = data.labels[start : start + batch_size]
            logits = net.forward(np.asarray(x, dtype=net.dtype), train=False)
            loss_sum += F.cross_entropy_loss(logits, y).item() * len(y)
            probs.append(F.softmax(logits, axis=1).data.astype(np.float64))
    p = np.concatenate(probs) if probs else np.zeros((0, net.spec.n_class))
    ba = balanced_accuracy(data.labels, p.argmax(axis=1)) if len(data) else math.nan
    return EvalResult(p, loss_sum / max(len(data), 1), ba)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out.pop()])  # batch norm needs two samples
    return out


def _check_classes(data: UnitSet, n_class: int) -> None:
    present = np.bincount(data.labels, minlength=n_class)
    if (present == 0).any():
        raise DataError(f"training set lacks class(es) {np.flatnonzero(present == 0).tolist()}")


def train_classifier(
    net: Network,
    train: UnitSet,
    valid: UnitSet,
    config: TrainingConfig,
    freeze: FreezeMask | None = None,
    quarantine: Quarantine | None = None,
    metadata: dict | None = None,
    on_point: Callable[[CurvePoint], None] | None = None,
) -> TrainingOutcome:
    """Mini-batch Adam on cross-entropy with patience early stopping.

    The returned checkpoint holds the parameters of the evaluation with the
    highest validation BA (earliest on ties).
    """
    _authorize(quarantine, train, "train")
    _authorize(quarantine, valid, "model_select")
    _check_classes(train, net.spec.n_class)
    if config.batch_size > len(train):
        raise ConfigurationError(f"batch size {config.batch_size} exceeds the {len(train)} training units")
    if freeze is not None:
        net.set_trainable(freeze.trainable)
    frozen_bn = net.frozen_bn_layers()
    optimizer = Adam(
        net.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2),
        eps=config.epsilon, weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopping(config.patience)
    curve: list[CurvePoint] = []
    states: list[dict] = []
    stop_reason = "exhausted"
    meta = dict(metadata or {})

    def evaluate(epoch: int, iteration: int | None) -> bool:
        tr = evaluate_model(net, train)
        va = evaluate_model(net, valid)
        point = CurvePoint(epoch, tr.loss, tr.ba, va.loss, va.ba, iteration)
        curve.append(point)
        states.append(net.state_dict())
        if on_point is not None:
            on_point(point)
        return stopper.update(va.loss)

    iteration = 0
    epochs_run = 0
    stop = False
    initial = net.state_dict()
    for epoch in range(1, config.epochs + 1):
        net.eval_bn = set(frozen_bn) if epoch > config.bn_warmup_epochs else set()
        for idx in _batches(len(train), config.batch_size, rng):
            x = Tensor(np.asarray(train.inputs[idx], dtype=net.dtype))
            logits = net.forward(x, train=True, rng=rng)
            loss = F.cross_entropy_loss(logits, train.labels[idx])
            if optimizer.params:  # a fully frozen network has nothing to update
                net.zero_grad()
                backward(loss)
                optimizer.step()
            iteration += 1
            if config.eval_every_iterations and iteration % config.eval_every_iterations == 0:
                if evaluate(epoch, iteration):
                    stop = True
                    break
        epochs_run = epoch
        if stop:
            stop_reason = "early"
            break
        if not config.eval_every_iterations and epoch % config.eval_every_epochs == 0:
            if evaluate(epoch, None):
                stop_reason = "early"
                break
    net.eval_bn = set()
    if curve:
        b = best_index([p.valid_ba for p in curve])
        best_state, best_point = states[b], curve[b]
        meta.update(epoch=best_point.epoch, valid_ba=f"{best_point.valid_ba:.6f}", valid_loss=f"{best_point.valid_loss:.6f}")
    else:
        best_state, best_point = initial, None
        meta.update(epoch=0)
    net.load_state_dict(best_state)
    meta.setdefault("seed", config.seed)
    ckpt = Checkpoint(net.spec.digest(), best_state, {k: str(v) for k, v in meta.items()})
    return TrainingOutcome(ckpt, curve, stop_reason, epochs_run, best_point.epoch if best_point else 0)


def pretrain_autoencoder(
    ae: Network,
    data: UnitSet,
    config: TrainingConfig,
    quarantine: Quarantine | None = None,
    valid: UnitSet | None = None,
    metadata: dict | None = None,
) -> tuple[Checkpoint, list[CurvePoint]]:
    """Fixed-epoch MSE reconstruction training on training-split units only."""
    if quarantine is not None:
        if data.token is None or data.token.role != "train":
            raise LeakageError("autoencoder pretraining may only read training units", (repr(data.token),))
        _authorize(quarantine, data, "ae_pretrain")
        if valid is not None:
            _authorize(quarantine, valid, "model_select")
    optimizer = Adam(
        ae.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2),
        eps=config.epsilon, weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(config.seed)
    curve = []

    def recon_loss(units: UnitSet) -> float:
        total = 0.0
        with no_grad():
            for start in range(0, len(units), EVAL_BATCH):
                x = np.asarray(units.inputs[start : start + EVAL_BATCH], dtype=ae.dtype)
                total += F.mse_loss(ae.forward(x, train=False), x).item() * len(x)
        return total / len(units)

    for epoch in range(1, config.epochs + 1):
        for idx in _batches(len(data), config.batch_size, rng):
            x = np.asarray(data.inputs[idx], dtype=ae.dtype)
            loss = F.mse_loss(ae.forward(x, train=True, rng=rng), x)
            ae.zero_grad()
            backward(loss)
            optimizer.step()
        v = recon_loss(valid) if valid is not None else math.nan
        curve.append(CurvePoint(epoch, recon_loss(data), math.nan, v, math.nan))
    meta = {"epoch": config.epochs, "seed": config.seed, **(metadata or {})}
    return Checkpoint.from_network(ae, **meta), curve


def finetune_from(
    source: Checkpoint,
    target: Network,
    train: UnitSet,
    valid: UnitSet,
    config: TrainingConfig,
    freeze: FreezeMask | None = None,
    quarantine: Quarantine | None = None,
    source_plan: SplitPlan | None = None,
    target_plan: SplitPlan | None = None,
    source_experiment: str = "",
) -> TrainingOutcome:
    """Initialize every tensor from ``source`` and train on the target task."""
    if source.digest != target.spec.digest():
        raise TransferError("source checkpoint was trained on a different architecture")
    if source_plan is not None and target_plan is not None:
        verdict = audit_transfer(source_plan, target_plan)
        if verdict.failed:
            raise LeakageError("source task subjects appear in the target test set", verdict.evidence)
    target.load_state_dict(source.tensors)
    meta = {"transfer": "cross_task", "transfer_source_experiment": source_experiment or source.metadata.get("experiment", "")}
    return train_classifier(target, train, valid, config, freeze, quarantine, meta)


def train_multi_cnn(
    spec: ModelSpec,
    datasets: Sequence[tuple[UnitSet, UnitSet]],
    config: TrainingConfig,
    threads: int = 1,
    quarantine: Quarantine | None = None,
) -> list[TrainingOutcome]:
    """One independent classifier per patch location, seeded ``seed ^ index``."""
    if not datasets:
        raise ConfigurationError("no patch datasets")
    ref_train = sorted(set(datasets[0][0].subjects))
    ref_valid = sorted(set(datasets[0][1].subjects))
    for i, (tr, va) in enumerate(datasets):
        if sorted(set(tr.subjects)) != ref_train or sorted(set(va.subjects)) != ref_valid:
            raise ConfigurationError(f"patch dataset {i} is not aligned with the same split plan")
        if tr.token and datasets[0][0].token and tr.token.plan_digest != datasets[0][0].token.plan_digest:
            raise ConfigurationError(f"patch dataset {i} was split by a different plan")

    def run(index: int) -> TrainingOutcome:
        cfg = TrainingConfig(**{**config.as_dict(), "seed": config.seed ^ index})
        net = Network(spec, seed=cfg.seed)
        tr, va = datasets[index]
        return train_classifier(net, tr, va, cfg, quarantine=quarantine, metadata={"unit": index})

    if threads <= 1:
        return [run(i) for i in range(len(datasets))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(datasets))))
