"""Experiment configuration files (INI with one section per concern)."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from importlib import resources
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from volclf.errors import ConfigurationError
from volclf.training.config import TrainingConfig

APPROACHES = ("subject3d", "roi3d", "patch3d_single", "patch3d_multi", "slice2d", "svm")
UNIT_APPROACHES = ("roi3d", "patch3d_single", "patch3d_multi", "slice2d")
# disease ordering used to pick the positive class of "X_vs_Y" tasks
SEVERITY = {"CN": 0, "sMCI": 1, "MCI": 2, "pMCI": 3, "AD": 4}


def task_classes(task: str) -> tuple[str, str]:
    """``"AD_vs_CN"`` -> ``("CN", "AD")``: index 1 is the more advanced (positive) group."""
    parts = task.split("_vs_")
    if len(parts) != 2 or any(p not in SEVERITY for p in parts) or parts[0] == parts[1]:
        raise ConfigurationError(f"task must look like AD_vs_CN over {sorted(SEVERITY)}, got {task!r}")
    return tuple(sorted(parts, key=SEVERITY.get))


@dataclass(frozen=True)
class UnitOptions:
    patch_size: int = 8
    roi_size: int = 16
    roi_left_center: tuple[int, ...] = ()  # empty: hemisphere centroid
    roi_right_center: tuple[int, ...] = ()
    slice_drop: int = 4
    slice_resize: int = 32
    resnet_width: int = 16
    conv_padding: int = 1
    fc1_width: int = 1300


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    approach: str
    dataset: str
    output: str = "experiments"
    task: str = "AD_vs_CN"
    training_data: str = "baseline"
    rescaling: str = "minmax"
    split: str = "subject"
    transfer: str = "none"
    threshold_voting: bool = False
    freeze: str = "all_trainable"
    seed: int = 0
    split_seed: int = 2
    k: int = 5
    n_test_per_class: int = 20
    folds: tuple[int, ...] = ()  # empty: all folds
    plan: str = ""  # existing split plan file; empty: derive one in the experiment directory
    svm_grid: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)
    svm_inner_k: int = 10
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ae_training: TrainingConfig = field(default_factory=lambda: TrainingConfig(epochs=10, learning_rate=1e-4, batch_size=12, patience=1))
    units: UnitOptions = field(default_factory=UnitOptions)

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise ConfigurationError(f"approach must be one of {APPROACHES}, got {self.approach!r}")
        if self.training_data not in ("baseline", "longitudinal"):
            raise ConfigurationError("training_data must be baseline or longitudinal")
        if self.rescaling not in ("none", "minmax"):
            raise ConfigurationError("rescaling must be none or minmax")
        if self.split not in ("subject", "slice_leaky"):
            raise ConfigurationError("split must be subject or slice_leaky")
        if self.split == "slice_leaky" and self.approach != "slice2d":
            raise ConfigurationError("the leaky split only applies to slice2d")
        kind = self.transfer.split(":", 1)[0]
        if kind not in ("none", "ae_pretrain", "cross_task", "external_checkpoint"):
            raise ConfigurationError(f"unknown transfer {self.transfer!r}")
        if kind in ("cross_task", "external_checkpoint") and ":" not in self.transfer:
            raise ConfigurationError(f"transfer {kind} needs a source, e.g. {kind}:<source>")
        if kind == "ae_pretrain" and self.approach in ("slice2d", "svm"):
            raise ConfigurationError("autoencoder pretraining applies to the 3D approaches only")
        if not self.name or "/" in self.name:
            raise ConfigurationError("experiment name must be a non-empty path component")
        task_classes(self.task)

    @property
    def classes(self) -> tuple[str, str]:
        return task_classes(self.task)

    @property
    def transfer_kind(self) -> str:
        return self.transfer.split(":", 1)[0]

    @property
    def transfer_source(self) -> str:
        return self.transfer.split(":", 1)[1] if ":" in self.transfer else ""

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True, default=list).encode()).hexdigest()

    # INI ---------------------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        exp = {}
        for f in fields(self):
            if f.name in ("training", "ae_training", "units"):
                continue
            exp[f.name] = _dump(getattr(self, f.name))
        cp["experiment"] = exp
        cp["training"] = {k: _dump(v) for k, v in self.training.as_dict().items()}
        cp["ae_training"] = {k: _dump(v) for k, v in self.ae_training.as_dict().items()}
        cp["units"] = {k: _dump(v) for k, v in asdict(self.units).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def from_ini(cls, text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"unreadable config: {exc}") from exc
        if "experiment" not in cp:
            raise ConfigurationError("config needs an [experiment] section")
        kinds = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in cp["experiment"].items():
            if key not in kinds or key in ("training", "ae_training", "units"):
                raise ConfigurationError(f"unknown experiment option {key!r}")
            values[key] = _load(raw, _default_of(kinds[key]))
        for section in ("training", "ae_training"):
            if section in cp:
                base = _default_of(kinds[section])
                merged = {**base.as_dict(), **{k: v for k, v in cp[section].items()}}
                values[section] = TrainingConfig.from_mapping(merged)
        if "units" in cp:
            ufields = {f.name: f for f in fields(UnitOptions)}
            uvals = {}
            for key, raw in cp["units"].items():
                if key not in ufields:
                    raise ConfigurationError(f"unknown units option {key!r}")
                uvals[key] = _load(raw, getattr(UnitOptions(), key))
            values["units"] = UnitOptions(**uvals)
        for req in ("name", "approach", "dataset"):
            if req not in values:
                raise ConfigurationError(f"[experiment] is missing {req!r}")
        cfg = cls(**values)
        if base_dir is not None:
            cfg = cfg.resolved(base_dir)
        return cfg

    @classmethod
    def read(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_ini(Path(path).read_text())

    def resolved(self, base_dir: str | Path) -> ExperimentConfig:
        base = Path(base_dir)

        def fix(p: str) -> str:
            return p if not p or Path(p).is_absolute() else str(base / p)

        return replace(self, dataset=fix(self.dataset), output=fix(self.output), plan=fix(self.plan))


def _default_of(f):
    if f.default_factory is not MISSING:
        return f.default_factory()
    return f.default


def _dump(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, tuple):
        return ", ".join(_dump(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _load(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("yes", "true", "1", "on"):
            return True
        if raw.lower() in ("no", "false", "0", "off"):
            return False
        raise ConfigurationError(f"expected yes/no, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            items = [x.strip() for x in raw.split(",")]
            sample = default[0] if default else 0
            return tuple(float(x) if isinstance(sample, float) else int(x) for x in items)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {raw!r}: {exc}") from exc
    return raw


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("volclf.configs").iterdir() if p.name.endswith(".ini"))


def preset(name: str, dataset: str | Path, output: str | Path = "experiments", **overrides) -> ExperimentConfig:
    """A packaged experiment config pointed at ``dataset`` and ``output``."""
    if name not in preset_names():
        raise ConfigurationError(f"unknown preset {name!r}; known: {preset_names()}")
    text = resources.files("volclf.configs").joinpath(f"{name}.ini").read_text()
    cfg = ExperimentConfig.from_ini(text)
    return replace(cfg, dataset=str(dataset), output=str(output), **overrides)
