import hashlib
import json
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import volclf.cli.pipeline as pipeline
from volclf.cli.config import APPROACHES, ExperimentConfig, UnitOptions, preset, preset_names
from volclf.cli.main import main
from volclf.errors import ConfigurationError, LeakageError
from volclf.splitting.plan import SplitPlan
from volclf.splitting.audits import audit_wrong_split
from volclf.training.config import TrainingConfig

TINY_SLICE = """
[experiment]
name = {name}
approach = slice2d
dataset = fp
output = exp
training_data = longitudinal
split = {split}
n_test_per_class = 2
k = 2

[training]
epochs = 1
batch_size = 8
learning_rate = 0.001
patience = 1

[units]
slice_drop = 4
slice_resize = 32
resnet_width = 2
"""

TINY_SVM = """
[experiment]
name = svm
approach = svm
dataset = sep
output = exp
n_test_per_class = 3
k = 2
svm_grid = 0.01, 1.0
svm_inner_k = 2
"""


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def svm_experiment(workdir):
    assert main(["generate", "separable", "--n", "20", "--dims", "8", "--out", "sep"]) == 0
    (workdir / "svm.ini").write_text(TINY_SVM)
    return workdir


# config -----------------------------------------------------------------------


floats = st.floats(1e-5, 10.0, allow_nan=False)


@settings(suppress_health_check=[HealthCheck.too_slow])
@given(
    st.sampled_from(APPROACHES),
    st.sampled_from(["baseline", "longitudinal"]),
    st.sampled_from(["none", "minmax"]),
    st.booleans(),
    st.integers(0, 2**31),
    st.lists(floats, min_size=1, max_size=4),
    st.integers(1, 20),
    floats,
    st.integers(1, 64),
)
def test_config_round_trip(approach, data, rescaling, threshold, seed, grid, patience, lr, patch):
    cfg = ExperimentConfig(
        name="exp-1", approach=approach, dataset="/d", training_data=data, rescaling=rescaling,
        threshold_voting=threshold, seed=seed, svm_grid=tuple(grid), folds=(0, 2),
        training=TrainingConfig(epochs=patience + 3, patience=patience, learning_rate=lr),
        units=UnitOptions(patch_size=patch, roi_left_center=(3, 4, 5)),
    )
    back = ExperimentConfig.from_ini(cfg.to_ini())
    assert back == cfg and back.digest() == cfg.digest()


def test_config_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_ini("[experiment]\nname = a\napproach = svm\ndataset = d\nbogus = 1\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_ini("[experiment]\nname = a\napproach = cnn9\ndataset = d\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(name="a", approach="svm", dataset="d", split="slice_leaky")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(name="a", approach="slice2d", dataset="d", transfer="ae_pretrain")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(name="a", approach="svm", dataset="d", task="AD_vs_XX")
    assert ExperimentConfig(name="a", approach="svm", dataset="d", task="CN_vs_AD").classes == ("CN", "AD")


def test_presets_load():
    names = preset_names()
    assert {"subject3d", "roi3d", "patch3d_single", "patch3d_multi", "slice2d", "svm", "leak-leaky", "leak-subject"} <= set(names)
    for name in names:
        cfg = preset(name, "/data", "/out")
        assert cfg.dataset == "/data" and cfg.output == "/out"
    with pytest.raises(ConfigurationError):
        preset("nope", "/data")


def test_list_presets(capsys):
    assert main(["train", "--list-presets"]) == 0
    assert "subject3d" in capsys.readouterr().out.split()


# generate / split ---------------------------------------------------------------


def test_generate_is_deterministic(workdir):
    assert main(["generate", "fingerprint", "--n", "5", "--dims", "6", "--sessions", "3", "--out", "a"]) == 0
    assert main(["generate", "fingerprint", "--n", "5", "--dims", "6", "--sessions", "3", "--out", "b"]) == 0
    assert tree_digest("a") == tree_digest("b")
    assert len(list(Path("a").rglob("*.vol3d"))) == 15
    assert main(["generate", "fingerprint", "--n", "5", "--dims", "6", "--out", "c", "--seed", "1"]) == 0
    assert tree_digest("a") != tree_digest("c")


def test_split_is_deterministic(svm_experiment, capsys):
    assert main(["split", "sep", "--out", "p1.tsv", "--n-test-per-class", "3", "--k", "2"]) == 0
    assert main(["split", "sep", "--out", "p2.tsv", "--n-test-per-class", "3", "--k", "2"]) == 0
    assert Path("p1.tsv").read_bytes() == Path("p2.tsv").read_bytes()
    plan = SplitPlan.read("p1.tsv")
    assert len(plan.test) == 6 and not audit_wrong_split(plan).failed
    assert "accepted" in Path("p1.tsv.matching.txt").read_text()


# exit codes -------------------------------------------------------------------


def test_exit_codes(svm_experiment, capsys):
    assert main(["train", "--config", "missing.ini"]) == 2
    assert main(["split", "sep", "--out", "p.tsv", "--n-test-per-class", "50"]) == 2
    assert main(["split", "nowhere", "--out", "p.tsv"]) == 3
    Path("broken").mkdir()
    Path("broken/manifest.tsv").write_text("participant_id\tbad\n")
    assert main(["split", "broken", "--out", "p.tsv"]) == 3
    assert main(["test", "--experiment", "exp/never"]) == 2
    err = capsys.readouterr().err
    assert "volclf split" in err and "volclf train" in err


def test_train_test_once_and_leak_check(svm_experiment, capsys):
    assert main(["train", "--config", "svm.ini"]) == 0
    root = Path("exp/svm")
    for name in ("config.ini", "split_plan.tsv", "access_log.tsv", "leakage_report.tsv", "run_manifest.json"):
        assert (root / name).is_file()
    run = json.loads((root / "run_manifest.json").read_text())
    for fold in ("0", "1"):
        assert (root / f"fold-{fold}" / "checkpoints" / "best.ckpt").is_file()
        assert (root / f"fold-{fold}" / "metrics.tsv").is_file()
    assert set(run["folds"]) == {"0", "1"}
    assert main(["leak-check", "exp/svm"]) == 0
    assert main(["test", "--experiment", "exp/svm"]) == 0
    out = capsys.readouterr().out
    assert out.count("test BA") == 3  # two folds plus the summary
    assert main(["test", "--experiment", "exp/svm"]) == 4
    assert "already evaluated" in capsys.readouterr().err
    assert main(["leak-check", "exp/svm/run_manifest.json"]) == 0


def test_rerun_reproduces_metrics(svm_experiment):
    assert main(["train", "--config", "svm.ini", "--deterministic"]) == 0
    first = Path("exp/svm/fold-0/metrics.tsv").read_bytes()
    assert main(["train", "--config", "svm.ini", "--deterministic"]) == 0
    assert Path("exp/svm/fold-0/metrics.tsv").read_bytes() == first


def test_leaky_split_needs_acknowledgement_and_fails_audit(workdir, capsys):
    assert main(["generate", "fingerprint", "--n", "12", "--dims", "12", "--sessions", "2", "--out", "fp"]) == 0
    Path("leaky.ini").write_text(TINY_SLICE.format(name="leaky", split="slice_leaky"))
    Path("clean.ini").write_text(TINY_SLICE.format(name="clean", split="subject"))
    assert main(["train", "--config", "leaky.ini"]) == 2
    assert main(["train", "--config", "leaky.ini", "--allow-leaky"]) == 0
    assert "LEAKY SPLIT" in capsys.readouterr().out
    assert main(["leak-check", "exp/leaky"]) == 4
    assert "wrong_split\tfail" in capsys.readouterr().out
    assert main(["train", "--config", "clean.ini"]) == 0
    assert main(["leak-check", "exp/clean"]) == 0


# quarantine -------------------------------------------------------------------


def test_training_never_reads_test_volumes(svm_experiment, monkeypatch):
    opened = []
    real = pipeline.read_volume

    def spy(path):
        opened.append(Path(path).resolve())
        return real(path)

    monkeypatch.setattr(pipeline, "read_volume", spy)
    assert main(["train", "--config", "svm.ini"]) == 0
    cfg = ExperimentConfig.read("exp/svm/config.ini")
    plan = SplitPlan.read("exp/svm/split_plan.tsv")
    manifest = pipeline.load_manifest(cfg.dataset)
    test_paths = {manifest.volume_path(r).resolve() for s in plan.test for r in manifest.sessions_of(s)}
    assert opened and not test_paths & set(opened)

    # fault injection: a training-phase request for test units is refused before any read
    opened.clear()
    log = pipeline.AccessLog()
    ctx = pipeline.open_context(replace(cfg, dataset=str(Path(cfg.dataset).resolve())), Path("exp/svm"), plan, log)
    with pytest.raises(LeakageError):
        pipeline.build_unit_set(ctx, 0, "test", ctx.quarantine.token(0, "train"), "train")
    with pytest.raises(LeakageError):
        pipeline.build_unit_set(ctx, None, "test", ctx.quarantine.token(None, "test"), "train")
    assert opened == []
    assert any(e.role == "test" for e in log.events)  # the attempt is on record


# other commands ---------------------------------------------------------------


def test_shapecheck_and_gradcheck(capsys):
    assert main(["shapecheck", "--quiet"]) == 0
    assert "0 diffs" in capsys.readouterr().out
    assert main(["shapecheck", "nope"]) == 2
    assert main(["gradcheck", "--ops-only", "--instances", "2"]) == 0


def test_vote_command(svm_experiment, capsys):
    assert main(["train", "--config", "svm.ini"]) == 0
    capsys.readouterr()
    assert main(["vote", "exp/svm", "--fold", "1"]) == 0
    assert "subject-level BA" in capsys.readouterr().out


def test_derive_labels_command(svm_experiment, capsys):
    assert main(["derive-labels", "sep"]) == 0
    lines = capsys.readouterr().out.split("\n")
    counts = dict(line.split("\t") for line in lines if line)
    assert int(counts["AD"]) + int(counts["CN"]) == 20
