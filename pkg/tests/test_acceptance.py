"""End-to-end acceptance checks; each prints one pass/fail line in the session summary.

The pipeline runs take tens of minutes in total on one CPU core.
"""

import time
import warnings

import numpy as np
import pytest

from volclf.cli.config import preset
from volclf.cli import pipeline
from volclf.data import synthetic
from volclf.data.units import extract_patches, extract_slices
from volclf.evaluation.metrics import aggregate_cv
from volclf.evaluation.voting import compute_weights, soft_vote
from volclf.model_zoo import Checkpoint, Network, build_autoencoder_from, build_conv4_fc3, svm_train
from volclf.shape_oracle import diff_against_golden, golden_architectures, infer_shapes, load_golden
from volclf.splitting.audits import audit_transfer, audit_wrong_split
from volclf.splitting.plan import make_kfold, make_leaky_slice_split, make_test_split, manifest_digest
from volclf.tensor_engine.gradsuite import run_suite
from volclf.training.config import TrainingConfig
from volclf.training.loop import UnitSet, finetune_from, pretrain_autoencoder
from volclf.model_zoo.checkpoint import transfer_encoder_weights

from test_evaluation import brute_force_vote
from test_model_zoo import grid_oracle
from test_training import Script, rule_oracle

PIPELINES = ("subject3d", "roi3d", "patch3d_single", "patch3d_multi", "slice2d", "svm")
BUDGET_S = 15 * 60

pytestmark = pytest.mark.slow


@pytest.fixture(scope="session")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("datasets")
    synthetic.generate_inseparable(root / "inseparable", 0, 200, (32, 32, 32))
    synthetic.generate_separable(root / "separable", 0, 200, (32, 32, 32), 0.5)
    synthetic.generate_fingerprint(root / "fingerprint", 0, 100, 2, (32, 32, 32))
    return root


@pytest.fixture(scope="session")
def runs(datasets, tmp_path_factory):
    """Memoized experiment runs keyed by (preset, dataset)."""
    out_root = tmp_path_factory.mktemp("experiments")
    cache = {}

    def get(name, dataset, test=False, allow_leaky=False):
        key = (name, dataset)
        if key not in cache:
            cfg = preset(name, datasets / dataset, out_root / dataset)
            started = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                run = pipeline.run_experiment(cfg, allow_leaky=allow_leaky)
            cache[key] = {"run": run, "seconds": time.perf_counter() - started, "root": out_root / dataset / cfg.name}
        entry = cache[key]
        if test and "test" not in entry:
            started = time.perf_counter()
            entry["test"] = pipeline.test_experiment(entry["root"])
            entry["seconds"] += time.perf_counter() - started
        return entry

    return get


def validation_ba(run):
    return aggregate_cv([f["valid_ba"] for f in run["folds"].values()]).mean


SANITY = {1: {}, 2: {}}


def record_sanity(record, number, title, approach, passed, detail):
    SANITY[number][approach] = (passed, detail)
    done = SANITY[number]
    ok = all(p for p, _ in done.values()) and len(done) == len(PIPELINES)
    missing = [a for a in PIPELINES if a not in done]
    text = "; ".join(f"{a} {d}" for a, (_, d) in done.items())
    if missing:
        text += f"; not run: {', '.join(missing)}"
    record(number, title, ok, text)


# 1, 2: sanity datasets -------------------------------------------------------------


@pytest.mark.parametrize("approach", PIPELINES)
def test_c01_inseparable_is_chance(approach, runs, acceptance_record):
    entry = runs(approach, "inseparable")
    ba = validation_ba(entry["run"])
    passed = 0.40 <= ba <= 0.60 and entry["seconds"] < BUDGET_S
    record_sanity(acceptance_record, 1, "inseparable validation BA in [0.40, 0.60]", approach, passed,
                  f"{ba:.2f} ({entry['seconds']:.0f}s)")
    assert 0.40 <= ba <= 0.60
    assert entry["seconds"] < BUDGET_S


@pytest.mark.parametrize("approach", PIPELINES)
def test_c02_separable_is_learned(approach, runs, acceptance_record):
    entry = runs(approach, "separable", test=True)
    ba = validation_ba(entry["run"])
    test_bas = [float(v) for v in entry["test"]["fold_ba"].values()]
    test_ba = float(np.mean(test_bas))
    passed = ba >= 0.95 and min(test_bas) >= 0.95 and entry["seconds"] < BUDGET_S
    record_sanity(acceptance_record, 2, "separable validation and test BA >= 0.95", approach, passed,
                  f"val {ba:.2f} test {test_ba:.2f} ({entry['seconds']:.0f}s)")
    assert ba >= 0.95 and min(test_bas) >= 0.95
    assert entry["seconds"] < BUDGET_S


# 3: leakage demonstration ----------------------------------------------------------


def test_c03_leaky_split_inflates_accuracy(runs, acceptance_record):
    leaky = runs("leak-leaky", "fingerprint", allow_leaky=True)
    clean = runs("leak-subject", "fingerprint")
    a, b = validation_ba(leaky["run"]), validation_ba(clean["run"])
    seconds = leaky["seconds"] + clean["seconds"]
    passed = a >= 0.90 and b <= 0.65 and a - b >= 0.25 and seconds < 20 * 60
    acceptance_record(3, "leaky slice split vs subject split", passed,
                      f"leaky {a:.2f}, subject {b:.2f}, gap {a - b:.2f} ({seconds:.0f}s)")
    assert leaky["run"]["leakage_report"]["wrong_split"] == "fail"
    assert clean["run"]["leakage_report"]["wrong_split"] == "pass"
    assert passed


# 4: shapes -------------------------------------------------------------------------


def test_c04_shape_tables(acceptance_record):
    started = time.perf_counter()
    diffs = {name: diff_against_golden(infer_shapes(spec), load_golden(name)) for name, spec in golden_architectures().items()}
    seconds = time.perf_counter() - started
    total = sum(len(d) for d in diffs.values())
    acceptance_record(4, "shape tables", total == 0 and seconds < 1.0, f"{len(diffs)} tables, {total} diffs, {seconds:.2f}s")
    assert total == 0 and seconds < 1.0


# 5: gradients ----------------------------------------------------------------------


def test_c05_gradients(acceptance_record):
    started = time.perf_counter()
    errors = run_suite(20, 0)
    seconds = time.perf_counter() - started
    worst = max(errors, key=errors.get)
    passed = errors[worst] < 1e-4 and seconds < 300
    acceptance_record(5, "finite-difference gradients", passed,
                      f"{len(errors)} cases x 20 draws, worst {worst} {errors[worst]:.1e} ({seconds:.0f}s)")
    assert passed


# 6: voting -------------------------------------------------------------------------


def test_c06_voting_oracle(acceptance_record):
    rng = np.random.default_rng(1)
    mismatches = 0
    for _ in range(1000):
        m, c = rng.integers(1, 8), rng.integers(2, 4)
        raw = rng.integers(0, 5, (m, c)).astype(float)
        raw[:, 0] += raw.sum(axis=1) == 0
        probs = raw / raw.sum(axis=1, keepdims=True)
        weights = rng.integers(0, 9, m) / 8
        got, _ = soft_vote(dict(enumerate(probs.tolist())), dict(enumerate(weights.tolist())))
        mismatches += got != brute_force_vote(probs.tolist(), weights.tolist())
    w = compute_weights([0.9, 0.6, 0.75], threshold=0.7)
    passed = mismatches == 0 and w[1] == 0.0 and abs(w[0] - 0.9 / 1.65) < 1e-12
    acceptance_record(6, "soft voting oracle", passed, f"{mismatches} mismatches in 1000; weights {[round(w[i], 3) for i in range(3)]}")
    assert passed


# 7: structural constants -----------------------------------------------------------


def test_c07_structural_constants(acceptance_record):
    volume = np.zeros((169, 208, 179), np.float32)
    patches = extract_patches(volume, 50)
    slices = extract_slices(volume, 0, 20, None)
    passed = len(patches) == 36 and len(slices) == 129
    acceptance_record(7, "patch and slice counts", passed, f"{len(patches)} patches, {len(slices)} slices")
    assert passed


# 8: split determinism --------------------------------------------------------------


def test_c08_split_integrity(datasets, tmp_path, acceptance_record):
    manifest = pipeline.load_manifest(datasets / "fingerprint")
    files = []
    for i in range(2):
        split = make_test_split(manifest, 10, 2)
        labels = {s: int(c == "AD") for s, c in manifest.subjects_by_class(("CN", "AD")).items() if s not in split.test}
        plan = make_kfold(labels, 5, 2, split.test, manifest_digest(manifest))
        plan.write(tmp_path / f"plan{i}.tsv")
        files.append((tmp_path / f"plan{i}.tsv").read_bytes())
    identical = files[0] == files[1]
    subject_ok = not audit_wrong_split(plan, manifest).failed
    units = {f"{r.subject}:{r.session}:{k}": int(labels.get(r.subject, 0)) for r in manifest.sessions for k in range(3)
             if r.subject in labels}
    leaky_flagged = all(audit_wrong_split(make_leaky_slice_split(units, 5, seed)).failed for seed in range(5))
    longitudinal = all(
        len({plan.role(r.subject, j) for r in manifest.sessions_of(s)}) == 1
        for s in manifest.subjects for j in range(plan.k)
    )
    passed = identical and subject_ok and leaky_flagged and longitudinal
    acceptance_record(8, "split determinism and integrity", passed,
                      f"byte-identical={identical}, subject plan passes={subject_ok}, leaky plans fail={leaky_flagged}, sessions share role={longitudinal}")
    assert passed


# 9: early stopping -----------------------------------------------------------------


def test_c09_early_stopping(monkeypatch, acceptance_record):
    import volclf.training.loop as loop
    from volclf.model_zoo import apply_freeze
    from volclf.training.loop import train_classifier

    spec = build_conv4_fc3((6, 6, 6), conv_padding=1)
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (4,) + spec.input_shape).astype(np.float32)
    train, valid = UnitSet(x, [0, 1, 0, 1], list("abcd")), UnitSet(x.copy(), [0, 1, 0, 1], list("efgh"))
    frozen = apply_freeze(spec, "none_trainable")
    bad = 0
    for patience in (1, 3, 5, 10):
        for _ in range(100):
            losses = list(rng.integers(0, 6, 20) / 4)
            bas = list(rng.integers(0, 5, 20) / 4)
            monkeypatch.setattr(loop, "evaluate_model", Script(losses, bas, valid))
            out = train_classifier(Network(spec), train, valid, TrainingConfig(epochs=20, batch_size=4, patience=patience), freeze=frozen)
            expected = rule_oracle(losses, patience) or 20
            best_ok = out.best_epoch == int(np.argmax(bas[: out.epochs_run])) + 1
            bad += out.epochs_run != expected or not best_ok
    acceptance_record(9, "early stopping", bad == 0, f"{bad} disagreements over 400 sequences")
    assert bad == 0


# 10: aggregation -------------------------------------------------------------------


def test_c10_aggregation(acceptance_record):
    text = aggregate_cv([0.88, 0.88, 0.84, 0.85, 0.78]).format()
    expected = "0.85 ± 0.04 [0.88, 0.88, 0.84, 0.85, 0.78]"
    acceptance_record(10, "aggregation string", text == expected, text)
    assert text == expected


# 11: SVM ---------------------------------------------------------------------------


def test_c11_svm(runs, acceptance_record):
    entry = runs("svm", "separable", test=True)
    val = validation_ba(entry["run"])
    test_bas = [float(v) for v in entry["test"]["fold_ba"].values()]
    rel = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        y = np.array([-1, 1] * 5, dtype=float)
        x = rng.standard_normal((10, 2)) + 0.8 * y[:, None]
        oracle = grid_oracle(x, y, 1.0)
        rel.append(abs(svm_train(x, y, 1.0, tol=1e-6).objective(x, y) - oracle) / oracle)
    passed = val == 1.0 and min(test_bas) == 1.0 and max(rel) < 1e-3
    acceptance_record(11, "SVM baseline", passed,
                      f"val {val:.2f}, test {np.mean(test_bas):.2f}, objective rel err {max(rel):.1e}")
    assert passed


# 12: transfer ----------------------------------------------------------------------


def test_c12_transfer(acceptance_record):
    spec = build_conv4_fc3((6, 6, 6), conv_padding=1)
    rng = np.random.default_rng(12)
    data = UnitSet(rng.uniform(0, 1, (4,) + spec.input_shape).astype(np.float32), [0, 1, 0, 1], list("abcd"))
    ae_ckpt, _ = pretrain_autoencoder(Network(build_autoencoder_from(spec), seed=0), data,
                                      TrainingConfig(epochs=1, batch_size=2, patience=1, learning_rate=1e-3))
    moved = transfer_encoder_weights(ae_ckpt, spec, seed=3)
    encoder = {l.name for l in spec.conv_block_layers()}
    copied = [n for n in moved.tensors if n.rsplit(".", 1)[0] in encoder]
    bitwise = bool(copied) and all(moved.tensors[n].tobytes() == ae_ckpt.tensors[n].tobytes() for n in copied)
    loaded = moved.to_network(spec).state_dict()
    bitwise &= all(loaded[n].tobytes() == ae_ckpt.tensors[n].tobytes() for n in copied)

    source = Checkpoint.from_network(Network(spec, seed=21))
    out = finetune_from(source, Network(spec, seed=0), data, data, TrainingConfig(epochs=0, batch_size=2, patience=1))
    zero_epoch = all(out.best.tensors[n].tobytes() == a.tobytes() for n, a in source.tensors.items())

    target = make_kfold({f"t{i}": i % 2 for i in range(10)}, 2, 2, test=("cn0", "cn1"))
    overlapping = make_kfold({"cn0": 0, "cn1": 0, "ad0": 1, "ad1": 1}, 2, 2)
    compliant = make_kfold({"cn8": 0, "cn9": 0, "ad0": 1, "ad1": 1}, 2, 2)
    audit_ok = audit_transfer(overlapping, target).failed and not audit_transfer(compliant, target).failed

    passed = bitwise and zero_epoch and audit_ok
    acceptance_record(12, "transfer plumbing", passed,
                      f"{len(copied)} encoder tensors bitwise={bitwise}, zero-epoch fine-tune bitwise={zero_epoch}, transfer audit={audit_ok}")
    assert passed
