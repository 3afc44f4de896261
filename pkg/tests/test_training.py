import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import volclf.training.loop as loop
from volclf.errors import ConfigurationError, DataError, LeakageError, TransferError
from volclf.model_zoo import Checkpoint, Network, apply_freeze, build_autoencoder_from, build_conv4_fc3
from volclf.splitting.access import AccessLog, Quarantine
from volclf.splitting.plan import make_kfold
from volclf.training.config import CurvePoint, TrainingConfig, read_curve, write_curve
from volclf.training.loop import (
    EvalResult,
    UnitSet,
    evaluate_model,
    finetune_from,
    pretrain_autoencoder,
    train_classifier,
    train_multi_cnn,
)
from volclf.training.stopping import best_index, stopping_evaluation

SPEC = build_conv4_fc3((6, 6, 6), conv_padding=1)


def units(n=8, seed=0, ids=None, shift=0.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.uniform(0, 1, (n,) + SPEC.input_shape).astype(np.float32) + shift * y[:, None, None, None, None]
    return UnitSet(x, y, ids or [f"s{i:02d}" for i in range(n)])


def rule_oracle(losses, patience):
    """First evaluation t at which each of the last ``patience`` losses exceeds every loss before it."""
    for t in range(patience, len(losses) + 1):
        if all(losses[i] > min(losses[:i], default=math.inf) for i in range(t - patience, t)):
            return t
    return None


# stopping rule --------------------------------------------------------------------


def test_spec_example_stops_after_third_epoch():
    assert stopping_evaluation([1.0, 0.9, 0.95], 1) == 3
    assert stopping_evaluation([1.0, 0.9, 0.8, 0.7], 2) is None
    assert stopping_evaluation([1.0, 1.0, 1.0], 1) is None  # equal is not higher


@given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.sampled_from([1, 3, 5, 10]))
def test_stopping_rule_matches_oracle(seq, patience):
    losses = [v / 4 for v in seq]  # a small alphabet forces ties with the running minimum
    assert stopping_evaluation(losses, patience) == rule_oracle(losses, patience)


def test_best_index_earliest_tie_and_nan():
    assert best_index([0.5, 0.8, 0.8, 0.7]) == 1
    assert best_index([math.nan, 0.6, math.nan]) == 1
    assert best_index([0.5]) == 0


class Script:
    """Stand-in for evaluate_model that replays validation losses and BAs."""

    def __init__(self, losses, bas, valid):
        self.losses, self.bas, self.valid, self.calls = list(losses), list(bas), valid, 0

    def __call__(self, net, data, batch_size=64):
        if data is not self.valid:
            return EvalResult(np.full((len(data), 2), 0.5), 0.7, 0.5)
        i = self.calls
        self.calls += 1
        return EvalResult(np.full((len(data), 2), 0.5), self.losses[i], self.bas[i])


def test_trainer_stopping_matches_oracle(monkeypatch):
    rng = np.random.default_rng(0)
    train, valid = units(4, 0), units(4, 1)
    frozen = apply_freeze(SPEC, "none_trainable")  # forward passes only: keeps 400 runs cheap
    for patience in (1, 3, 5, 10):
        for _ in range(100):
            epochs = 20
            losses = list(rng.integers(0, 6, epochs) / 4)
            bas = list(rng.integers(0, 5, epochs) / 4)
            monkeypatch.setattr(loop, "evaluate_model", Script(losses, bas, valid))
            cfg = TrainingConfig(epochs=epochs, batch_size=4, patience=patience)
            out = train_classifier(Network(SPEC), train, valid, cfg, freeze=frozen)
            expected = rule_oracle(losses, patience)
            assert out.epochs_run == (expected or epochs)
            assert out.stop_reason == ("early" if expected else "exhausted")
            seen = bas[: out.epochs_run]
            assert out.best_epoch == int(np.argmax(seen)) + 1
            assert [p.valid_ba for p in out.curve] == seen


def test_strictly_decreasing_loss_exhausts(monkeypatch):
    train, valid = units(4, 0), units(4, 1)
    monkeypatch.setattr(loop, "evaluate_model", Script([1.0, 0.9, 0.8], [0.5, 0.6, 0.7], valid))
    out = train_classifier(Network(SPEC), train, valid, TrainingConfig(epochs=3, batch_size=4, patience=1))
    assert out.stop_reason == "exhausted" and out.epochs_run == 3 and out.best_epoch == 3


def test_best_checkpoint_holds_best_epoch_parameters(monkeypatch):
    train, valid = units(6, 0), units(4, 1)
    snapshots = []
    bas = [0.5, 0.75, 0.75, 0.6]
    monkeypatch.setattr(loop, "evaluate_model", Script([1.0, 0.9, 0.8, 0.7], bas, valid))
    net = Network(SPEC, seed=1)
    cfg = TrainingConfig(epochs=4, batch_size=3, patience=2, learning_rate=1e-2)
    out = train_classifier(net, train, valid, cfg, on_point=lambda p: snapshots.append(net.state_dict()))
    assert out.best_epoch == 2
    assert out.best.metadata["valid_ba"] == "0.750000"
    for name, arr in out.best.tensors.items():
        assert arr.tobytes() == snapshots[1][name].tobytes()
    assert any(not np.array_equal(snapshots[1][n], snapshots[3][n]) for n in snapshots[1])


# training ---------------------------------------------------------------------


def test_training_is_deterministic():
    train, valid = units(8, 0, shift=0.5), units(4, 1, shift=0.5)
    cfg = TrainingConfig(epochs=3, batch_size=4, patience=3, learning_rate=1e-3)
    a = train_classifier(Network(SPEC, seed=5), train, valid, cfg)
    b = train_classifier(Network(SPEC, seed=5), train, valid, cfg)
    assert a.curve == b.curve
    assert a.best.parameters_equal(b.best)


def test_training_errors():
    train, valid = units(4, 0), units(4, 1)
    one_class = UnitSet(train.inputs, np.zeros(4), train.unit_ids)
    with pytest.raises(DataError):
        train_classifier(Network(SPEC), one_class, valid, TrainingConfig(epochs=1, batch_size=2, patience=1))
    with pytest.raises(ConfigurationError):
        train_classifier(Network(SPEC), train, valid, TrainingConfig(epochs=1, batch_size=5, patience=1))
    with pytest.raises(ConfigurationError):
        TrainingConfig(epochs=2, patience=3)
    with pytest.raises(DataError):
        UnitSet(train.inputs, [0, 1], train.unit_ids)


def test_evaluate_model_rows_and_determinism():
    data = units(5, 2)
    net = Network(SPEC, seed=0)
    a, b = evaluate_model(net, data, batch_size=2), evaluate_model(net, data)
    np.testing.assert_allclose(a.probabilities.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(a.probabilities, b.probabilities, rtol=1e-6)
    assert a.probabilities.shape == (5, 2) and 0.0 <= a.ba <= 1.0


def test_curve_file_round_trip(tmp_path):
    curve = [CurvePoint(1, 0.7, 0.5, 0.69, 0.5), CurvePoint(2, 0.6, 0.75, math.nan, 1.0)]
    write_curve(tmp_path / "c.tsv", curve)
    assert (tmp_path / "c.tsv").read_text().splitlines()[0] == "epoch\ttrain_loss\ttrain_ba\tvalid_loss\tvalid_ba"
    back = read_curve(tmp_path / "c.tsv")
    assert back[0] == curve[0] and back[1].epoch == 2 and math.isnan(back[1].valid_loss)


# transfer ---------------------------------------------------------------------


def test_zero_epoch_finetune_returns_source():
    source = Checkpoint.from_network(Network(SPEC, seed=11))
    out = finetune_from(source, Network(SPEC, seed=0), units(4), units(4, 1), TrainingConfig(epochs=0, batch_size=2, patience=1))
    assert out.epochs_run == 0 and out.curve == []
    for name, arr in source.tensors.items():
        assert out.best.tensors[name].tobytes() == arr.tobytes()
    with pytest.raises(TransferError):
        finetune_from(source, Network(build_conv4_fc3((8, 8, 8), conv_padding=1)), units(4), units(4, 1), TrainingConfig(epochs=0))


def test_finetune_refuses_overlapping_source():
    source = Checkpoint.from_network(Network(SPEC, seed=11))
    labels = {f"t{i}": i % 2 for i in range(10)}
    target_plan = make_kfold(labels, 2, 2, test=("x0", "x1"))
    source_plan = make_kfold({"x0": 0, "x1": 1, "y0": 0, "y1": 1}, 2, 2)
    with pytest.raises(LeakageError):
        finetune_from(source, Network(SPEC), units(4), units(4, 1), TrainingConfig(epochs=0),
                      source_plan=source_plan, target_plan=target_plan)


# autoencoder ------------------------------------------------------------------


def test_autoencoder_pretraining_deterministic_and_finite():
    ae_spec = build_autoencoder_from(SPEC)
    data = units(4)
    cfg = TrainingConfig(epochs=1, batch_size=2, patience=1, learning_rate=1e-3)
    a, curve_a = pretrain_autoencoder(Network(ae_spec, seed=0), data, cfg)
    b, curve_b = pretrain_autoencoder(Network(ae_spec, seed=0), data, cfg)
    assert math.isfinite(curve_a[0].train_loss)
    assert curve_a[0].train_loss == curve_b[0].train_loss
    assert a.parameters_equal(b)


def test_autoencoder_refuses_non_training_units():
    labels = {f"s{i:02d}": i % 2 for i in range(8)}
    plan = make_kfold(labels, 2, 2)
    log = AccessLog()
    q = Quarantine(plan, log, "ae")
    val_ids = list(plan.units(0, "validation"))
    data = units(len(val_ids), ids=val_ids)
    data.token = q.token(0, "validation")
    cfg = TrainingConfig(epochs=1, batch_size=2, patience=1)
    ae = Network(build_autoencoder_from(SPEC), seed=0)
    before = ae.state_dict()
    with pytest.raises(LeakageError):
        pretrain_autoencoder(ae, data, cfg, quarantine=q)
    assert all(before[k].tobytes() == v.tobytes() for k, v in ae.state_dict().items())
    train_ids = list(plan.units(0, "train"))
    ok = units(len(train_ids), ids=train_ids)
    ok.token = q.token(0, "train")
    pretrain_autoencoder(ae, ok, cfg, quarantine=q)
    assert {e.phase for e in log.events} == {"ae_pretrain"}


def test_training_refuses_validation_token():
    labels = {f"s{i:02d}": i % 2 for i in range(8)}
    plan = make_kfold(labels, 2, 2)
    log = AccessLog()
    q = Quarantine(plan, log, "exp")
    val_ids = list(plan.units(0, "validation"))
    data = units(len(val_ids), ids=val_ids)
    data.token = q.token(0, "validation")
    with pytest.raises(LeakageError):
        train_classifier(Network(SPEC), data, data, TrainingConfig(epochs=1, batch_size=2, patience=1), quarantine=q)
    assert any(e.phase == "train" and e.role == "validation" for e in log.events)


# multi-CNN --------------------------------------------------------------------


def patch_sets(p):
    return [(units(6, 10 + i), units(4, 20 + i)) for i in range(p)]


def test_multi_cnn_single_patch_equals_plain_training():
    cfg = TrainingConfig(epochs=2, batch_size=3, patience=2, learning_rate=1e-3, seed=4)
    data = patch_sets(1)
    [multi] = train_multi_cnn(SPEC, data, cfg)
    plain = train_classifier(Network(SPEC, seed=4), data[0][0], data[0][1], cfg, metadata={"unit": 0})
    assert multi.curve == plain.curve
    assert multi.best.parameters_equal(plain.best)


def test_multi_cnn_serial_equals_threads():
    cfg = TrainingConfig(epochs=2, batch_size=3, patience=2, learning_rate=1e-3)
    data = patch_sets(3)
    serial = train_multi_cnn(SPEC, data, cfg, threads=1)
    threaded = train_multi_cnn(SPEC, data, cfg, threads=3)
    for a, b in zip(serial, threaded):
        assert a.curve == b.curve and a.best.parameters_equal(b.best)
    assert not serial[0].best.parameters_equal(serial[1].best)


def test_multi_cnn_alignment():
    data = patch_sets(2)
    data[1] = (units(6, 3, ids=[f"z{i}" for i in range(6)]), data[1][1])
    with pytest.raises(ConfigurationError):
        train_multi_cnn(SPEC, data, TrainingConfig(epochs=1, batch_size=3, patience=1))
    with pytest.raises(ConfigurationError):
        train_multi_cnn(SPEC, [], TrainingConfig(epochs=1, batch_size=3, patience=1))
