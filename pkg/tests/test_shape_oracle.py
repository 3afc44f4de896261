import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volclf.errors import ShapeError
from volclf.model_zoo import Network, build_autoencoder_from, build_conv4_fc3, build_conv5_fc3, build_resnet18_slice
from volclf.model_zoo.spec import ModelSpec
from volclf.shape_oracle import diff_against_golden, golden_architectures, infer_shapes, load_golden


@pytest.mark.parametrize("name", ["etable1_minimal", "etable1_extensive", "etable2", "etable3"])
def test_golden_tables_have_no_diffs(name):
    spec = golden_architectures()[name]
    golden = load_golden(name)
    assert golden, "golden table is empty"
    assert diff_against_golden(infer_shapes(spec), golden) == []


def test_golden_spot_values():
    rows = dict(load_golden("etable1_minimal"))
    assert rows["Conv1+BN+ReLU"] == "8x169x208x179"
    assert rows["MaxPool1"] == "8x85x104x90"
    assert rows["MaxPool5"] == "128x6x7x6"
    assert dict(load_golden("etable1_extensive"))["MaxPool5"] == "128x4x5x4"
    assert dict(load_golden("etable2"))["MaxPool4"] == "50x2x2x2"
    assert dict(load_golden("etable3"))["AveragePool1"] == "512x1x1"


def test_diff_reports_mismatch():
    trace = infer_shapes(build_conv4_fc3((50, 50, 50)))
    diffs = diff_against_golden(trace, [("MaxPool4", "50x3x3x3"), ("Nope", "1")])
    assert len(diffs) == 2 and "MaxPool4" in diffs[0]


def test_collapse_names_layer():
    spec = build_conv4_fc3((50, 50, 50))
    with pytest.raises(ShapeError) as info:
        infer_shapes(spec, (18, 18, 18))
    assert info.value.layer is not None and info.value.layer.startswith(("conv", "maxpool"))


def materialized_shapes(spec: ModelSpec, seed: int):
    net = Network(spec, seed=0, dtype=np.float64)
    x = np.random.default_rng(seed).uniform(0, 1, (1,) + spec.input_shape)
    shapes = {}
    layers = []
    for layer in spec.layers:
        layers.append(layer)
        shapes[layer.name] = net.forward(x, layers=layers).shape[1:]
    return shapes


@settings(max_examples=15)
@given(st.integers(6, 14), st.integers(6, 14), st.integers(6, 14), st.integers(0, 1000))
def test_symbolic_matches_materialized_conv4(a, b, c, seed):
    spec = build_conv4_fc3((a, b, c), conv_padding=1)
    trace = dict(infer_shapes(spec).entries)
    for name, shape in materialized_shapes(spec, seed).items():
        assert trace[name] == shape


@settings(max_examples=5)
@given(st.integers(6, 12))
def test_symbolic_matches_materialized_autoencoder(n):
    spec = build_autoencoder_from(build_conv4_fc3((n, n + 1, n + 2), conv_padding=1))
    trace = dict(infer_shapes(spec).entries)
    shapes = materialized_shapes(spec, n)
    for name, shape in shapes.items():
        assert trace[name] == shape
    assert shapes[spec.layers[-1].name] == spec.input_shape


@settings(max_examples=4)
@given(st.integers(32, 40))
def test_symbolic_matches_materialized_other_archs(n):
    for spec in (build_resnet18_slice(2, n, 2), build_conv5_fc3((32, n, 32), fc1_width=8)):
        trace = dict(infer_shapes(spec).entries)
        for name, shape in materialized_shapes(spec, n).items():
            assert trace[name] == shape
