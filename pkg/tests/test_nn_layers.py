import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtb.nn.gradcheck import NumericalError, grad_check
from dtb.nn.graph import ModelGraph
from dtb.nn.layers import (Activation, BatchNorm, Concat, Conv2d, Dense, Dropout, MaxPool, ShapeError, Upscale,
                           bce, bce_with_logits, sigmoid)

rng = np.random.default_rng(7)


def _init(layer, dtype=np.float64):
    layer.init(np.random.default_rng(0), dtype)
    return layer


def test_dense_grad():
    assert grad_check(_init(Dense(16, 5, bias=True)), rng.standard_normal((8, 16))) < 1e-6


def test_conv_sigmoid_bce_grad():
    g = ModelGraph("c", (1, 5, 9))
    g.add(Conv2d(1, 2, 3, bias=True, activation="sigmoid"))
    g.init(0, np.float64)
    assert grad_check(g, rng.standard_normal((2, 1, 5, 9)), loss="bce") < 1e-6


def test_batchnorm_grad_batch16():
    assert grad_check(_init(BatchNorm(3)), rng.standard_normal((16, 3, 2, 4))) < 1e-5


@pytest.mark.parametrize("layer,shape", [
    (Conv2d(2, 3, 3, "valid", bias=True), (2, 2, 5, 7)),
    (Conv2d(2, 3, 3, stride=(1, 2)), (2, 2, 4, 8)),
    (MaxPool((1, 2)), (2, 2, 3, 7)),
    (Upscale((2, 2)), (1, 2, 3, 3)),
    (Activation("elu"), (3, 7)),
    (Activation("sigmoid"), (3, 7)),
])
def test_layer_grads(layer, shape):
    assert grad_check(_init(layer), rng.standard_normal(shape)) < 1e-6


def test_concat_grad():
    xs = [rng.standard_normal((2, 1, 3, 4)), rng.standard_normal((2, 2, 3, 4))]
    assert grad_check(Concat(), xs) < 1e-6


def test_gradcheck_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        grad_check(_init(Dense(2, 2)), np.ones((1, 2)), epsilon=1e-2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradcheck_reports_non_finite():
    d = _init(Dense(2, 2))
    d.params["W"][:] = np.inf
    with pytest.raises(NumericalError):
        grad_check(d, np.ones((1, 2)))


def test_same_and_valid_shapes():
    assert Conv2d(1, 32, 3).output_shape((1, 5, 229)) == (32, 5, 229)
    assert Conv2d(32, 32, 3, "valid").output_shape((32, 5, 229)) == (32, 3, 227)
    assert Conv2d(32, 32, 3, stride=(1, 2)).output_shape((32, 256, 256)) == (32, 256, 128)


@pytest.mark.parametrize("w,out", [(227, 113), (111, 55), (53, 26)])
def test_maxpool_floor(w, out):
    assert MaxPool((1, 2)).output_shape((4, 3, w)) == (4, 3, out)
    y = MaxPool((1, 2)).forward(rng.standard_normal((1, 4, 3, w)))
    assert y.shape == (1, 4, 3, out)


def test_batchnorm_identity_in_inference():
    bn = _init(BatchNorm(4))
    x = rng.standard_normal((3, 4, 2, 2))
    np.testing.assert_allclose(bn.forward(x, train=False), x / np.sqrt(1 + bn.eps))


def test_batchnorm_running_stats_move_in_training():
    bn = _init(BatchNorm(2))
    bn.forward(rng.normal(5.0, 1.0, (32, 2)), train=True)
    assert (bn.buffers["running_mean"] > 0.1).all()


def test_dropout_identity_in_inference():
    x = rng.standard_normal((4, 10))
    np.testing.assert_array_equal(Dropout(0.5).forward(x, train=False), x)


def test_dropout_preserves_expectation():
    x = np.full((200, 50), 2.0)
    d = Dropout(0.25)
    means = []
    for seed in range(50):
        d.rng = np.random.default_rng(seed)
        means.append(d.forward(x, train=True).mean())
    assert abs(np.mean(means) - 2.0) < 0.02 * 2.0


def test_concat_mismatch():
    with pytest.raises(ShapeError):
        Concat().output_shape([(2, 3, 4), (2, 3, 5)])


@settings(max_examples=50)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=20))
def test_bce_logits_matches_probability_form(zs):
    z = np.array(zs)
    y = (np.arange(len(z)) % 2).astype(float)
    l1, dz = bce_with_logits(z, y)
    p = np.clip(sigmoid(z), 1e-12, 1 - 1e-12)
    ref = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert l1 == pytest.approx(ref, rel=1e-6, abs=1e-9)
    np.testing.assert_allclose(dz, (sigmoid(z) - y) / len(z), atol=1e-12)


def test_bce_prob_form():
    loss, _ = bce(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(np.log(2))


def test_sigmoid_stable():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(s)) and s[1] == 0.5


def test_graph_shape_errors():
    g = ModelGraph("m", (1, 5, 9))
    g.add(Conv2d(1, 2, 3))
    with pytest.raises(ShapeError, match="layer 01_dense"):
        g.add(Dense(7, 3))
    g.init(0)
    with pytest.raises(ShapeError, match="expected input"):
        g.forward(np.zeros((1, 1, 5, 8), np.float32))
