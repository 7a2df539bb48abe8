import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from qnn_guard.constants import Activation
from qnn_guard.errors import EmptyDatasetError, ShapeMismatchError
from qnn_guard.synthetic import make_desk
from qnn_guard.tensor import Conv2D, Dataset, Dense, Model, Tensor, evaluate, forward, forward_batch


def dense(w, b, activation=Activation.NONE):
    w = np.asarray(w, dtype=np.float64)
    return Dense(w.shape[1], w.shape[0], Tensor.from_array(w), Tensor.from_array(b), activation)


def scalar_loop_forward(layers, x):
    """Independent reference: plain python loops over dense layers."""
    for w, b, relu in layers:
        out = []
        for j in range(len(w)):
            acc = 0.0
            for i in range(len(x)):
                acc += x[i] * w[j][i]
            acc += b[j]
            out.append(max(acc, 0.0) if relu else acc)
        x = out
    return x


def test_identity_dense():
    model = Model([dense(np.eye(3), np.zeros(3))])
    out = forward(model, Tensor.from_array([1.0, 2.0, 3.0]))
    assert out.shape == (3,)
    assert out.array().tolist() == [1.0, 2.0, 3.0]


def test_relu_dense():
    model = Model([dense([[1.0, 1.0]], [0.0], Activation.RELU)])
    assert forward(model, Tensor.from_array([2.0, -5.0])).array().tolist() == [0.0]


def test_two_layer_matches_scalar_reference_bit_for_bit():
    rng = np.random.default_rng(3)
    w1, b1 = rng.normal(size=(5, 7)), rng.normal(size=5)
    w2, b2 = rng.normal(size=(3, 5)), rng.normal(size=3)
    model = Model([dense(w1, b1, Activation.RELU), dense(w2, b2)])
    x = rng.normal(size=7)
    golden = scalar_loop_forward([(w1.tolist(), b1.tolist(), True), (w2.tolist(), b2.tolist(), False)], x.tolist())
    assert forward(model, Tensor.from_array(x)).array().tolist() == golden


def test_forward_is_repeatable():
    model, dataset = make_desk(n_per_class=3)
    first = forward_batch(model, dataset.inputs)
    second = forward_batch(model, dataset.inputs)
    assert np.array_equal(first, second)


def test_shape_mismatch():
    model = Model([dense(np.eye(3), np.zeros(3))])
    with pytest.raises(ShapeMismatchError):
        forward(model, Tensor.from_array([1.0, 2.0]))


def test_conv2d_sums_patch():
    conv = Conv2D(1, 1, 2, 1, Tensor.from_array(np.ones((1, 1, 2, 2))), Tensor.from_array([0.5]))
    model = Model([conv, dense(np.ones((1, 4)), [0.0])], input_shape=(1, 3, 3))
    x = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    # patches: 0+1+3+4, 1+2+4+5, 3+4+6+7, 4+5+7+8, each plus 0.5
    assert forward(model, Tensor.from_array(x)).array().tolist() == [8.0 + 12.0 + 20.0 + 24.0 + 2.0]


def test_conv2d_accepts_channelless_batches():
    conv = Conv2D(1, 1, 2, 1, Tensor.from_array(np.ones((1, 1, 2, 2))), Tensor.from_array([0.5]))
    model = Model([conv, dense(np.ones((1, 4)), [0.0])], input_shape=(1, 3, 3))
    x = np.arange(18, dtype=np.float64).reshape(2, 3, 3)
    assert np.array_equal(forward_batch(model, x), forward_batch(model, x.reshape(2, 1, 3, 3)))
    with pytest.raises(ShapeMismatchError):
        forward_batch(model, np.zeros((2, 4, 4)))


def test_conv2d_needs_input_shape():
    conv = Conv2D(1, 1, 2, 1, Tensor.from_array(np.ones((1, 1, 2, 2))), Tensor.from_array([0.0]))
    with pytest.raises(ShapeMismatchError):
        Model([conv])


def test_evaluate_constant_class_zero():
    model = Model([dense(np.zeros((2, 2)), [1.0, 0.0])])
    all_zero = Dataset(np.ones((4, 2)), [0, 0, 0, 0])
    half = Dataset(np.ones((4, 2)), [0, 1, 0, 1])
    assert evaluate(model, all_zero) == 1.0
    assert evaluate(model, half) == 0.5


def test_evaluate_empty_dataset():
    model = Model([dense(np.eye(2), np.zeros(2))])
    with pytest.raises(EmptyDatasetError):
        evaluate(model, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), num_classes=2))


def test_non_finite_logits_count_as_wrong():
    model = Model([dense(np.eye(2), np.zeros(2))])
    dataset = Dataset(np.array([[1.0, 0.0]]), [0], num_classes=2)
    assert evaluate(model, dataset) == 1.0
    # argmax of [inf, 0] is still class 0
    broken = model.with_weights([np.array([[np.inf, 0.0], [0.0, 1.0]])])
    assert evaluate(broken, dataset) == 0.0


def test_desk_model_is_accurate():
    model, dataset = make_desk()
    assert evaluate(model, dataset) >= 0.95


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_evaluate_ignores_sample_order(seed):
    model, dataset = make_desk(n_per_class=7)
    shuffled = dataset.permuted(seed)
    assert sorted(shuffled.labels.tolist()) == sorted(dataset.labels.tolist())
    assert evaluate(model, shuffled) == evaluate(model, dataset)
