"""Deterministic desk benchmark: binary 16x16 patterns and two MLPs for them.

Each of the ten classes has a random binary prototype over pixels 1..255;
samples are prototypes with every pixel flipped with probability
``flip_prob``. Pixel 0 is always dark. Evaluation and training samples come
from separate random streams of the same seed.

``make_desk_model`` is a closed-form template matcher, 256-20-10 with
``logit_c = relu(a_c) - relu(-a_c) = a_c`` and
``a_c = alpha * sum_i (2 P_ci - 1) x_i``. Its first-layer weights are
``+-alpha`` next to one ``127 * alpha`` anchor on the dark pixel, so 8-bit
quantization is exact and a flipped sign bit turns a ``-alpha`` weight into
``+127 alpha``: one fault in the right place costs a large share of accuracy.
Above a bit error rate of about 1e-2 its value-bit faults mostly enlarge
weights along the template, so it serves as a fault-sensitivity benchmark only below that.

``make_trained_desk_model`` is a 256-16-10 MLP trained with Adam from a pinned
seed. Its weights are ordinary trained floats, so quantization loses real
precision, and it is the reference model for quantization and masking checks.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .constants import Activation
from .tensor import Dataset, Dense, Model, Tensor

DESK_SEED = 20240917
N_CLASSES = 10
SIDE = 16
ALPHA = 1.0 / 128.0

EVAL_STREAM = 1
TRAIN_STREAM = 2

TRAINED_HIDDEN = 16
TRAIN_PER_CLASS = 50
TRAIN_EPOCHS = 40
TRAIN_BATCH = 50
TRAIN_LR = 1e-2


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def desk_prototypes(seed: int = DESK_SEED) -> np.ndarray:
    protos = _rng(seed, 0).integers(0, 2, size=(N_CLASSES, SIDE * SIDE)).astype(np.float64)
    protos[:, 0] = 0.0
    return protos


def make_desk_dataset(
    n_per_class: int = 20,
    seed: int = DESK_SEED,
    flip_prob: float = 0.1,
    name: str = "desk",
    stream: int = EVAL_STREAM,
) -> Dataset:
    protos = desk_prototypes(seed)
    rng = _rng(seed, stream)
    labels = rng.permutation(np.repeat(np.arange(N_CLASSES), n_per_class))
    noise = rng.random((labels.size, SIDE * SIDE)) < flip_prob
    pixels = np.abs(protos[labels] - noise)
    pixels[:, 0] = 0.0
    return Dataset(pixels.reshape(-1, SIDE, SIDE), labels, name, N_CLASSES)


def make_desk_model(seed: int = DESK_SEED, alpha: float = ALPHA) -> Model:
    signs = 2.0 * desk_prototypes(seed) - 1.0
    signs[:, 0] = 0.0
    w1 = np.vstack([alpha * signs, -alpha * signs])
    w1[0, 0] = 127.0 * alpha
    w2 = np.hstack([np.eye(N_CLASSES), -np.eye(N_CLASSES)])
    hidden = 2 * N_CLASSES
    return Model([
        Dense(SIDE * SIDE, hidden, Tensor.from_array(w1), Tensor.from_array(np.zeros(hidden)), Activation.RELU),
        Dense(hidden, N_CLASSES, Tensor.from_array(w2), Tensor.from_array(np.zeros(N_CLASSES)), Activation.NONE),
    ])


def make_desk(seed: int = DESK_SEED, n_per_class: int = 20) -> tuple[Model, Dataset]:
    return make_desk_model(seed), make_desk_dataset(n_per_class, seed)


@lru_cache(maxsize=4)
def _trained_desk(seed: int) -> Model:
    from .training import build_mlp, fit, to_bundle_model

    train_set = make_desk_dataset(TRAIN_PER_CLASS, seed, name="desk-train", stream=TRAIN_STREAM)
    net = build_mlp(SIDE * SIDE, TRAINED_HIDDEN, N_CLASSES, seed)
    return to_bundle_model(fit(net, train_set, TRAIN_EPOCHS, seed, TRAIN_LR, TRAIN_BATCH))


def make_trained_desk_model(seed: int = DESK_SEED) -> Model:
    """The trained desk MLP; training runs once per seed and process."""
    model = _trained_desk(seed)
    return model.with_weights(model.weight_tensors())


def make_trained_desk(seed: int = DESK_SEED, n_per_class: int = 20) -> tuple[Model, Dataset]:
    return make_trained_desk_model(seed), make_desk_dataset(n_per_class, seed)
