"""Dense/convolutional inference engine used as the evaluation substrate.

Every reduction runs in a fixed order (ascending input index, bias added
last) with element-wise numpy operations only, so results do not depend on
the BLAS build or on how many threads it uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Sequence, Union

import numpy as np

from .constants import Activation
from .errors import EmptyDatasetError, ShapeMismatchError

EVAL_BATCH = 1024


@dataclass(eq=False)
class Tensor:
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if not self.shape or any(d <= 0 for d in self.shape):
            raise ShapeMismatchError(f"tensor dimensions must be positive, got {self.shape}")
        if int(np.prod(self.shape)) != self.data.size:
            raise ShapeMismatchError(
                f"shape {self.shape} needs {int(np.prod(self.shape))} values, got {self.data.size}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("tensor entries must be finite")

    @classmethod
    def from_array(cls, array) -> "Tensor":
        array = np.asarray(array, dtype=np.float64)
        return cls(array.shape, array.reshape(-1))

    @property
    def size(self) -> int:
        return self.data.size

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


def _activate(acc: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(acc, 0.0)
    return acc


@dataclass(eq=False)
class Dense:
    in_features: int
    out_features: int
    weight: Tensor
    bias: Tensor
    activation: Activation = Activation.NONE
    kind: ClassVar[str] = "dense"

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if self.weight.shape != (self.out_features, self.in_features):
            raise ShapeMismatchError(
                f"dense weight shape {self.weight.shape} != {(self.out_features, self.in_features)}"
            )
        if self.bias.shape != (self.out_features,):
            raise ShapeMismatchError(f"dense bias shape {self.bias.shape} != {(self.out_features,)}")

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if int(np.prod(input_shape)) != self.in_features:
            raise ShapeMismatchError(
                f"dense layer expects {self.in_features} inputs, got shape {input_shape}"
            )
        return (self.out_features,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.in_features:
            raise ShapeMismatchError(f"dense layer expects {self.in_features} inputs, got {x.shape[1]}")
        w = self.weight.array()
        acc = np.zeros((x.shape[0], self.out_features))
        for i in range(self.in_features):
            acc += x[:, i : i + 1] * w[:, i]
        acc += self.bias.data
        return _activate(acc, self.activation)

    def with_weight(self, weight: np.ndarray) -> "Dense":
        return _replace_weight(self, weight)


@dataclass(eq=False)
class Conv2D:
    in_ch: int
    out_ch: int
    k: int
    stride: int
    weight: Tensor
    bias: Tensor
    activation: Activation = Activation.NONE
    kind: ClassVar[str] = "conv2d"

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if self.stride < 1 or self.k < 1:
            raise ShapeMismatchError(f"conv2d needs k >= 1 and stride >= 1, got k={self.k} stride={self.stride}")
        expected = (self.out_ch, self.in_ch, self.k, self.k)
        if self.weight.shape != expected:
            raise ShapeMismatchError(f"conv2d weight shape {self.weight.shape} != {expected}")
        if self.bias.shape != (self.out_ch,):
            raise ShapeMismatchError(f"conv2d bias shape {self.bias.shape} != {(self.out_ch,)}")

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(input_shape) != 3 or input_shape[0] != self.in_ch:
            raise ShapeMismatchError(
                f"conv2d expects input ({self.in_ch}, H, W), got {input_shape}"
            )
        _, h, w = input_shape
        if h < self.k or w < self.k:
            raise ShapeMismatchError(f"conv2d kernel {self.k} larger than input {h}x{w}")
        return (self.out_ch, (h - self.k) // self.stride + 1, (w - self.k) // self.stride + 1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        _, oh, ow = self.output_shape(tuple(x.shape[1:]))
        w = self.weight.array()
        s = self.stride
        acc = np.zeros((x.shape[0], self.out_ch, oh, ow))
        for c in range(self.in_ch):
            for di in range(self.k):
                for dj in range(self.k):
                    patch = x[:, c, di : di + s * (oh - 1) + 1 : s, dj : dj + s * (ow - 1) + 1 : s]
                    acc += patch[:, None, :, :] * w[:, c, di, dj][None, :, None, None]
        acc += self.bias.data[None, :, None, None]
        return _activate(acc, self.activation)

    def with_weight(self, weight: np.ndarray) -> "Conv2D":
        return _replace_weight(self, weight)


Layer = Union[Dense, Conv2D]


def _replace_weight(layer, weight: np.ndarray):
    """Copy of ``layer`` holding ``weight``; values may be non-finite after fault injection."""
    clone = object.__new__(type(layer))
    clone.__dict__.update(layer.__dict__)
    tensor = object.__new__(Tensor)
    tensor.shape = layer.weight.shape
    tensor.data = np.ascontiguousarray(weight, dtype=np.float64).reshape(-1)
    if tensor.data.size != layer.weight.size:
        raise ShapeMismatchError(f"replacement weight has {tensor.data.size} values, expected {layer.weight.size}")
    clone.weight = tensor
    return clone


@dataclass(eq=False)
class Model:
    layers: list
    input_shape: tuple[int, ...] | None = None
    output_shape: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if not self.layers:
            raise ShapeMismatchError("model has no layers")
        if self.input_shape is None:
            first = self.layers[0]
            if not isinstance(first, Dense):
                raise ShapeMismatchError("input_shape is required when the first layer is conv2d")
            self.input_shape = (first.in_features,)
        self.input_shape = tuple(int(d) for d in self.input_shape)
        shape = self.input_shape
        for index, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeMismatchError as exc:
                raise ShapeMismatchError(f"layer {index}: {exc}") from None
        self.output_shape = shape

    @property
    def n_classes(self) -> int:
        return int(np.prod(self.output_shape))

    @property
    def n_weight_params(self) -> int:
        return sum(layer.weight.size for layer in self.layers)

    def weight_tensors(self) -> list[np.ndarray]:
        return [layer.weight.array() for layer in self.layers]

    def with_weights(self, weights: Sequence[np.ndarray]) -> "Model":
        if len(weights) != len(self.layers):
            raise ShapeMismatchError(f"expected {len(self.layers)} weight tensors, got {len(weights)}")
        clone = object.__new__(Model)
        clone.layers = [layer.with_weight(w) for layer, w in zip(self.layers, weights)]
        clone.input_shape = self.input_shape
        clone.output_shape = self.output_shape
        return clone


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    num_classes: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeMismatchError(
                f"{self.name}: {self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ShapeMismatchError(f"{self.name}: negative label")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        elif self.labels.size and self.labels.max() >= self.num_classes:
            raise ShapeMismatchError(
                f"{self.name}: label {int(self.labels.max())} >= num_classes {self.num_classes}"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def sample(self, index: int) -> Tensor:
        return Tensor.from_array(self.inputs[index])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.name, self.num_classes)

    def permuted(self, seed: int) -> "Dataset":
        order = np.random.default_rng(seed).permutation(len(self))
        return self.subset(order)


def _check_input(model: Model, shape: tuple[int, ...]) -> None:
    # (N, H, W) IDX images feed a (1, H, W) conv input; only the value count must agree
    if shape == model.input_shape or int(np.prod(shape)) == int(np.prod(model.input_shape)):
        return
    raise ShapeMismatchError(f"input shape {shape} does not match model input {model.input_shape}")


def forward_batch(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Logits for a stacked batch ``(N, *input_shape)`` -> ``(N, n_classes)``."""
    x = np.asarray(inputs, dtype=np.float64)
    _check_input(model, tuple(x.shape[1:]))
    if isinstance(model.layers[0], Conv2D):
        x = x.reshape((x.shape[0],) + model.input_shape)
    for layer in model.layers:
        x = layer.apply(x)
    return x.reshape(x.shape[0], -1)


def forward(model: Model, input: Tensor) -> Tensor:
    return Tensor.from_array(forward_batch(model, input.array()[None, ...])[0])


def predict(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Argmax class per sample (lowest index wins ties); ``-1`` when logits are not finite."""
    out = np.empty(inputs.shape[0], dtype=np.int64)
    for start in range(0, inputs.shape[0], EVAL_BATCH):
        logits = forward_batch(model, inputs[start : start + EVAL_BATCH])
        pred = np.argmax(logits, axis=1)
        pred[~np.all(np.isfinite(logits), axis=1)] = -1
        out[start : start + EVAL_BATCH] = pred
    return out


def evaluate(model: Model, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise EmptyDatasetError(f"{dataset.name}: cannot evaluate on an empty dataset")
    correct = np.count_nonzero(predict(model, dataset.inputs) == dataset.labels)
    return correct / len(dataset)
