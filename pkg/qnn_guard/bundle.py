"""Loading and saving of model descriptions, weight blobs and datasets.

Formats:

* model: JSON ``{"input_shape": [...]?, "layers": [{"type": "dense", "in": N, "out": M,
  "activation": "relu"}, {"type": "conv2d", "in_ch": C, "out_ch": O, "k": K, "stride": S,
  "activation": "none"}, ...]}``
* weights: little-endian float64, per layer weight then bias, row-major
* dataset: IDX images (magic 0x00000803) + IDX labels (0x00000801), optionally gzipped,
  or a CSV with one sample per row and the label in the last column
"""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .artifacts import atomic_write_bytes, read_json, write_json
from .constants import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Activation
from .errors import BadMagicError, FormatError, ShapeMismatchError, TruncatedFileError
from .tensor import Conv2D, Dataset, Dense, Model, Tensor

IDX_UBYTE = 0x08


# ─────────────────────────────────────────────────────────────────────────────
# model + weights
# ─────────────────────────────────────────────────────────────────────────────

def _layer_shapes(desc: dict[str, Any], index: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if not isinstance(desc, dict):
        raise FormatError(f"layers[{index}]: expected an object, got {desc!r}")
    kind = desc.get("type")
    try:
        if kind == "dense":
            return (int(desc["out"]), int(desc["in"])), (int(desc["out"]),)
        if kind == "conv2d":
            k = int(desc["k"])
            return (int(desc["out_ch"]), int(desc["in_ch"]), k, k), (int(desc["out_ch"]),)
    except KeyError as exc:
        raise FormatError(f"layers[{index}]: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"layers[{index}]: non-integer layer field ({exc})") from None
    raise FormatError(f"layers[{index}]: unknown layer type {kind!r}")


def _build_layer(desc: dict[str, Any], weight: Tensor, bias: Tensor):
    activation = Activation(desc.get("activation", "none"))
    if desc["type"] == "dense":
        return Dense(int(desc["in"]), int(desc["out"]), weight, bias, activation)
    return Conv2D(
        int(desc["in_ch"]), int(desc["out_ch"]), int(desc["k"]), int(desc.get("stride", 1)),
        weight, bias, activation,
    )


def model_from_description(description: dict[str, Any], values: np.ndarray) -> Model:
    """Build a :class:`Model` from a parsed JSON description and a flat float64 array."""
    layers_desc = description.get("layers")
    if not isinstance(layers_desc, list) or not layers_desc:
        raise FormatError("model description needs a non-empty 'layers' list")
    shapes = [_layer_shapes(desc, i) for i, desc in enumerate(layers_desc)]
    needed = sum(int(np.prod(w)) + int(np.prod(b)) for w, b in shapes)
    if values.size < needed:
        raise TruncatedFileError(f"weights blob holds {values.size} values, model declares {needed}")
    if values.size > needed:
        raise ShapeMismatchError(f"weights blob holds {values.size} values, model declares only {needed}")

    layers = []
    offset = 0
    for index, (desc, (w_shape, b_shape)) in enumerate(zip(layers_desc, shapes)):
        n_w, n_b = int(np.prod(w_shape)), int(np.prod(b_shape))
        try:
            weight = Tensor(w_shape, values[offset : offset + n_w])
            bias = Tensor(b_shape, values[offset + n_w : offset + n_w + n_b])
            layers.append(_build_layer(desc, weight, bias))
        except ValueError as exc:
            raise FormatError(f"layers[{index}]: {exc}") from None
        offset += n_w + n_b
    input_shape = description.get("input_shape")
    if not input_shape:
        return Model(layers)
    try:
        input_shape = tuple(int(d) for d in input_shape)
    except (TypeError, ValueError):
        raise FormatError(f"input_shape must be a list of integers, got {input_shape!r}") from None
    return Model(layers, input_shape)


def model_description(model: Model) -> dict[str, Any]:
    layers = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            layers.append({"type": "dense", "in": layer.in_features, "out": layer.out_features,
                           "activation": layer.activation.value})
        else:
            layers.append({"type": "conv2d", "in_ch": layer.in_ch, "out_ch": layer.out_ch,
                           "k": layer.k, "stride": layer.stride, "activation": layer.activation.value})
    return {"input_shape": list(model.input_shape), "layers": layers}


def model_values(model: Model) -> np.ndarray:
    parts = []
    for layer in model.layers:
        parts += [layer.weight.data, layer.bias.data]
    return np.concatenate(parts)


def read_weights(path: str | os.PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is not a whole number of float64 values")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def load_model(model_path: str | os.PathLike, weights_path: str | os.PathLike) -> Model:
    try:
        description = read_json(model_path)
    except ValueError as exc:
        raise FormatError(f"{model_path}: not a valid model description ({exc})") from None
    if not isinstance(description, dict):
        raise FormatError(f"{model_path}: model description must be a JSON object")
    return model_from_description(description, read_weights(weights_path))


def save_model_json(model: Model, path: str | os.PathLike) -> Path:
    return write_json(path, model_description(model))


def save_weights(model: Model, path: str | os.PathLike) -> Path:
    return atomic_write_bytes(path, model_values(model).astype("<f8").tobytes())


# ─────────────────────────────────────────────────────────────────────────────
# datasets
# ─────────────────────────────────────────────────────────────────────────────

def _read_raw(path: str | os.PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def read_idx(path: str | os.PathLike, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX file and return its array with the declared dims."""
    raw = _read_raw(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: missing IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: IDX header declares {ndim} dims but file ends early")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise TruncatedFileError(f"{path}: declares {count} values, holds {len(raw) - header}")
    if len(raw) > header + count:
        raise FormatError(f"{path}: {len(raw) - header - count} trailing bytes after IDX payload")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def save_idx(path: str | os.PathLike, array: np.ndarray, magic: int) -> Path:
    array = np.asarray(array, dtype=np.uint8)
    if (magic >> 8) & 0xFF != IDX_UBYTE or magic & 0xFF != array.ndim:
        raise FormatError(f"magic 0x{magic:08x} does not describe a {array.ndim}-d ubyte array")
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    data = header + array.tobytes()
    if Path(path).suffix == ".gz":
        data = gzip.compress(data, mtime=0)
    return atomic_write_bytes(path, data)


def default_labels_path(images_path: str | os.PathLike) -> Path:
    """MNIST naming rule: ``t10k-images-idx3-ubyte`` -> ``t10k-labels-idx1-ubyte``."""
    images_path = Path(images_path)
    name = images_path.name.replace("images", "labels").replace("idx3", "idx1")
    if name == images_path.name:
        raise FormatError(f"cannot derive a labels file from {images_path}; pass it explicitly")
    return images_path.with_name(name)


def read_csv_dataset(path: str | os.PathLike, num_classes: int | None = None) -> Dataset:
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if table.shape[1] < 2:
        raise FormatError(f"{path}: need at least one feature column and a label column")
    labels = table[:, -1]
    if np.any(labels != np.round(labels)):
        raise FormatError(f"{path}: labels must be integers")
    return Dataset(table[:, :-1], labels.astype(np.int64), Path(path).stem, num_classes)


def load_dataset(
    dataset_path: str | os.PathLike,
    labels_path: str | os.PathLike | None = None,
    num_classes: int | None = None,
) -> Dataset:
    dataset_path = Path(dataset_path)
    if dataset_path.suffix == ".csv":
        return read_csv_dataset(dataset_path, num_classes)
    images = read_idx(dataset_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path or default_labels_path(dataset_path), IDX_LABELS_MAGIC)
    if labels.shape[0] != images.shape[0]:
        raise ShapeMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    name = dataset_path.name.split(".")[0]
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), name, num_classes)


def save_dataset_idx(dataset: Dataset, images_path, labels_path) -> tuple[Path, Path]:
    """Write ``dataset`` as IDX; inputs must be multiples of 1/255 in [0, 1]."""
    pixels = np.round(dataset.inputs * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise FormatError("IDX images need inputs in [0, 1]")
    sample = dataset.sample_shape
    if len(sample) == 3 and sample[0] == 1:
        sample = sample[1:]
    elif len(sample) != 2:
        sample = (1, int(np.prod(sample)))
    shaped = pixels.reshape((len(dataset),) + sample)
    return (
        save_idx(images_path, shaped, IDX_IMAGES_MAGIC),
        save_idx(labels_path, dataset.labels, IDX_LABELS_MAGIC),
    )


# ─────────────────────────────────────────────────────────────────────────────
# bundle
# ─────────────────────────────────────────────────────────────────────────────

def load_bundle(model_path, weights_path, dataset_path, labels_path=None) -> tuple[Model, Dataset]:
    model = load_model(model_path, weights_path)
    dataset = load_dataset(dataset_path, labels_path, model.n_classes)
    sample = dataset.sample_shape
    if sample != model.input_shape and int(np.prod(sample)) != int(np.prod(model.input_shape)):
        raise ShapeMismatchError(f"dataset samples {sample} do not fit model input {model.input_shape}")
    return model, dataset


def save_bundle(model: Model, dataset: Dataset, directory: str | os.PathLike, stem: str = "desk") -> dict[str, Path]:
    directory = Path(directory)
    images, labels = save_dataset_idx(
        dataset,
        directory / f"{stem}-images-idx3-ubyte",
        directory / f"{stem}-labels-idx1-ubyte",
    )
    return {
        "model": save_model_json(model, directory / f"{stem}-model.json"),
        "weights": save_weights(model, directory / f"{stem}-weights.bin"),
        "dataset": images,
        "labels": labels,
    }
