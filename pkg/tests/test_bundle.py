import gzip
import os
import struct
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from qnn_guard.bundle import (
    default_labels_path,
    load_bundle,
    load_dataset,
    read_idx,
    save_bundle,
    save_model_json,
)
from qnn_guard.constants import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Activation, FaultMode, TargetMask
from qnn_guard.errors import BadMagicError, FormatError, ShapeMismatchError, TruncatedFileError
from qnn_guard.faultsim import Campaign, FaultModel, run_campaign
from qnn_guard.quantizer import quantize_model, quantized_accuracy
from qnn_guard.synthetic import make_desk
from qnn_guard.tensor import Conv2D, Dataset, Dense, Model, Tensor, evaluate, forward_batch
from qnn_guard.wordpack import WordLayout


def write_idx(path, magic, dims, payload):
    path.write_bytes(struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload))
    return path


def test_idx_two_images_of_two_by_two(tmp_path):
    path = write_idx(tmp_path / "x-images-idx3-ubyte", IDX_IMAGES_MAGIC, (2, 2, 2), range(8))
    images = read_idx(path, IDX_IMAGES_MAGIC)
    assert images.shape == (2, 2, 2)
    assert images[1].tolist() == [[4, 5], [6, 7]]


def test_idx_gzip_is_transparent(tmp_path):
    raw = struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", 3) + bytes([1, 2, 3])
    path = tmp_path / "y-labels-idx1-ubyte.gz"
    path.write_bytes(gzip.compress(raw))
    assert read_idx(path, IDX_LABELS_MAGIC).tolist() == [1, 2, 3]


def test_idx_bad_magic(tmp_path):
    path = write_idx(tmp_path / "bad", 0x00000802, (2, 2), range(4))
    with pytest.raises(BadMagicError):
        read_idx(path, IDX_IMAGES_MAGIC)


def test_idx_truncated_and_trailing(tmp_path):
    short = write_idx(tmp_path / "short", IDX_IMAGES_MAGIC, (2, 2, 2), range(7))
    with pytest.raises(TruncatedFileError):
        read_idx(short, IDX_IMAGES_MAGIC)
    long = write_idx(tmp_path / "long", IDX_IMAGES_MAGIC, (2, 2, 2), range(9))
    with pytest.raises(FormatError):
        read_idx(long, IDX_IMAGES_MAGIC)


def test_default_labels_path():
    assert default_labels_path("data/t10k-images-idx3-ubyte").name == "t10k-labels-idx1-ubyte"
    with pytest.raises(FormatError):
        default_labels_path("data/whatever.bin")


def test_bundle_roundtrip(tmp_path):
    model, dataset = make_desk(n_per_class=4)
    paths = save_bundle(model, dataset, tmp_path)
    loaded_model, loaded_data = load_bundle(paths["model"], paths["weights"], paths["dataset"])
    assert loaded_data.labels.tolist() == dataset.labels.tolist()
    assert np.array_equal(loaded_data.inputs, dataset.inputs)
    assert np.array_equal(forward_batch(loaded_model, loaded_data.inputs), forward_batch(model, dataset.inputs))
    assert evaluate(loaded_model, loaded_data) == evaluate(model, dataset)


def test_short_weights_blob_is_truncation(tmp_path):
    model, dataset = make_desk(n_per_class=2)
    paths = save_bundle(model, dataset, tmp_path)
    blob = paths["weights"].read_bytes()
    paths["weights"].write_bytes(blob[:-8])
    with pytest.raises(TruncatedFileError):
        load_bundle(paths["model"], paths["weights"], paths["dataset"])


def test_long_weights_blob_is_shape_mismatch(tmp_path):
    model, dataset = make_desk(n_per_class=2)
    paths = save_bundle(model, dataset, tmp_path)
    paths["weights"].write_bytes(paths["weights"].read_bytes() + bytes(8))
    with pytest.raises(ShapeMismatchError):
        load_bundle(paths["model"], paths["weights"], paths["dataset"])


def test_csv_dataset(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("0.5,1.0,1\n0.0,0.25,0\n")
    dataset = load_dataset(path)
    assert len(dataset) == 2
    assert dataset.sample_shape == (2,)
    assert dataset.labels.tolist() == [1, 0]


def test_model_json_is_stable(tmp_path):
    model, _ = make_desk(n_per_class=1)
    first = save_model_json(model, tmp_path / "a.json").read_bytes()
    second = save_model_json(model, tmp_path / "b.json").read_bytes()
    assert first == second


def conv_model_and_images():
    rng = np.random.default_rng(11)
    conv = Conv2D(1, 2, 3, 2, Tensor.from_array(rng.normal(size=(2, 1, 3, 3))),
                  Tensor.from_array([0.1, -0.1]), Activation.RELU)
    head = Dense(18, 3, Tensor.from_array(rng.normal(size=(3, 18))), Tensor.from_array(np.zeros(3)))
    model = Model([conv, head], input_shape=(1, 8, 8))
    pixels = rng.integers(0, 256, size=(12, 1, 8, 8)) / 255.0
    return model, Dataset(pixels, np.arange(12) % 3, "conv", 3)


def test_conv_bundle_over_idx_images_quantizes_and_faults(tmp_path):
    model, dataset = conv_model_and_images()
    paths = save_bundle(model, dataset, tmp_path, stem="conv")
    loaded_model, loaded_data = load_bundle(paths["model"], paths["weights"], paths["dataset"])
    assert loaded_data.sample_shape == (8, 8)
    assert loaded_model.input_shape == (1, 8, 8)
    assert np.array_equal(forward_batch(loaded_model, loaded_data.inputs), forward_batch(model, dataset.inputs))
    assert evaluate(loaded_model, loaded_data) == evaluate(model, dataset)

    qmodel = quantize_model(loaded_model, 8)
    fm = FaultModel(FaultMode.BERNOULLI, 0.01, 0, TargetMask.WHOLE_WORD, 4)
    result = run_campaign(qmodel, WordLayout(16, 8, 1, 2), Campaign(fm, 3), loaded_data)
    assert len(result.accuracies) == 3
    assert result.clean_accuracy == quantized_accuracy(qmodel, loaded_data)
    assert all(0.0 <= a <= 1.0 for a in result.accuracies)


def test_bad_weights_and_descriptions_are_format_errors(tmp_path):
    model, dataset = make_desk(n_per_class=2)
    paths = save_bundle(model, dataset, tmp_path)
    values = np.fromfile(paths["weights"], dtype="<f8")
    values[5] = np.inf
    values.tofile(paths["weights"])
    with pytest.raises(FormatError, match="finite"):
        load_bundle(paths["model"], paths["weights"], paths["dataset"])

    paths = save_bundle(model, dataset, tmp_path / "b")
    paths["model"].write_text('{"layers": [{"type": "dense", "in": "x", "out": 3}]}')
    with pytest.raises(FormatError, match="non-integer"):
        load_bundle(paths["model"], paths["weights"], paths["dataset"])
    paths["model"].write_text("{broken")
    with pytest.raises(FormatError):
        load_bundle(paths["model"], paths["weights"], paths["dataset"])
    paths["model"].write_text('{"layers": ["dense"]}')
    with pytest.raises(FormatError, match="expected an object"):
        load_bundle(paths["model"], paths["weights"], paths["dataset"])
