"""Post-training symmetric per-tensor weight quantization.

Only weights are quantized; biases and activations stay float64. The integer
range is symmetric, ``[-(2^(b-1) - 1), 2^(b-1) - 1]``, so negation stays in range.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import atomic_write_bytes, dumps_json
from .constants import MAX_BITWIDTH, MIN_BITWIDTH
from .errors import FormatError, QuantSpecError, TruncatedFileError
from .tensor import Dataset, Model, evaluate


@dataclass(frozen=True)
class QuantSpec:
    bitwidth: int = 8

    def __post_init__(self):
        if not MIN_BITWIDTH <= int(self.bitwidth) <= MAX_BITWIDTH:
            raise QuantSpecError(
                f"bitwidth must be in [{MIN_BITWIDTH}, {MAX_BITWIDTH}], got {self.bitwidth}"
            )

    @property
    def qmax(self) -> int:
        return (1 << (self.bitwidth - 1)) - 1


@dataclass(eq=False)
class QuantizedModel:
    skeleton: Model
    q: list[np.ndarray]
    scales: list[float]
    spec: QuantSpec

    @property
    def counts(self) -> list[int]:
        return [int(t.size) for t in self.q]

    @property
    def n_params(self) -> int:
        return sum(self.counts)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def tensor_scale(w: np.ndarray, spec: QuantSpec) -> float:
    peak = float(np.max(np.abs(w))) if np.size(w) else 0.0
    return peak / spec.qmax if peak > 0 else 1.0


def calibrate_scales(model: Model, spec: QuantSpec) -> list[float]:
    return [tensor_scale(w, spec) for w in model.weight_tensors()]


def quantize_tensor(w: np.ndarray, scale: float, spec: QuantSpec) -> np.ndarray:
    q = round_half_away(np.asarray(w, dtype=np.float64) / scale)
    return np.clip(q, -spec.qmax, spec.qmax).astype(np.int64)


def quantize_model(model: Model, spec: QuantSpec | int) -> QuantizedModel:
    if not isinstance(spec, QuantSpec):
        spec = QuantSpec(int(spec))
    scales = calibrate_scales(model, spec)
    q = [quantize_tensor(w, s, spec) for w, s in zip(model.weight_tensors(), scales)]
    return QuantizedModel(model, q, scales, spec)


def dequantize_model(qmodel: QuantizedModel, q: list[np.ndarray] | None = None) -> Model:
    """Rebuild a float model with weights ``q * s``; ``q`` defaults to the clean integers."""
    q = qmodel.q if q is None else q
    return qmodel.skeleton.with_weights(
        [t.astype(np.float64) * s for t, s in zip(q, qmodel.scales)]
    )


def quantized_accuracy(qmodel: QuantizedModel, dataset: Dataset) -> float:
    return evaluate(dequantize_model(qmodel), dataset)


def reconstruction_error(w: np.ndarray, q: np.ndarray, scale: float) -> tuple[float, float]:
    """(max, mean) absolute difference between ``w`` and ``q * scale``."""
    err = np.abs(np.asarray(w, dtype=np.float64) - q.astype(np.float64) * scale)
    return float(err.max()), float(err.mean())


# ─────────────────────────────────────────────────────────────────────────────
# serialization: header JSON + little-endian int16 blob
# ─────────────────────────────────────────────────────────────────────────────

def save_quantized(qmodel: QuantizedModel, header_path: str | os.PathLike) -> tuple[Path, Path]:
    header_path = Path(header_path)
    blob_path = header_path.with_suffix(".bin")
    blob = np.concatenate([t.reshape(-1) for t in qmodel.q]).astype("<i2").tobytes()
    header = {
        "bitwidth": qmodel.spec.bitwidth,
        "scales": [float(s) for s in qmodel.scales],
        "counts": qmodel.counts,
        "blob": blob_path.name,
    }
    atomic_write_bytes(blob_path, blob)
    atomic_write_bytes(header_path, dumps_json(header).encode())
    return header_path, blob_path


def load_quantized(header_path: str | os.PathLike, skeleton: Model) -> QuantizedModel:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
        spec = QuantSpec(int(header["bitwidth"]))
        counts = [int(c) for c in header["counts"]]
        scales = [float(s) for s in header["scales"]]
        blob_path = header_path.parent / header["blob"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{header_path}: malformed quantized header ({exc!r})") from None
    shapes = [w.shape for w in skeleton.weight_tensors()]
    if counts != [int(np.prod(s)) for s in shapes]:
        raise FormatError(f"{header_path}: tensor counts {counts} do not match the model")
    raw = blob_path.read_bytes()
    if len(raw) != 2 * sum(counts):
        raise TruncatedFileError(f"{header_path}: blob has {len(raw)} bytes, expected {2 * sum(counts)}")
    flat = np.frombuffer(raw, dtype="<i2").astype(np.int64)
    q, offset = [], 0
    for shape, n in zip(shapes, counts):
        q.append(flat[offset : offset + n].reshape(shape))
        offset += n
    return QuantizedModel(skeleton, q, scales, spec)

