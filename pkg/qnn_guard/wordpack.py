"""In-word protection of quantized parameters.

A ``b``-bit two's-complement value sits in bits ``[0, b)`` of a ``W``-bit
memory word. Copy ``r`` of its top ``J`` bits sits in bits
``[b + r*J, b + (r+1)*J)``; everything above is zero padding. Decoding votes
(or compares) every protected bit against its copies, so the memory freed by
quantization is spent on redundancy for the bits that matter most.

Example, ``b=4, J=1, R=2, W=8``, ``q=-3``::

    bit   7 6 | 5 4 | 3 2 1 0
          0 0 | 1 1 | 1 1 0 1   -> 0x3D
          pad  copies  value

A layout with ``b = 32`` is the unquantized baseline: weights are stored as
their binary32 bit patterns with no protection.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import atomic_write_bytes, dumps_json
from .constants import (
    BASELINE_BITS,
    DEFAULT_COPIES,
    DEFAULT_PROTECTED_BITS,
    FLOAT_BITWIDTH,
    MIN_BITWIDTH,
    WORD_WIDTHS,
    ProtectionPolicy,
)
from .errors import FormatError, LayoutError, TruncatedFileError
from .quantizer import QuantizedModel, QuantSpec, quantize_model
from .tensor import Model

_DTYPES = {8: np.uint8, 16: np.uint16, 32: np.uint32}


@dataclass(frozen=True)
class WordLayout:
    word_width: int = 16
    value_bits: int = 8
    protected_bits: int = DEFAULT_PROTECTED_BITS
    copies: int = DEFAULT_COPIES
    policy: ProtectionPolicy = ProtectionPolicy.MAJORITY

    def __post_init__(self):
        policy = ProtectionPolicy(self.policy)
        if self.copies == 0:
            policy = ProtectionPolicy.NONE
        object.__setattr__(self, "policy", policy)
        self._validate()

    def _validate(self) -> None:
        W, b, J, R = self.word_width, self.value_bits, self.protected_bits, self.copies
        if W not in WORD_WIDTHS:
            raise LayoutError(f"word width must be one of {WORD_WIDTHS}, got {W}")
        if J < 0 or R < 0:
            raise LayoutError(f"protected bits and copies must be >= 0, got J={J} R={R}")
        if not MIN_BITWIDTH <= b <= W:
            raise LayoutError(f"value bits must be in [{MIN_BITWIDTH}, {W}], got {b}")
        if b == FLOAT_BITWIDTH and (J or R):
            raise LayoutError("the 32-bit float baseline carries no protection")
        if J > b:
            raise LayoutError(f"cannot protect {J} bits of a {b}-bit value")
        if (R > 0) != (J > 0):
            raise LayoutError(f"J and R must both be zero or both positive, got J={J} R={R}")
        if b + J * R > W:
            raise LayoutError(f"b + J*R = {b + J * R} exceeds word width {W}")
        if self.policy == ProtectionPolicy.NONE and R:
            raise LayoutError("policy 'none' requires R = 0")
        if self.policy == ProtectionPolicy.MAJORITY and R % 2:
            raise LayoutError(f"majority needs an even number of copies (odd vote count), got R={R}")
        if self.policy in (ProtectionPolicy.DETECT_ZERO, ProtectionPolicy.DETECT_TRUST_COPY) and R != 1:
            raise LayoutError(f"{self.policy.value} needs exactly one copy, got R={R}")

    @classmethod
    def float_baseline(cls) -> "WordLayout":
        return cls(FLOAT_BITWIDTH, FLOAT_BITWIDTH, 0, 0, ProtectionPolicy.NONE)

    @property
    def is_float_baseline(self) -> bool:
        return self.value_bits == FLOAT_BITWIDTH

    @property
    def votes(self) -> int:
        return self.copies + 1

    @property
    def bits_per_param(self) -> int:
        return self.value_bits + self.protected_bits * self.copies

    @property
    def dtype(self):
        return _DTYPES[self.word_width]

    @property
    def value_mask(self) -> int:
        return (1 << self.value_bits) - 1

    @property
    def copies_mask(self) -> int:
        return ((1 << self.bits_per_param) - 1) & ~self.value_mask

    @property
    def padding_mask(self) -> int:
        return ((1 << self.word_width) - 1) & ~((1 << self.bits_per_param) - 1)

    @property
    def word_mask(self) -> int:
        return (1 << self.word_width) - 1

    @property
    def msb_group_mask(self) -> int:
        """Top-J value bits plus all copies; the value MSB alone when nothing is protected."""
        if self.protected_bits == 0:
            return 1 << (self.value_bits - 1)
        top = self.value_mask & ~((1 << (self.value_bits - self.protected_bits)) - 1)
        return top | self.copies_mask

    @property
    def label(self) -> str:
        if self.is_float_baseline:
            return f"float32_w{self.word_width}"
        return (f"b{self.value_bits}_j{self.protected_bits}_r{self.copies}"
                f"_{self.policy.value}_w{self.word_width}")

    def to_dict(self) -> dict:
        return {
            "W": self.word_width,
            "b": self.value_bits,
            "J": self.protected_bits,
            "R": self.copies,
            "policy": self.policy.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WordLayout":
        return cls(int(data["W"]), int(data["b"]), int(data["J"]), int(data["R"]), data["policy"])


# ─────────────────────────────────────────────────────────────────────────────
# codec
# ─────────────────────────────────────────────────────────────────────────────

def encode(q, layout: WordLayout):
    """Pack two's-complement values and their top-J copies into words of ``layout``."""
    if layout.is_float_baseline:
        raise LayoutError("use protect() for the float baseline; encode() packs integers")
    scalar = np.ndim(q) == 0
    q = np.asarray(q, dtype=np.int64)
    limit = (1 << (layout.value_bits - 1)) - 1
    if q.size and (q.min() < -limit or q.max() > limit):
        raise LayoutError(f"values must lie in [-{limit}, {limit}] for b={layout.value_bits}")

    b, J = layout.value_bits, layout.protected_bits
    value = q & layout.value_mask
    words = value.copy()
    if J:
        top = (value >> (b - J)) & ((1 << J) - 1)
        for r in range(layout.copies):
            words |= top << (b + r * J)
    words = words.astype(layout.dtype)
    return int(words) if scalar else words


def decode(words, layout: WordLayout):
    """Corrected values and per-word correction flags (``True`` where any vote disagreed)."""
    scalar = np.ndim(words) == 0
    w = np.asarray(words).astype(np.int64) & layout.word_mask
    b, J, R = layout.value_bits, layout.protected_bits, layout.copies
    value = w & layout.value_mask
    flags = np.zeros(w.shape, dtype=bool)
    zeroed = np.zeros(w.shape, dtype=bool)

    for j in range(J if R else 0):
        pos = b - J + j
        bit = (value >> pos) & 1
        copies = [(w >> (b + r * J + j)) & 1 for r in range(R)]
        ones = bit + sum(copies)
        disagree = (ones != 0) & (ones != R + 1)
        flags |= disagree
        if layout.policy == ProtectionPolicy.MAJORITY:
            fixed = (2 * ones > R + 1).astype(np.int64)
        elif layout.policy == ProtectionPolicy.DETECT_TRUST_COPY:
            fixed = copies[0]
        else:
            fixed = bit
            zeroed |= disagree
        value = (value & ~(1 << pos)) | (fixed << pos)

    q = value - (((value >> (b - 1)) & 1) << b)
    q = np.where(zeroed, 0, q)
    if scalar:
        return int(q), bool(flags)
    return q, flags


@dataclass(frozen=True)
class Footprint:
    bits_per_param: int
    total_bits: int
    overhead_fraction: float


def footprint(layout: WordLayout, n_params: int, baseline_bits: int = BASELINE_BITS) -> Footprint:
    bits = layout.bits_per_param
    return Footprint(bits, n_params * layout.word_width, (bits - baseline_bits) / baseline_bits)


def decode_cost(layout: WordLayout) -> int:
    """Abstract per-parameter decode cost: value extract, copy-bit extracts, votes."""
    J, R = layout.protected_bits, layout.copies
    return 1 + R * J + (J if R > 0 else 0)


# ─────────────────────────────────────────────────────────────────────────────
# protected parameter image
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(eq=False)
class ProtectedImage:
    layout: WordLayout
    skeleton: Model
    scales: list[float]
    counts: list[int]
    words: np.ndarray

    @property
    def n_params(self) -> int:
        return int(self.words.size)

    def decode_weights(self, words: np.ndarray | None = None) -> tuple[list[np.ndarray], int]:
        words = self.words if words is None else words
        if self.layout.is_float_baseline:
            flat = words.astype("<u4").view("<f4").astype(np.float64)
            corrections = 0
        else:
            q, flags = decode(words, self.layout)
            flat = np.concatenate([
                q[start : start + n].astype(np.float64) * s
                for start, n, s in zip(np.cumsum([0] + self.counts[:-1]), self.counts, self.scales)
            ]) if self.counts else np.zeros(0)
            corrections = int(np.count_nonzero(flags))
        tensors, offset = [], 0
        for ref in self.skeleton.weight_tensors():
            tensors.append(flat[offset : offset + ref.size].reshape(ref.shape))
            offset += ref.size
        return tensors, corrections

    def restore(self, words: np.ndarray | None = None) -> tuple[Model, int]:
        """Decode ``words`` (default: the clean image) into a runnable model."""
        weights, corrections = self.decode_weights(words)
        return self.skeleton.with_weights(weights), corrections


def protect(source: Model | QuantizedModel, layout: WordLayout) -> ProtectedImage:
    """Encode every weight tensor of ``source`` into one flat word array."""
    if layout.is_float_baseline:
        model = source.skeleton if isinstance(source, QuantizedModel) else source
        flat = np.concatenate([w.reshape(-1) for w in model.weight_tensors()])
        words = flat.astype("<f4").view("<u4").astype(np.uint32)
        counts = [int(w.size) for w in model.weight_tensors()]
        return ProtectedImage(layout, model, [1.0] * len(counts), counts, words)

    if isinstance(source, Model):
        source = quantize_model(source, QuantSpec(layout.value_bits))
    if source.spec.bitwidth != layout.value_bits:
        raise LayoutError(
            f"model quantized to {source.spec.bitwidth} bits, layout expects {layout.value_bits}"
        )
    words = encode(np.concatenate([t.reshape(-1) for t in source.q]), layout)
    return ProtectedImage(layout, source.skeleton, list(source.scales), source.counts, words)


def save_image(image: ProtectedImage, header_path: str | os.PathLike, words: np.ndarray | None = None):
    header_path = Path(header_path)
    blob_path = header_path.with_suffix(".bin")
    words = image.words if words is None else words
    byte_width = image.layout.word_width // 8
    blob = words.astype(f"<u{byte_width}").tobytes()
    header = dict(image.layout.to_dict(), scales=[float(s) for s in image.scales],
                  counts=list(image.counts), blob=blob_path.name)
    atomic_write_bytes(blob_path, blob)
    atomic_write_bytes(header_path, dumps_json(header).encode())
    return header_path, blob_path


def load_image(header_path: str | os.PathLike, skeleton: Model) -> ProtectedImage:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
        layout = WordLayout.from_dict(header)
        counts = [int(c) for c in header["counts"]]
        scales = [float(s) for s in header["scales"]]
        blob_path = header_path.parent / header["blob"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{header_path}: malformed image header ({exc!r})") from None
    if counts != [int(w.size) for w in skeleton.weight_tensors()]:
        raise FormatError(f"{header_path}: tensor counts {counts} do not match the model")
    byte_width = layout.word_width // 8
    raw = blob_path.read_bytes()
    if len(raw) != byte_width * sum(counts):
        raise TruncatedFileError(
            f"{header_path}: blob has {len(raw)} bytes, expected {byte_width * sum(counts)}"
        )
    words = np.frombuffer(raw, dtype=f"<u{byte_width}").astype(layout.dtype)
    return ProtectedImage(layout, skeleton, scales, counts, words)
