import itertools
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from qnn_guard.constants import ProtectionPolicy
from qnn_guard.errors import LayoutError
from qnn_guard.quantizer import dequantize_model, quantize_model
from qnn_guard.synthetic import make_desk
from qnn_guard.tensor import evaluate, forward_batch
from qnn_guard.wordpack import (
    WordLayout,
    decode,
    decode_cost,
    encode,
    footprint,
    load_image,
    protect,
    save_image,
)

POLICY_COPIES = {
    ProtectionPolicy.MAJORITY: lambda R: R % 2 == 0,
    ProtectionPolicy.DETECT_ZERO: lambda R: R == 1,
    ProtectionPolicy.DETECT_TRUST_COPY: lambda R: R == 1,
}


def valid_layouts(max_b):
    for W in (8, 16, 32):
        for b in range(2, max_b + 1):
            yield WordLayout(W, b, 0, 0, ProtectionPolicy.NONE)
            for J in range(1, b + 1):
                for R in range(1, (W - b) // J + 1):
                    for policy, ok in POLICY_COPIES.items():
                        if ok(R):
                            yield WordLayout(W, b, J, R, policy)


def test_encode_example():
    layout = WordLayout(8, 4, 1, 2, ProtectionPolicy.MAJORITY)
    assert encode(-3, layout) == 0x3D


def test_unprotected_word_is_zero_extended_value():
    layout = WordLayout(16, 8, 0, 0, ProtectionPolicy.NONE)
    assert encode(-3, layout) == 0xFD
    assert encode(5, layout) == 0x05


def test_roundtrip_exhaustive_small_bitwidths():
    count = 0
    for layout in valid_layouts(6):
        limit = (1 << (layout.value_bits - 1)) - 1
        q = np.arange(-limit, limit + 1)
        decoded, flags = decode(encode(q, layout), layout)
        assert decoded.tolist() == q.tolist(), layout.label
        assert not flags.any()
        count += 1
    assert count > 100


@pytest.mark.parametrize("b", [8, 16])
def test_roundtrip_random_large_bitwidths(b):
    rng = np.random.default_rng(b)
    limit = (1 << (b - 1)) - 1
    q = rng.integers(-limit, limit + 1, size=100_000)
    layouts = [WordLayout(32, b, 0, 0, ProtectionPolicy.NONE), WordLayout(32, b, 1, 2), WordLayout(32, b, 2, 1, ProtectionPolicy.DETECT_ZERO)]
    if b == 8:
        layouts += [WordLayout(16, 8, 1, 2), WordLayout(16, 8, 2, 2), WordLayout(16, 8, 1, 1, ProtectionPolicy.DETECT_TRUST_COPY)]
    for layout in layouts:
        decoded, flags = decode(encode(q, layout), layout)
        assert np.array_equal(decoded, q)
        assert not flags.any()


def test_single_fault_in_vote_group_is_corrected():
    layout = WordLayout(16, 8, 1, 2, ProtectionPolicy.MAJORITY)
    q = np.arange(-127, 128)
    words = encode(q, layout)
    for bit in (7, 8, 9):
        decoded, flags = decode(words ^ np.uint16(1 << bit), layout)
        assert np.array_equal(decoded, q), bit
        assert flags.all()


@pytest.mark.parametrize("bits", [(7, 8), (7, 9), (8, 9)])
def test_two_faults_in_vote_group_flip_the_msb(bits):
    layout = WordLayout(16, 8, 1, 2, ProtectionPolicy.MAJORITY)
    q = np.arange(-127, 128)
    mask = np.uint16(sum(1 << b for b in bits))
    decoded, flags = decode(encode(q, layout) ^ mask, layout)
    assert np.array_equal(decoded, np.where(q >= 0, q - 128, q + 128))
    assert flags.all()


def test_all_single_flips_of_example_word():
    layout = WordLayout(8, 4, 1, 2, ProtectionPolicy.MAJORITY)
    assert decode(0x3D, layout) == (-3, False)
    assert decode(0x35, layout) == (-3, True)
    for bit in (3, 4, 5):
        assert decode(0x3D ^ (1 << bit), layout) == (-3, True)


def test_detect_zero_and_trust_copy():
    zero = WordLayout(8, 4, 1, 1, ProtectionPolicy.DETECT_ZERO)
    trust = WordLayout(8, 4, 1, 1, ProtectionPolicy.DETECT_TRUST_COPY)
    word = encode(-3, zero)
    assert word == 0x1D
    assert decode(word ^ 0x10, zero) == (0, True)
    assert decode(word ^ 0x08, zero) == (0, True)
    # the copy says the MSB is 1; a flipped value MSB is repaired
    assert decode(word ^ 0x08, trust) == (-3, True)
    # a flipped copy is trusted over the value bit
    assert decode(word ^ 0x10, trust) == (5, True)


def test_padding_is_ignored():
    layout = WordLayout(16, 8, 1, 2)
    word = encode(-100, layout)
    assert decode(word | 0xFC00, layout) == (-100, False)


@pytest.mark.parametrize(
    "args",
    [
        (8, 8, 1, 1, ProtectionPolicy.MAJORITY),   # does not fit
        (16, 8, 1, 1, ProtectionPolicy.MAJORITY),  # even vote count
        (16, 8, 1, 0, ProtectionPolicy.NONE),      # J without copies
        (16, 8, 0, 2, ProtectionPolicy.MAJORITY),  # copies of nothing
        (16, 8, 1, 2, ProtectionPolicy.DETECT_ZERO),
        (16, 4, 5, 1, ProtectionPolicy.DETECT_ZERO),
        (12, 8, 1, 2, ProtectionPolicy.MAJORITY),
        (32, 30, 2, 2, ProtectionPolicy.MAJORITY),
    ],
)
def test_invalid_layouts(args):
    with pytest.raises(LayoutError):
        WordLayout(*args)


def test_out_of_range_value():
    with pytest.raises(LayoutError):
        encode(-128, WordLayout(16, 8, 1, 2))


def test_zero_copies_normalizes_policy():
    assert WordLayout(16, 8, 0, 0, ProtectionPolicy.MAJORITY).policy == ProtectionPolicy.NONE


def test_footprint_examples():
    fp = footprint(WordLayout(16, 8, 1, 2), 1000)
    assert fp.bits_per_param == 10
    assert fp.overhead_fraction == -0.6875
    assert fp.total_bits == 16000
    assert footprint(WordLayout.float_baseline(), 10).overhead_fraction == 0.0
    wide = footprint(WordLayout(32, 8, 8, 2), 1)
    assert wide.bits_per_param == 24
    assert wide.overhead_fraction == -0.25


def test_decode_cost_examples():
    assert decode_cost(WordLayout(16, 8, 0, 0, ProtectionPolicy.NONE)) == 1
    assert decode_cost(WordLayout(16, 8, 1, 2)) == 4
    assert decode_cost(WordLayout(16, 8, 2, 2)) == 7


def test_masks_partition_word():
    layout = WordLayout(16, 8, 1, 2)
    assert layout.value_mask == 0x00FF
    assert layout.copies_mask == 0x0300
    assert layout.padding_mask == 0xFC00
    assert layout.msb_group_mask == 0x0380
    assert layout.label == "b8_j1_r2_majority_w16"


def test_protect_restore_matches_dequantized_model():
    model, dataset = make_desk(n_per_class=3)
    qmodel = quantize_model(model, 8)
    image = protect(qmodel, WordLayout(16, 8, 1, 2))
    restored, corrections = image.restore()
    assert corrections == 0
    assert image.n_params == model.n_weight_params
    expected = dequantize_model(qmodel)
    assert np.array_equal(forward_batch(restored, dataset.inputs), forward_batch(expected, dataset.inputs))


def test_float_baseline_stores_binary32():
    model, dataset = make_desk(n_per_class=3)
    image = protect(model, WordLayout.float_baseline())
    assert image.words.dtype == np.uint32
    restored, _ = image.restore()
    for got, want in zip(restored.weight_tensors(), model.weight_tensors()):
        assert np.array_equal(got, want.astype(np.float32).astype(np.float64))
    assert evaluate(restored, dataset) == evaluate(model, dataset)


def test_image_save_load(tmp_path):
    model, _ = make_desk(n_per_class=1)
    image = protect(model, WordLayout(16, 6, 1, 2))
    save_image(image, tmp_path / "protected.json")
    loaded = load_image(tmp_path / "protected.json", model)
    assert loaded.layout == image.layout
    assert np.array_equal(loaded.words, image.words)
    assert loaded.words.dtype == image.words.dtype
