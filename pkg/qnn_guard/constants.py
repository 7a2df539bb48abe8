from enum import Enum

MIN_BITWIDTH = 2
MAX_BITWIDTH = 16
FLOAT_BITWIDTH = 32
WORD_WIDTHS = (8, 16, 32)

BASELINE_BITS = 32
DEFAULT_PROTECTED_BITS = 1
DEFAULT_COPIES = 2

SDC_DELTA = 0.005
CI_Z = 1.96

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

JOBS_ENV = "QNN_GUARD_JOBS"


class Activation(str, Enum):
    RELU = "relu"
    NONE = "none"


class ProtectionPolicy(str, Enum):
    NONE = "none"
    MAJORITY = "majority"
    DETECT_ZERO = "detect_zero"
    DETECT_TRUST_COPY = "detect_trust_copy"


class FaultMode(str, Enum):
    BERNOULLI = "bernoulli"
    EXACT_K = "exact_k"


class TargetMask(str, Enum):
    WHOLE_WORD = "whole_word"
    VALUE_BITS_ONLY = "value_bits_only"
    PROTECTION_BITS_ONLY = "protection_bits_only"
    MSB_GROUP_ONLY = "msb_group_only"
    SINGLE_BIT = "single_bit"
