"""Exception hierarchy shared by every module.

Each class carries a stable ``kind`` string so the command line can report
failures as machine-readable JSON.
"""

from __future__ import annotations


class QnnGuardError(Exception):
    kind = "error"


class BundleError(QnnGuardError):
    kind = "bundle_error"


class BadMagicError(BundleError):
    kind = "bad_magic"


class TruncatedFileError(BundleError):
    kind = "truncated_file"


class ShapeMismatchError(BundleError):
    kind = "shape_mismatch"


class FormatError(BundleError):
    kind = "format_error"


class EmptyDatasetError(QnnGuardError):
    kind = "empty_dataset"


class QuantSpecError(QnnGuardError):
    kind = "quant_spec"


class LayoutError(QnnGuardError):
    kind = "layout"


class FaultModelError(QnnGuardError):
    kind = "fault_model"


class CampaignError(QnnGuardError):
    kind = "campaign"


class PlotDataError(QnnGuardError):
    kind = "plot_data"

    def __init__(self, point: str, message: str):
        super().__init__(f"{point}: {message}")
        self.point = point


class ConfigError(QnnGuardError):
    kind = "invalid_config"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
