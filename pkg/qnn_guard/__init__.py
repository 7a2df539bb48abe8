__version__ = "0.1.0"

from .constants import FaultMode, ProtectionPolicy, TargetMask
from .errors import QnnGuardError
from .tensor import Dataset, Model, Tensor, evaluate, forward
from .bundle import load_bundle, save_bundle
from .quantizer import QuantizedModel, QuantSpec, quantize_model
from .wordpack import ProtectedImage, WordLayout, decode, decode_cost, encode, footprint, protect
from .faultsim import Campaign, CampaignResult, FaultModel, inject, run_campaign
from .explorer import DesignPoint, enumerate_grid, explore, pareto_front

__all__ = [
    "__version__",
    "FaultMode",
    "ProtectionPolicy",
    "TargetMask",
    "QnnGuardError",
    "Dataset",
    "Model",
    "Tensor",
    "evaluate",
    "forward",
    "load_bundle",
    "save_bundle",
    "QuantizedModel",
    "QuantSpec",
    "quantize_model",
    "ProtectedImage",
    "WordLayout",
    "decode",
    "decode_cost",
    "encode",
    "footprint",
    "protect",
    "Campaign",
    "CampaignResult",
    "FaultModel",
    "inject",
    "run_campaign",
    "DesignPoint",
    "enumerate_grid",
    "explore",
    "pareto_front",
]
