"""JSON run configurations parsed into frozen dataclasses.

Validation stops at the first bad field and raises :class:`ConfigError` with
its dotted path, e.g. ``campaign.p``. Relative file paths are resolved
against the directory of the config file. Every configuration that injects
faults needs a seed: ``master_seed`` in the file or ``--seed`` on the command
line, the flag taking precedence.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .artifacts import read_json
from .bundle import load_bundle
from .constants import (
    DEFAULT_COPIES,
    DEFAULT_PROTECTED_BITS,
    JOBS_ENV,
    SDC_DELTA,
    FaultMode,
    ProtectionPolicy,
    TargetMask,
)
from .errors import ConfigError, QnnGuardError
from .explorer import CampaignTemplate, ExploreSettings, GridSpec, RateFloor, Thresholds
from .faultsim import Campaign, FaultModel
from .quantizer import QuantSpec
from .tensor import Dataset, Model
from .wordpack import WordLayout

_MISSING = object()


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check(value: Any, kind: type, dotted: str) -> Any:
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(dotted, f"expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(dotted, f"expected a finite number, got {value!r}")
        value = float(value)
    elif not isinstance(value, kind):
        raise ConfigError(dotted, f"expected {kind.__name__}, got {value!r}")
    return value


def _get(data: Mapping, key: str, path: str, kind: type, default: Any = _MISSING, nullable: bool = False) -> Any:
    dotted = _join(path, key)
    if key not in data:
        if default is _MISSING:
            raise ConfigError(dotted, "missing required field")
        return default
    value = data[key]
    if value is None and nullable:
        return None
    return _check(value, kind, dotted)


def _section(data: Mapping, key: str, path: str = "") -> Mapping:
    return _get(data, key, path, dict)


def _int_list(data: Mapping, key: str, path: str, default: Any = _MISSING) -> tuple[int, ...]:
    values = _get(data, key, path, list, default)
    return tuple(_check(v, int, f"{_join(path, key)}[{i}]") for i, v in enumerate(values))


def _enum(data: Mapping, key: str, path: str, enum, default: Any = _MISSING):
    value = _get(data, key, path, str, default)
    try:
        return enum(value)
    except ValueError:
        choices = ", ".join(e.value for e in enum)
        raise ConfigError(_join(path, key), f"{value!r} is not one of: {choices}") from None


def _build(path: str, factory, *args):
    try:
        return factory(*args)
    except QnnGuardError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def _seed(data: Mapping, path: str, override: int | None) -> int:
    if override is not None:
        return override
    dotted = _join(path, "master_seed")
    if "master_seed" not in data:
        raise ConfigError(dotted, "a seed is required (master_seed in the config or --seed)")
    seed = _check(data["master_seed"], int, dotted)
    if not 0 <= seed < 2**64:
        raise ConfigError(dotted, f"must be an unsigned 64-bit integer, got {seed}")
    return seed


# ─────────────────────────────────────────────────────────────────────────────
# sections
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BundleConfig:
    model: Path
    weights: Path
    dataset: Path
    labels: Path | None = None

    def load(self) -> tuple[Model, Dataset]:
        return load_bundle(self.model, self.weights, self.dataset, self.labels)


def parse_bundle(data: Mapping, base: Path, path: str = "bundle") -> BundleConfig:
    def resolve(key, default=_MISSING):
        value = _get(data, key, path, str, default, nullable=True)
        return None if value is None else base / value

    return BundleConfig(resolve("model"), resolve("weights"), resolve("dataset"), resolve("labels", None))


def parse_layout(data: Mapping, path: str = "layout") -> WordLayout:
    return _build(
        path,
        WordLayout,
        _get(data, "W", path, int, 16),
        _get(data, "b", path, int),
        _get(data, "J", path, int, DEFAULT_PROTECTED_BITS),
        _get(data, "R", path, int, DEFAULT_COPIES),
        _enum(data, "policy", path, ProtectionPolicy, ProtectionPolicy.MAJORITY.value),
    )


def parse_fault_model(data: Mapping, path: str, seed: int | None = None) -> FaultModel:
    mode = _enum(data, "mode", path, FaultMode, FaultMode.BERNOULLI.value)
    p = _get(data, "p", path, float) if mode == FaultMode.BERNOULLI else 0.0
    k = _get(data, "k", path, int) if mode == FaultMode.EXACT_K else 0
    if not 0.0 <= p <= 1.0:
        raise ConfigError(_join(path, "p"), f"bit error rate must be in [0, 1], got {p}")
    if k < 0:
        raise ConfigError(_join(path, "k"), f"must be >= 0, got {k}")
    return _build(
        path,
        FaultModel,
        mode,
        p,
        k,
        _enum(data, "target_mask", path, TargetMask, TargetMask.WHOLE_WORD.value),
        _seed(data, path, seed),
        _get(data, "bit_position", path, int, None, nullable=True),
    )


def parse_campaign(data: Mapping, path: str = "campaign", seed: int | None = None) -> Campaign:
    fm = parse_fault_model(data, path, seed)
    n_runs = _get(data, "n_runs", path, int, 30)
    if n_runs < 1:
        raise ConfigError(_join(path, "n_runs"), f"must be >= 1, got {n_runs}")
    subset = _get(data, "eval_subset_size", path, int, None, nullable=True)
    if subset is not None and subset < 1:
        raise ConfigError(_join(path, "eval_subset_size"), f"must be >= 1, got {subset}")
    return _build(
        path,
        Campaign,
        fm,
        n_runs,
        subset,
        _get(data, "record_per_run", path, bool, True),
        _get(data, "sdc_delta", path, float, SDC_DELTA),
    )


def parse_grid(data: Mapping, path: str = "grid") -> GridSpec:
    policies = _get(data, "policies", path, list, [ProtectionPolicy.MAJORITY.value])
    parsed = []
    for i, p in enumerate(policies):
        try:
            parsed.append(ProtectionPolicy(p))
        except ValueError:
            raise ConfigError(f"{path}.policies[{i}]", f"unknown policy {p!r}") from None
    grid = GridSpec(
        bitwidths=_int_list(data, "bitwidths", path),
        protected_bits=_int_list(data, "protected_bits", path, [0, 1]),
        copies=_int_list(data, "copies", path, [0, 2]),
        policies=tuple(parsed),
        word_width=_get(data, "word_width", path, int, 16),
    )
    for key in ("bitwidths", "protected_bits", "copies", "policies"):
        if not getattr(grid, key):
            raise ConfigError(_join(path, key), "range must be non-empty")
    return grid


def parse_thresholds(data: Mapping, path: str = "thresholds") -> Thresholds:
    floors = []
    for i, item in enumerate(_get(data, "rate_floors", path, list, [])):
        item_path = f"{path}.rate_floors[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(item_path, f"expected an object, got {item!r}")
        rate = _get(item, "rate", item_path, float)
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"{item_path}.rate", f"must be in [0, 1], got {rate}")
        floors.append(RateFloor(rate, _get(item, "min_accuracy", item_path, float)))
    return Thresholds(
        min_clean_accuracy=_get(data, "min_clean_accuracy", path, float, 0.0),
        rate_floors=tuple(floors),
        max_bits_per_param=_get(data, "max_bits_per_param", path, float, None, nullable=True),
        max_decode_cost=_get(data, "max_decode_cost", path, float, None, nullable=True),
    )


def parse_campaign_template(data: Mapping, path: str = "campaign", seed: int | None = None) -> CampaignTemplate:
    n_runs = _get(data, "n_runs", path, int, 30)
    if n_runs < 1:
        raise ConfigError(_join(path, "n_runs"), f"must be >= 1, got {n_runs}")
    subset = _get(data, "eval_subset_size", path, int, None, nullable=True)
    if subset is not None and subset < 1:
        raise ConfigError(_join(path, "eval_subset_size"), f"must be >= 1, got {subset}")
    extra = _get(data, "extra_rates", path, list, [])
    extra_rates = tuple(_check(r, float, f"{path}.extra_rates[{i}]") for i, r in enumerate(extra))
    for i, r in enumerate(extra_rates):
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"{path}.extra_rates[{i}]", f"must be in [0, 1], got {r}")
    return CampaignTemplate(
        master_seed=_seed(data, path, seed),
        n_runs=n_runs,
        eval_subset_size=subset,
        target_mask=_enum(data, "target_mask", path, TargetMask, TargetMask.WHOLE_WORD.value),
        sdc_delta=_get(data, "sdc_delta", path, float, SDC_DELTA),
        extra_rates=extra_rates,
    )


# ─────────────────────────────────────────────────────────────────────────────
# per-command configurations
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class QuantizeConfig:
    bundle: BundleConfig
    spec: QuantSpec


@dataclass(frozen=True)
class ProtectConfig:
    bundle: BundleConfig
    layout: WordLayout


@dataclass(frozen=True)
class InjectConfig:
    bundle: BundleConfig
    image: Path
    fault_model: FaultModel
    run_index: int = 0


@dataclass(frozen=True)
class CampaignConfig:
    bundle: BundleConfig
    layout: WordLayout
    campaign: Campaign
    bit_sensitivity: bool = False


@dataclass(frozen=True)
class ExploreConfig:
    bundle: BundleConfig
    settings: ExploreSettings


@dataclass(frozen=True)
class ReportConfig:
    inputs: tuple[Path, ...]
    pareto_only: bool = True


def _quantize(data: Mapping, base: Path, seed: int | None) -> QuantizeConfig:
    bundle = parse_bundle(_section(data, "bundle"), base)
    return QuantizeConfig(bundle, _build("bitwidth", QuantSpec, _get(data, "bitwidth", "", int)))


def _protect(data: Mapping, base: Path, seed: int | None) -> ProtectConfig:
    return ProtectConfig(parse_bundle(_section(data, "bundle"), base), parse_layout(_section(data, "layout")))


def _inject(data: Mapping, base: Path, seed: int | None) -> InjectConfig:
    run_index = _get(data, "run_index", "", int, 0)
    if run_index < 0:
        raise ConfigError("run_index", f"must be >= 0, got {run_index}")
    return InjectConfig(
        parse_bundle(_section(data, "bundle"), base),
        base / _get(data, "image", "", str),
        parse_fault_model(_section(data, "fault"), "fault", seed),
        run_index,
    )


def _campaign(data: Mapping, base: Path, seed: int | None) -> CampaignConfig:
    section = _section(data, "campaign")
    campaign = parse_campaign(section, "campaign", seed)
    sensitivity = _get(section, "bit_sensitivity", "campaign", bool, False)
    if sensitivity and campaign.fault_model.mode != FaultMode.BERNOULLI:
        raise ConfigError("campaign.bit_sensitivity", "per-bit campaigns need bernoulli mode")
    return CampaignConfig(
        parse_bundle(_section(data, "bundle"), base),
        parse_layout(_section(data, "layout")),
        campaign,
        sensitivity,
    )


def _explore(data: Mapping, base: Path, seed: int | None) -> ExploreConfig:
    settings = ExploreSettings(
        parse_grid(_section(data, "grid")),
        parse_thresholds(_get(data, "thresholds", "", dict, {})),
        parse_campaign_template(_section(data, "campaign"), "campaign", seed),
    )
    return ExploreConfig(parse_bundle(_section(data, "bundle"), base), settings)


def _report(data: Mapping, base: Path, seed: int | None) -> ReportConfig:
    inputs = _get(data, "inputs", "", list)
    if not inputs:
        raise ConfigError("inputs", "at least one result file is required")
    paths = tuple(base / _check(p, str, f"inputs[{i}]") for i, p in enumerate(inputs))
    return ReportConfig(paths, _get(data, "pareto_only", "", bool, True))


PARSERS = {
    "quantize": _quantize,
    "protect": _protect,
    "inject": _inject,
    "campaign": _campaign,
    "explore": _explore,
    "report": _report,
}


def parse_config(command: str, data: Any, base: str | os.PathLike = ".", seed: int | None = None):
    if not isinstance(data, dict):
        raise ConfigError("", f"top level must be an object, got {type(data).__name__}")
    return PARSERS[command](data, Path(base), seed)


def read_config(path: str | os.PathLike) -> dict:
    try:
        return read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None


def load_config(command: str, path: str | os.PathLike, seed: int | None = None):
    """Read and validate the config of ``command``; returns ``(config, raw_json)``."""
    data = read_config(path)
    return parse_config(command, data, Path(path).parent, seed), data


def resolve_jobs(flag: int | None) -> int:
    """``--jobs`` wins over the environment variable; the default is one worker."""
    if flag is not None:
        jobs, field = flag, "--jobs"
    elif os.environ.get(JOBS_ENV):
        field = JOBS_ENV
        try:
            jobs = int(os.environ[JOBS_ENV])
        except ValueError:
            raise ConfigError(field, f"expected an integer, got {os.environ[JOBS_ENV]!r}") from None
    else:
        return 1
    if jobs < 1:
        raise ConfigError(field, f"must be >= 1, got {jobs}")
    return jobs
