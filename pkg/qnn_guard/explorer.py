"""Design-space exploration over (bit-width, protected bits, copies, policy).

The loop is grid -> evaluate -> filter -> Pareto front. Every design point is
evaluated with the same campaign seeds, so protected and unprotected points
see paired fault draws.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from stable_baselines3.common.logger import Logger

from .artifacts import write_csv, write_json
from .constants import (
    FLOAT_BITWIDTH,
    MAX_BITWIDTH,
    MIN_BITWIDTH,
    SDC_DELTA,
    FaultMode,
    ProtectionPolicy,
    TargetMask,
)
from .errors import ConfigError, LayoutError, QnnGuardError
from .faultsim import Campaign, FaultModel, run_campaign
from .logs import get_logger
from .quantizer import QuantizedModel, QuantSpec, quantize_model
from .tensor import Dataset, Model, evaluate
from .wordpack import WordLayout, decode_cost, footprint, protect


class EmptyGridWarning(UserWarning):
    pass


@dataclass(frozen=True, order=True)
class DesignPoint:
    b: int
    J: int
    R: int
    policy: ProtectionPolicy
    W: int

    def layout(self) -> WordLayout:
        return WordLayout(self.W, self.b, self.J, self.R, self.policy)

    @property
    def label(self) -> str:
        return self.layout().label

    def to_dict(self) -> dict:
        return {"b": self.b, "J": self.J, "R": self.R, "policy": ProtectionPolicy(self.policy).value, "W": self.W}


def enumerate_grid(
    b_range: Iterable[int],
    J_range: Iterable[int],
    R_range: Iterable[int],
    policies: Iterable[ProtectionPolicy | str],
    W: int,
    logger: Logger | None = None,
) -> list[DesignPoint]:
    """Every valid combination, sorted lexicographically; R = 0 collapses to policy ``none``."""
    ranges = [sorted(set(b_range)), sorted(set(J_range)), sorted(set(R_range)),
              sorted({ProtectionPolicy(p) for p in policies})]
    if not all(ranges):
        raise ConfigError("grid", "every range must be non-empty")

    points = set()
    for b, J, R, policy in itertools.product(*ranges):
        if not (MIN_BITWIDTH <= b <= MAX_BITWIDTH or b == FLOAT_BITWIDTH):
            continue
        try:
            layout = WordLayout(W, b, J, R, ProtectionPolicy.NONE if R == 0 else policy)
        except LayoutError:
            continue
        points.add(DesignPoint(b, J, R, layout.policy, W))

    grid = sorted(points)
    if not grid:
        message = f"no valid design point for W={W} in the requested ranges"
        warnings.warn(message, EmptyGridWarning, stacklevel=2)
        (logger or get_logger()).warn(message)
    return grid


@dataclass(frozen=True)
class RateFloor:
    rate: float
    min_accuracy: float


@dataclass(frozen=True)
class Thresholds:
    min_clean_accuracy: float = 0.0
    rate_floors: tuple[RateFloor, ...] = ()
    max_bits_per_param: float | None = None
    max_decode_cost: float | None = None

    @property
    def rates(self) -> list[float]:
        return sorted({f.rate for f in self.rate_floors})

    def to_dict(self) -> dict:
        return {
            "min_clean_accuracy": self.min_clean_accuracy,
            "rate_floors": [{"rate": f.rate, "min_accuracy": f.min_accuracy} for f in self.rate_floors],
            "max_bits_per_param": self.max_bits_per_param,
            "max_decode_cost": self.max_decode_cost,
        }


@dataclass(frozen=True)
class CampaignTemplate:
    master_seed: int
    n_runs: int = 30
    eval_subset_size: int | None = None
    target_mask: TargetMask = TargetMask.WHOLE_WORD
    sdc_delta: float = SDC_DELTA
    extra_rates: tuple[float, ...] = ()

    def rates(self, thresholds: Thresholds) -> list[float]:
        return sorted(set(thresholds.rates) | set(self.extra_rates))

    def campaign(self, rate: float) -> Campaign:
        fm = FaultModel(FaultMode.BERNOULLI, rate, 0, self.target_mask, self.master_seed)
        return Campaign(fm, self.n_runs, self.eval_subset_size, False, self.sdc_delta)

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "n_runs": self.n_runs,
            "eval_subset_size": self.eval_subset_size,
            "target_mask": TargetMask(self.target_mask).value,
            "sdc_delta": self.sdc_delta,
            "extra_rates": list(self.extra_rates),
        }


@dataclass(frozen=True)
class RateStat:
    mean: float
    ci_half_width: float
    std: float
    sdc_rate: float
    correction_events: int


@dataclass
class EvaluatedPoint:
    grid_index: int
    point: DesignPoint
    bits_per_param: int
    overhead_fraction: float
    total_bits: int
    decode_cost: int
    master_seed: int
    n_runs: int
    valid: bool = True
    reason: str = ""
    clean_accuracy: float | None = None
    rates: dict[float, RateStat] = field(default_factory=dict)
    worst_faulty_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "grid_index": self.grid_index,
            "point": self.point.to_dict(),
            "label": self.point.label,
            "valid": self.valid,
            "reason": self.reason,
            "clean_accuracy": self.clean_accuracy,
            "bits_per_param": self.bits_per_param,
            "overhead_fraction": self.overhead_fraction,
            "total_bits": self.total_bits,
            "decode_cost": self.decode_cost,
            "worst_faulty_accuracy": self.worst_faulty_accuracy,
            "master_seed": self.master_seed,
            "n_runs": self.n_runs,
            "rates": {
                repr(rate): {
                    "mean": s.mean,
                    "ci_half_width": s.ci_half_width,
                    "std": s.std,
                    "sdc_rate": s.sdc_rate,
                    "correction_events": s.correction_events,
                }
                for rate, s in sorted(self.rates.items())
            },
        }


class QuantCache:
    """Quantized models keyed by bit-width, shared by every point of one sweep."""

    def __init__(self, model: Model):
        self.model = model
        self._by_bits: dict[int, QuantizedModel] = {}

    def get(self, bits: int) -> QuantizedModel:
        if bits not in self._by_bits:
            self._by_bits[bits] = quantize_model(self.model, QuantSpec(bits))
        return self._by_bits[bits]


def _worst(rates: dict[float, RateStat], thresholds: Thresholds, clean: float) -> float:
    constrained = [rates[r].mean for r in thresholds.rates if r in rates]
    if constrained:
        return min(constrained)
    if rates:
        return min(s.mean for s in rates.values())
    return clean


def evaluate_point(
    dp: DesignPoint,
    model: Model,
    dataset: Dataset,
    thresholds: Thresholds,
    campaign_template: CampaignTemplate,
    cache: QuantCache | None = None,
    grid_index: int = 0,
    jobs: int = 1,
    logger: Logger | None = None,
) -> EvaluatedPoint:
    """Quantize, protect, measure clean accuracy and one campaign per rate."""
    layout = dp.layout()
    fp = footprint(layout, model.n_weight_params)
    ep = EvaluatedPoint(
        grid_index=grid_index,
        point=dp,
        bits_per_param=fp.bits_per_param,
        overhead_fraction=fp.overhead_fraction,
        total_bits=fp.total_bits,
        decode_cost=decode_cost(layout),
        master_seed=campaign_template.master_seed,
        n_runs=campaign_template.n_runs,
    )
    cache = cache or QuantCache(model)
    try:
        source = model if layout.is_float_baseline else cache.get(dp.b)
        image = protect(source, layout)
        ep.clean_accuracy = evaluate(image.restore()[0], dataset)
        for rate in campaign_template.rates(thresholds):
            result = run_campaign(image, None, campaign_template.campaign(rate), dataset, jobs)
            ep.rates[rate] = RateStat(
                result.mean, result.ci_half_width, result.std, result.sdc_rate, result.correction_events
            )
    except (QnnGuardError, ValueError, ArithmeticError) as exc:
        ep.valid = False
        ep.reason = f"{type(exc).__name__}: {exc}"
        (logger or get_logger()).warn(f"{dp.label}: {ep.reason}")
        return ep
    ep.worst_faulty_accuracy = _worst(ep.rates, thresholds, ep.clean_accuracy)

    if logger is not None:
        logger.record("explore/clean_accuracy", ep.clean_accuracy)
        logger.record("explore/worst_faulty_accuracy", ep.worst_faulty_accuracy)
        logger.record("explore/bits_per_param", ep.bits_per_param)
        logger.record("explore/decode_cost", ep.decode_cost)
        logger.dump(step=grid_index)
    return ep


def passes_thresholds(ep: EvaluatedPoint, thresholds: Thresholds) -> bool:
    if not ep.valid or ep.clean_accuracy is None or ep.clean_accuracy < thresholds.min_clean_accuracy:
        return False
    for floor in thresholds.rate_floors:
        stat = ep.rates.get(floor.rate)
        if stat is None or stat.mean < floor.min_accuracy:
            return False
    if thresholds.max_bits_per_param is not None and ep.bits_per_param > thresholds.max_bits_per_param:
        return False
    if thresholds.max_decode_cost is not None and ep.decode_cost > thresholds.max_decode_cost:
        return False
    return True


def filter_thresholds(points: Sequence[EvaluatedPoint], thresholds: Thresholds) -> list[EvaluatedPoint]:
    return [p for p in points if passes_thresholds(p, thresholds)]


def _objectives(ep: EvaluatedPoint) -> tuple[float, int, int]:
    return ep.worst_faulty_accuracy, ep.bits_per_param, ep.decode_cost


def dominates(a: EvaluatedPoint, b: EvaluatedPoint) -> bool:
    (acc_a, bits_a, cost_a), (acc_b, bits_b, cost_b) = _objectives(a), _objectives(b)
    no_worse = acc_a >= acc_b and bits_a <= bits_b and cost_a <= cost_b
    return no_worse and (acc_a > acc_b or bits_a < bits_b or cost_a < cost_b)


@dataclass
class ParetoSet:
    members: list[EvaluatedPoint]

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members]}


def pareto_front(points: Sequence[EvaluatedPoint]) -> ParetoSet:
    """Non-dominated points under (max accuracy, min bits, min cost); ties are all kept."""
    candidates = sorted(
        (p for p in points if p.valid and p.worst_faulty_accuracy is not None),
        key=lambda p: (-p.worst_faulty_accuracy, p.bits_per_param, p.decode_cost, p.grid_index),
    )
    front: list[EvaluatedPoint] = []
    for p in candidates:
        # only an earlier point can dominate p; transitivity lets us check the front alone
        if not any(dominates(f, p) for f in front):
            front.append(p)
    front.sort(key=lambda p: (p.bits_per_param, -p.worst_faulty_accuracy, p.decode_cost, p.grid_index))
    return ParetoSet(front)


# ─────────────────────────────────────────────────────────────────────────────
# end-to-end sweep
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GridSpec:
    bitwidths: tuple[int, ...] = (8,)
    protected_bits: tuple[int, ...] = (0, 1)
    copies: tuple[int, ...] = (0, 2)
    policies: tuple[ProtectionPolicy, ...] = (ProtectionPolicy.MAJORITY,)
    word_width: int = 16

    def to_dict(self) -> dict:
        return {
            "bitwidths": list(self.bitwidths),
            "protected_bits": list(self.protected_bits),
            "copies": list(self.copies),
            "policies": [ProtectionPolicy(p).value for p in self.policies],
            "word_width": self.word_width,
        }


@dataclass(frozen=True)
class ExploreSettings:
    grid: GridSpec
    thresholds: Thresholds
    campaign: CampaignTemplate

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "thresholds": self.thresholds.to_dict(),
            "campaign": self.campaign.to_dict(),
        }


@dataclass
class Exploration:
    settings: ExploreSettings
    points: list[EvaluatedPoint]
    survivors: list[EvaluatedPoint]
    front: ParetoSet
    warnings: list[str] = field(default_factory=list)

    @property
    def rates(self) -> list[float]:
        return self.settings.campaign.rates(self.settings.thresholds)

    def to_dict(self) -> dict:
        return {
            "settings": self.settings.to_dict(),
            "points": [p.to_dict() for p in self.points],
            "survivors": [p.grid_index for p in self.survivors],
            "pareto": [p.grid_index for p in self.front.members],
            "warnings": list(self.warnings),
        }


def explore(
    settings: ExploreSettings,
    model: Model,
    dataset: Dataset,
    jobs: int = 1,
    logger: Logger | None = None,
) -> Exploration:
    g = settings.grid
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyGridWarning)
        grid = enumerate_grid(g.bitwidths, g.protected_bits, g.copies, g.policies, g.word_width, logger)
    notes = [str(w.message) for w in caught if issubclass(w.category, EmptyGridWarning)]

    cache = QuantCache(model)
    points = [
        evaluate_point(dp, model, dataset, settings.thresholds, settings.campaign, cache, i, jobs, logger)
        for i, dp in enumerate(grid)
    ]
    survivors = filter_thresholds(points, settings.thresholds)
    front = pareto_front(survivors)
    if grid and not front.members:
        notes.append("no design point satisfies the thresholds")
    (logger or get_logger()).info(
        f"explored {len(points)} points: {len(survivors)} pass thresholds, {len(front)} on the Pareto front"
    )
    return Exploration(settings, points, survivors, front, notes)


REPORT_COLUMNS = (
    "grid_index", "b", "J", "R", "policy", "W", "valid", "reason", "clean_accuracy",
    "bits_per_param", "overhead_fraction", "total_bits", "decode_cost", "worst_faulty_accuracy",
    "passes_thresholds", "pareto", "master_seed", "n_runs",
)


def report_header(rates: Sequence[float]) -> list[str]:
    header = list(REPORT_COLUMNS)
    for rate in rates:
        header += [f"mean@{rate!r}", f"ci@{rate!r}", f"sdc@{rate!r}"]
    return header


def write_report_csv(exploration: Exploration, path):
    survivors = {p.grid_index for p in exploration.survivors}
    front = {p.grid_index for p in exploration.front.members}
    rows = []
    for ep in exploration.points:
        row = [
            ep.grid_index, ep.point.b, ep.point.J, ep.point.R, ProtectionPolicy(ep.point.policy).value,
            ep.point.W, ep.valid, ep.reason, "" if ep.clean_accuracy is None else ep.clean_accuracy,
            ep.bits_per_param, ep.overhead_fraction, ep.total_bits, ep.decode_cost,
            "" if ep.worst_faulty_accuracy is None else ep.worst_faulty_accuracy,
            ep.grid_index in survivors, ep.grid_index in front, ep.master_seed, ep.n_runs,
        ]
        for rate in exploration.rates:
            stat = ep.rates.get(rate)
            row += ["", "", ""] if stat is None else [stat.mean, stat.ci_half_width, stat.sdc_rate]
        rows.append(row)
    return write_csv(path, report_header(exploration.rates), rows)


def write_pareto_json(exploration: Exploration, path):
    data = dict(exploration.front.to_dict(), thresholds=exploration.settings.thresholds.to_dict())
    return write_json(path, data)


def write_exploration_json(exploration: Exploration, path):
    return write_json(path, exploration.to_dict())
