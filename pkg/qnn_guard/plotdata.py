"""Accuracy-vs-bit-error-rate series for plotting.

A series maps a curve tag (a design point label) to ``{rate: CurvePoint}``.
``emit_plot_data`` writes one ``curve_<tag>.csv`` per curve plus a combined
``curves.csv`` and reports curves whose accuracy rises with the error rate by
more than the two confidence intervals allow.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from stable_baselines3.common.logger import Logger

from .artifacts import read_json, write_csv
from .constants import FaultMode, TargetMask
from .errors import PlotDataError
from .logs import get_logger

CURVE_COLUMNS = ("design_point", "rate", "mean_accuracy", "ci_low", "ci_high")


@dataclass(frozen=True)
class CurvePoint:
    rate: float
    mean: float
    ci_half_width: float

    @property
    def ci_low(self) -> float:
        return self.mean - self.ci_half_width

    @property
    def ci_high(self) -> float:
        return self.mean + self.ci_half_width


@dataclass(frozen=True)
class Violation:
    tag: str
    rate_low: float
    rate_high: float
    rise: float

    def to_dict(self) -> dict:
        return {"design_point": self.tag, "rate_low": self.rate_low,
                "rate_high": self.rate_high, "rise": self.rise}


@dataclass
class PlotData:
    files: list[Path]
    violations: list[Violation]


Series = Mapping[str, Mapping[float, "CurvePoint | None"]]


def _add(series: dict, tag: str, point: CurvePoint | None, rate: float) -> None:
    curve = series.setdefault(tag, {})
    if rate in curve:
        raise PlotDataError(tag, f"more than one result at rate {rate!r}")
    curve[rate] = point


def series_from_campaign(data: dict, series: dict | None = None) -> dict:
    """Add one campaign result (its ``to_dict`` form) as a point of its layout's curve."""
    series = {} if series is None else series
    fm = data.get("fault_model", {})
    tag = data.get("label", "?")
    if fm.get("target_mask", TargetMask.WHOLE_WORD.value) != TargetMask.WHOLE_WORD.value:
        tag = f"{tag}_{fm['target_mask']}"
    if fm.get("mode") != FaultMode.BERNOULLI.value:
        raise PlotDataError(tag, "exact_k campaigns have no bit error rate to plot against")
    rate = float(fm["p"])
    if "mean" not in data or "ci_half_width" not in data:
        _add(series, tag, None, rate)
    else:
        _add(series, tag, CurvePoint(rate, float(data["mean"]), float(data["ci_half_width"])), rate)
    return series


def series_from_exploration(data: dict, pareto_only: bool = True, series: dict | None = None) -> dict:
    """Curves of an exploration document: Pareto members only, or every valid point."""
    series = {} if series is None else series
    settings = data["settings"]
    floors = settings["thresholds"]["rate_floors"]
    rates = sorted({float(f["rate"]) for f in floors} | {float(r) for r in settings["campaign"]["extra_rates"]})
    wanted = set(data["pareto"]) if pareto_only else None
    for point in data["points"]:
        if wanted is not None and point["grid_index"] not in wanted:
            continue
        if wanted is None and not point["valid"]:
            continue
        stats = {float(k): v for k, v in point["rates"].items()}
        for rate in rates:
            stat = stats.get(rate)
            value = None if stat is None else CurvePoint(rate, float(stat["mean"]), float(stat["ci_half_width"]))
            _add(series, point["label"], value, rate)
    return series


def read_result(path: str | os.PathLike) -> dict:
    """Read a campaign or exploration result written by this package."""
    try:
        data = read_json(path)
    except json.JSONDecodeError as exc:
        raise PlotDataError(str(path), f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    except UnicodeDecodeError:
        raise PlotDataError(str(path), "not a UTF-8 text file") from None
    if not isinstance(data, dict):
        raise PlotDataError(str(path), "expected a JSON object")
    return data


def collect_series(documents: Iterable[dict], pareto_only: bool = True) -> dict:
    series: dict = {}
    for index, doc in enumerate(documents):
        name = f"inputs[{index}]"
        if not isinstance(doc, dict):
            raise PlotDataError(name, "expected a JSON object")
        try:
            if "points" in doc and "settings" in doc:
                series_from_exploration(doc, pareto_only, series)
            elif "accuracies" in doc:
                series_from_campaign(doc, series)
            else:
                raise PlotDataError(name, "input is neither a campaign nor an exploration result")
        except KeyError as exc:
            raise PlotDataError(name, f"malformed result, missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError, AttributeError) as exc:
            raise PlotDataError(name, f"malformed result ({exc})") from None
    return series


def monotonicity_violations(tag: str, curve: Mapping[float, CurvePoint]) -> list[Violation]:
    points = [curve[r] for r in sorted(curve)]
    out = []
    for lo, hi in zip(points, points[1:]):
        rise = hi.mean - lo.mean
        if rise > lo.ci_half_width + hi.ci_half_width:
            out.append(Violation(tag, lo.rate, hi.rate, rise))
    return out


def emit_plot_data(series: Series, out_dir: str | os.PathLike, logger: Logger | None = None) -> PlotData:
    logger = logger or get_logger()
    out_dir = Path(out_dir)
    for tag, curve in series.items():
        if not curve:
            raise PlotDataError(tag, "no metrics recorded")
        for rate, point in curve.items():
            if point is None:
                raise PlotDataError(tag, f"missing metrics at rate {rate!r}")

    files, violations, combined = [], [], []
    for tag in sorted(series):
        curve = series[tag]
        rows = [(tag, p.rate, p.mean, p.ci_low, p.ci_high) for p in (curve[r] for r in sorted(curve))]
        files.append(write_csv(out_dir / f"curve_{tag}.csv", CURVE_COLUMNS, rows))
        combined += rows
        violations += monotonicity_violations(tag, curve)

    files.append(write_csv(out_dir / "curves.csv", CURVE_COLUMNS, combined))
    if not series:
        logger.warn("no curves to emit: the result set is empty")
    for v in violations:
        logger.warn(
            f"{v.tag}: accuracy rises by {v.rise:.4f} from rate {v.rate_low!r} to {v.rate_high!r}, "
            f"beyond the confidence intervals"
        )
    return PlotData(files, violations)
