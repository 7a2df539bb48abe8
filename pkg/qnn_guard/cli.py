"""Command-line entry point: ``qnn-guard <command> --config cfg.json --out dir``.

Exit codes: 0 on success, 1 for a failed run, 2 for usage errors and 3 for an
invalid configuration. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable

from stable_baselines3.common.logger import Logger

from . import __version__
from .artifacts import write_csv, write_json
from .bundle import save_bundle
from .config import load_config, resolve_jobs
from .errors import ConfigError, QnnGuardError
from .explorer import explore, write_exploration_json, write_pareto_json, write_report_csv
from .faultsim import CSV_COLUMNS, bit_sensitivity, count_flips, inject, run_campaign
from .logs import configure_run_logger
from .manifest import RunManifest, config_hash, utc_now, write_manifest
from .plotdata import collect_series, emit_plot_data, read_result, series_from_exploration
from .quantizer import dequantize_model, quantize_model, reconstruction_error, save_quantized
from .synthetic import DESK_SEED, make_desk, make_trained_desk
from .tensor import evaluate
from .wordpack import decode_cost, footprint, load_image, protect, save_image

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3

# handler(args) -> (written paths, master seed, hashed config payload)
Result = tuple[list[Path], "int | None", object]


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {text}")
    return value


def _run_logger(args: argparse.Namespace) -> Logger:
    return configure_run_logger(args.log_dir, tensorboard=args.tensorboard)


def _payload(args: argparse.Namespace, raw: dict, seed: int | None) -> dict:
    return {"command": args.command, "config": raw, "seed": seed}


# ─────────────────────────────────────────────────────────────────────────────
# subcommands
# ─────────────────────────────────────────────────────────────────────────────

def make_desk_cmd(args: argparse.Namespace) -> Result:
    seed = DESK_SEED if args.seed is None else args.seed
    build = make_trained_desk if args.model == "trained" else make_desk
    model, dataset = build(seed, args.per_class)
    paths = save_bundle(model, dataset, args.out)
    print(f"desk benchmark: {len(dataset)} samples, float accuracy {evaluate(model, dataset):.4f}")
    return list(paths.values()), seed, {"command": args.command, "seed": seed, "per_class": args.per_class, "model": args.model}


def quantize_cmd(args: argparse.Namespace) -> Result:
    cfg, raw = load_config("quantize", args.config, args.seed)
    model, dataset = cfg.bundle.load()
    qmodel = quantize_model(model, cfg.spec)
    header, blob = save_quantized(qmodel, args.out / "quantized.json")
    errors = [
        reconstruction_error(w, q, s) for w, q, s in zip(model.weight_tensors(), qmodel.q, qmodel.scales)
    ]
    float_acc = evaluate(model, dataset)
    quant_acc = evaluate(dequantize_model(qmodel), dataset)
    summary = write_json(args.out / "quantize_report.json", {
        "bitwidth": cfg.spec.bitwidth,
        "n_params": qmodel.n_params,
        "scales": [float(s) for s in qmodel.scales],
        "reconstruction": [{"max_abs": mx, "mean_abs": mean} for mx, mean in errors],
        "float_accuracy": float_acc,
        "quantized_accuracy": quant_acc,
    })
    print(f"{cfg.spec.bitwidth}-bit: accuracy {quant_acc:.4f} (float {float_acc:.4f})")
    return [header, blob, summary], None, _payload(args, raw, None)


def protect_cmd(args: argparse.Namespace) -> Result:
    cfg, raw = load_config("protect", args.config, args.seed)
    model, dataset = cfg.bundle.load()
    image = protect(model, cfg.layout)
    header, blob = save_image(image, args.out / "protected.json")
    fp = footprint(cfg.layout, image.n_params)
    clean = evaluate(image.restore()[0], dataset)
    summary = write_json(args.out / "protect_report.json", {
        "label": cfg.layout.label,
        "layout": cfg.layout.to_dict(),
        "n_params": image.n_params,
        "bits_per_param": fp.bits_per_param,
        "overhead_fraction": fp.overhead_fraction,
        "total_bits": fp.total_bits,
        "decode_cost": decode_cost(cfg.layout),
        "clean_accuracy": clean,
    })
    print(f"{cfg.layout.label}: {fp.bits_per_param} bits/param ({fp.overhead_fraction:+.2%}), accuracy {clean:.4f}")
    return [header, blob, summary], None, _payload(args, raw, None)


def inject_cmd(args: argparse.Namespace) -> Result:
    cfg, raw = load_config("inject", args.config, args.seed)
    model, dataset = cfg.bundle.load()
    image = load_image(cfg.image, model)
    faulted = inject(image.words, image.layout, cfg.fault_model, cfg.run_index)
    faulty_model, corrections = image.restore(faulted)
    header, blob = save_image(image, args.out / "faulted.json", faulted)
    flips = count_flips(image.words, faulted)
    accuracy = evaluate(faulty_model, dataset)
    summary = write_json(args.out / "inject_report.json", {
        "label": image.layout.label,
        "fault_model": cfg.fault_model.to_dict(),
        "run_index": cfg.run_index,
        "flips": flips,
        "corrections": corrections,
        "clean_accuracy": evaluate(image.restore()[0], dataset),
        "accuracy": accuracy,
    })
    print(f"{flips} bits flipped, {corrections} words corrected, accuracy {accuracy:.4f}")
    seed = cfg.fault_model.master_seed
    return [header, blob, summary], seed, _payload(args, raw, seed)


def campaign_cmd(args: argparse.Namespace) -> Result:
    cfg, raw = load_config("campaign", args.config, args.seed)
    jobs = resolve_jobs(args.jobs)
    model, dataset = cfg.bundle.load()
    logger = _run_logger(args)
    image = protect(model, cfg.layout)
    result = run_campaign(image, None, cfg.campaign, dataset, jobs, logger)
    outputs = [
        write_json(args.out / "campaign.json", result.to_dict()),
        write_csv(args.out / "campaign.csv", CSV_COLUMNS, result.csv_rows()),
    ]
    fm = cfg.campaign.fault_model
    if cfg.bit_sensitivity:
        per_bit = bit_sensitivity(image, dataset, fm.p, cfg.campaign.n_runs, fm.master_seed,
                                  cfg.campaign.eval_subset_size, jobs)
        outputs.append(write_csv(
            args.out / "bit_sensitivity.csv",
            ("bit", "mean_accuracy", "ci_half_width", "accuracy_drop"),
            [(s.bit, s.mean, s.ci_half_width, s.accuracy_drop) for s in per_bit],
        ))
    logger.close()
    print(f"{result.label}: {result.mean:.4f} ± {result.ci_half_width:.4f} (clean {result.clean_accuracy:.4f})")
    return outputs, fm.master_seed, _payload(args, raw, fm.master_seed)


def explore_cmd(args: argparse.Namespace) -> Result:
    cfg, raw = load_config("explore", args.config, args.seed)
    jobs = resolve_jobs(args.jobs)
    model, dataset = cfg.bundle.load()
    logger = _run_logger(args)
    exploration = explore(cfg.settings, model, dataset, jobs, logger)
    outputs = [
        write_report_csv(exploration, args.out / "report.csv"),
        write_pareto_json(exploration, args.out / "pareto.json"),
        write_exploration_json(exploration, args.out / "exploration.json"),
    ]
    plots = emit_plot_data(series_from_exploration(exploration.to_dict()), args.out / "curves", logger)
    outputs += plots.files
    logger.close()
    print(f"{len(exploration.points)} points, {len(exploration.front)} on the Pareto front")
    seed = cfg.settings.campaign.master_seed
    return outputs, seed, _payload(args, raw, seed)


def report_cmd(args: argparse.Namespace) -> Result:
    cfg, raw = load_config("report", args.config, args.seed)
    documents = [read_result(p) for p in cfg.inputs]
    plots = emit_plot_data(collect_series(documents, cfg.pareto_only), args.out)
    outputs = plots.files + [
        write_json(args.out / "violations.json", [v.to_dict() for v in plots.violations]),
    ]
    print(f"{len(plots.files) - 1} curves, {len(plots.violations)} monotonicity violations")
    return outputs, None, _payload(args, raw, None)


# ─────────────────────────────────────────────────────────────────────────────
# CLI setup
# ─────────────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, help="Master seed; overrides the config value")
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory (default: out)")
    common.add_argument("--jobs", type=int, help="Worker processes (default: $QNN_GUARD_JOBS or 1)")
    common.add_argument("--log-dir", type=Path, default=Path("logs"), help="Run log root (default: logs)")
    common.add_argument("--tensorboard", action="store_true", help="Also log metrics to tensorboard")

    configured = argparse.ArgumentParser(add_help=False, parents=[common])
    configured.add_argument("-c", "--config", type=Path, required=True, help="JSON run configuration")

    parser = argparse.ArgumentParser(prog="qnn-guard", description="Quantize, protect and fault-test neural network weights")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    commands: list[tuple[str, str, Callable]] = [
        ("quantize", "Post-training weight quantization", quantize_cmd),
        ("protect", "Pack quantized weights with MSB copies", protect_cmd),
        ("inject", "One seeded fault injection into a protected image", inject_cmd),
        ("campaign", "Repeated fault injection with accuracy statistics", campaign_cmd),
        ("explore", "Design-space exploration and Pareto front", explore_cmd),
        ("report", "Plot series from campaign or exploration results", report_cmd),
    ]
    for name, help_text, func in commands:
        sub = subparsers.add_parser(name, help=help_text, parents=[configured])
        sub.set_defaults(func=func)

    desk = subparsers.add_parser("make-desk", help="Write the synthetic desk benchmark bundle", parents=[common])
    desk.add_argument("--per-class", type=int, default=20, help="Samples per class (default: 20)")
    desk.add_argument("--model", choices=("template", "trained"), default="template",
                      help="Closed-form template matcher or the seed-trained MLP (default: template)")
    desk.set_defaults(func=make_desk_cmd)
    return parser


def _fail(exc: BaseException, kind: str, field: str | None, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc), "field": field}), file=sys.stderr)
    return code


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    started = utc_now()
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        outputs, seed, payload = args.func(args)
        manifest = RunManifest(
            tool_version=__version__,
            command=args.command,
            config_hash=config_hash(payload),
            master_seed=seed,
            started_at=started,
            finished_at=utc_now(),
            outputs=sorted(Path(p).relative_to(args.out).as_posix() for p in outputs),
            config=payload,
        )
        write_manifest(manifest, args.out)
    except ConfigError as exc:
        return _fail(exc, exc.kind, exc.field, EXIT_CONFIG)
    except QnnGuardError as exc:
        return _fail(exc, exc.kind, None, EXIT_FAILED)
    except OSError as exc:
        return _fail(exc, "io_error", None, EXIT_FAILED)
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
