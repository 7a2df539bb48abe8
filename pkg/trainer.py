"""Train the 784-64-10 MNIST desk MLP and export it as a qnn-guard bundle.

Use the ``start`` subcommand to train from IDX files and ``resume`` to
continue from a checkpoint. Both write ``<stem>-model.json`` and
``<stem>-weights.bin`` so the weights can be pinned and reused by every
``qnn-guard`` command. ``--seed`` fixes the initial weights and the batch
order, so the same data and seed give the same bundle.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import torch
from torch import nn

from qnn_guard.bundle import load_dataset, save_model_json, save_weights
from qnn_guard.logs import configure_run_logger
from qnn_guard.tensor import Model, evaluate
from qnn_guard.training import DEVICE, build_mlp, fit, to_bundle_model

HIDDEN = 64
BATCH_SIZE = 128
LEARNING_RATE = 1e-3


# ─────────────────────────────────────────────────────────────────────────────
# helpers
# ─────────────────────────────────────────────────────────────────────────────

def export(net: nn.Sequential, out_dir: Path, stem: str) -> Model:
    model = to_bundle_model(net)
    save_model_json(model, out_dir / f"{stem}-model.json")
    save_weights(model, out_dir / f"{stem}-weights.bin")
    return model


# ─────────────────────────────────────────────────────────────────────────────
# command implementations
# ─────────────────────────────────────────────────────────────────────────────

def train(net: nn.Sequential, args: argparse.Namespace) -> None:
    train_set = load_dataset(args.train_images, args.train_labels, 10)
    test_set = load_dataset(args.test_images, args.test_labels, 10)
    logger = configure_run_logger("logs", formats=("stdout", "csv"), tensorboard=True)
    fit(net, train_set, args.epochs, args.seed, LEARNING_RATE, BATCH_SIZE, test_set, logger, DEVICE)
    logger.close()

    args.out.mkdir(parents=True, exist_ok=True)
    torch.save(net.state_dict(), args.out / f"{args.stem}.pt")
    model = export(net, args.out, args.stem)
    print(f"✅  Training finished – test accuracy {evaluate(model, test_set):.4f}")
    print(f"   Bundle written to {args.out}/{args.stem}-model.json")


def start_cmd(args: argparse.Namespace) -> None:
    """Train a fresh network for ``args.epochs`` epochs."""
    train(build_mlp(784, HIDDEN, 10, args.seed), args)


def resume_cmd(args: argparse.Namespace) -> None:
    """Continue training from ``<out>/<stem>.pt``."""
    ckpt = args.out / f"{args.stem}.pt"
    if not ckpt.exists():
        raise SystemExit(f"Checkpoint {ckpt} not found. Run start first.")
    net = build_mlp(784, HIDDEN, 10, args.seed)
    net.load_state_dict(torch.load(ckpt, map_location="cpu"))
    train(net, args)


# ─────────────────────────────────────────────────────────────────────────────
# CLI setup
# ─────────────────────────────────────────────────────────────────────────────

common = argparse.ArgumentParser(add_help=False)
common.add_argument("--data", type=Path, default=Path("mnist"), help="Folder with the MNIST IDX files")
common.add_argument("--epochs", type=int, default=5, help="Epochs to train (default: 5)")
common.add_argument("--seed", type=int, default=0, help="Torch seed (default: 0)")
common.add_argument("--out", type=Path, default=Path("mnist"), help="Bundle output folder")
common.add_argument("--stem", default="mnist", help="Bundle file prefix (default: mnist)")

parser = argparse.ArgumentParser(description="Desk MLP trainer")
subparsers = parser.add_subparsers(dest="command", required=True)

start_parser = subparsers.add_parser("start", help="Start a new training run", parents=[common])
start_parser.set_defaults(func=start_cmd)

resume_parser = subparsers.add_parser("resume", help="Resume from a checkpoint", parents=[common])
resume_parser.set_defaults(func=resume_cmd)


if __name__ == "__main__":
    args = parser.parse_args()
    args.train_images = args.data / "train-images-idx3-ubyte"
    args.train_labels = args.data / "train-labels-idx1-ubyte"
    args.test_images = args.data / "t10k-images-idx3-ubyte"
    args.test_labels = args.data / "t10k-labels-idx1-ubyte"
    args.func(args)
