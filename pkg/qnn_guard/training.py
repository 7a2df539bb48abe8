"""Train small ReLU MLPs with torch and export them as qnn-guard models.

Initial weights and batch order depend only on the seed, so a network
trained twice from the same data and seed exports the same bundle.
"""

from __future__ import annotations

import torch
from stable_baselines3.common.logger import Logger
from torch import nn

from .constants import Activation
from .tensor import Dataset, Dense, Model, Tensor, evaluate

DEVICE = "cuda" if torch.cuda.is_available() else "cpu"


def build_mlp(in_features: int, hidden: int, n_classes: int, seed: int) -> nn.Sequential:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return nn.Sequential(
            nn.Flatten(), nn.Linear(in_features, hidden), nn.ReLU(), nn.Linear(hidden, n_classes)
        )


def to_bundle_model(net: nn.Sequential) -> Model:
    """Copy the ``nn.Linear`` layers into a float64 model; ReLU between them, none after the last."""
    linears = [m for m in net if isinstance(m, nn.Linear)]
    layers = []
    for index, lin in enumerate(linears):
        w = lin.weight.detach().cpu().double().numpy()
        b = lin.bias.detach().cpu().double().numpy()
        act = Activation.NONE if index == len(linears) - 1 else Activation.RELU
        layers.append(Dense(w.shape[1], w.shape[0], Tensor.from_array(w), Tensor.from_array(b), act))
    return Model(layers)


def fit(
    net: nn.Sequential,
    dataset: Dataset,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 128,
    eval_set: Dataset | None = None,
    logger: Logger | None = None,
    device: str = "cpu",
) -> nn.Sequential:
    """Adam on cross-entropy; logs ``train/loss`` (and ``eval/accuracy``) once per epoch."""
    x = torch.tensor(dataset.inputs.reshape(len(dataset), -1), dtype=torch.float32)
    y = torch.tensor(dataset.labels, dtype=torch.long)
    order_gen = torch.Generator().manual_seed(seed)

    net.to(device)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(epochs):
        net.train()
        order = torch.randperm(len(y), generator=order_gen)
        total = 0.0
        for start in range(0, len(y), batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            loss = loss_fn(net(x[idx].to(device)), y[idx].to(device))
            loss.backward()
            opt.step()
            total += float(loss) * len(idx)
        if logger is not None:
            logger.record("train/loss", total / len(y))
            if eval_set is not None:
                logger.record("eval/accuracy", evaluate(to_bundle_model(net), eval_set))
            logger.dump(step=epoch)
    net.eval()
    return net.cpu()
