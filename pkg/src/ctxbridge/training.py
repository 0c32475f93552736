"""SGD with (Nesterov) momentum, learning-rate schedules, and the training loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .context import (
    ContextSpec,
    CorruptionSpec,
    RiskProfile,
    ShiftSpec,
    class_weights,
    corrupt,
    sample_contextual_batch,
)
from .curve import CurveModel, bmc_step
from .data import Dataset, augment
from .models import Network, ParamVector

__all__ = [
    "OptimizerState",
    "TrainConfig",
    "sgd_step",
    "cosine_lr",
    "bmc_lr",
    "rng_stream",
    "minibatches",
    "pretrain_endpoint",
    "train_bmc",
    "accuracy",
]


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState) -> dict[str, np.ndarray]:
    """One SGD step over named vectors; mutates ``state.velocity`` and returns new arrays."""
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"{name}: non-finite gradient")
        if state.weight_decay:
            g = g + state.weight_decay * p
        if state.momentum:
            v = state.velocity.get(name)
            v = g.copy() if v is None else state.momentum * v + g
            state.velocity[name] = v
            update = g + state.momentum * v if state.nesterov else v
        else:
            update = g
        out[name] = p - state.lr * update if state.lr else p.copy()
    return out


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def bmc_lr(progress: float, r: float) -> float:
    """Piecewise curve-training schedule; ``progress`` is the fraction of training completed."""
    if progress <= 0.5:
        return r
    if progress <= 0.9:
        return (1.0 - (progress - 0.5) * 2.5 * 0.99) * r
    return 0.01 * r


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, purpose); streams never share draws."""
    key = [ord(ch) for ch in name]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *key]))


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def accuracy(net: Network, params, x: np.ndarray, y: np.ndarray) -> float:
    if y.size == 0:
        return float("nan")
    return float((net.predict(params, x) == y).mean())


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    augment: bool = True
    seed: int = 0

    def optimizer(self, lr: float | None = None) -> OptimizerState:
        return OptimizerState(self.lr if lr is None else lr, self.momentum, self.weight_decay, self.nesterov)


def pretrain_endpoint(
    net: Network, dataset: Dataset, config: TrainConfig, init: ParamVector | None = None, history: list | None = None
) -> ParamVector:
    """Plain cross-entropy training with a per-epoch cosine schedule."""
    params = net.init_params(config.seed) if init is None else init.copy()
    batch_rng = rng_stream(config.seed, "pretrain-batches")
    aug_rng = rng_stream(config.seed, "pretrain-augment")
    state = config.optimizer()
    w = params.values
    for epoch in range(config.epochs):
        state.lr = cosine_lr(epoch, config.epochs, config.lr)
        losses = []
        for idx in minibatches(len(dataset), config.batch_size, batch_rng):
            x, y = dataset.x[idx], dataset.y[idx]
            if config.augment and dataset.is_image:
                x = augment(x, aug_rng)
            loss, g = net.loss_and_grad(w, x, y)
            w = sgd_step({"w": w}, {"w": g}, state)["w"]
            losses.append(loss)
        if history is not None:
            history.append({"epoch": epoch, "lr": state.lr, "loss": float(np.mean(losses))})
    return params.with_values(w)


def train_bmc(
    curve: CurveModel,
    net: Network,
    dataset: Dataset,
    context: ContextSpec | None,
    config: TrainConfig,
) -> tuple[CurveModel, list[dict]]:
    """Train the curve with one t ~ U(0, 1) per minibatch.

    ``context`` picks what t means for each step: a :class:`RiskProfile`
    reweights the loss, a :class:`CorruptionSpec` corrupts the batch at
    severity t, a :class:`ShiftSpec` draws the batch from P(Y|t). ``None``
    trains a plain curve.
    """
    t_rng = rng_stream(config.seed, "bmc-t")
    batch_rng = rng_stream(config.seed, "bmc-batches")
    aug_rng = rng_stream(config.seed, "bmc-augment")
    corrupt_rng = None
    if isinstance(context, CorruptionSpec):
        corrupt_rng = rng_stream(config.seed, f"corrupt-{context.stream}")
    state = config.optimizer()
    steps = math.ceil(len(dataset) / config.batch_size)
    history = []
    step = 0
    for epoch in range(config.epochs):
        state.lr = bmc_lr(epoch / config.epochs, config.lr)
        if isinstance(context, ShiftSpec):
            batches = (None for _ in range(steps))
        else:
            batches = minibatches(len(dataset), config.batch_size, batch_rng)
        losses = []
        for idx in batches:
            t = float(t_rng.random())
            if idx is None:
                x, y = sample_contextual_batch(dataset, t, context, config.batch_size, batch_rng)
            else:
                x, y = dataset.x[idx], dataset.y[idx]
            if config.augment and dataset.is_image:
                x = augment(x, aug_rng)
            if corrupt_rng is not None:
                x = corrupt(x, t, context, corrupt_rng)
            weights = class_weights(t, y, context) if isinstance(context, RiskProfile) else None

            def loss_fn(w, batch, weights=weights):
                return net.loss_and_grad(w, batch[0], batch[1], weights)

            curve, loss = bmc_step(curve, (x, y), t, loss_fn, state, step=step)
            losses.append(loss)
            step += 1
        history.append({"epoch": epoch, "lr": state.lr, "loss": float(np.mean(losses))})
    return curve, history
