"""Two-corruption planar weight model: ``w = w0 + t1*s*w1 + t2*s*w2`` over (t1, t2) in [0, 1]^2."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, TypeVar

import numpy as np

from .context import CorruptionSpec, corrupt
from .curve import NonFiniteLossError
from .data import Dataset
from .models import Network, ParamVector
from .training import OptimizerState, rng_stream, sgd_step

__all__ = [
    "PlanarModel",
    "GRID",
    "planar_weights",
    "planar_loss_and_grads",
    "planar_train_epoch",
    "planar_eval_grid",
    "early_stopping",
    "planar_train",
]

GRID = np.round(np.linspace(0.0, 1.0, 11), 10)
POINTS_PER_STEP = 50


@dataclass
class PlanarModel:
    w0: ParamVector
    w1: ParamVector
    w2: ParamVector
    s: float = 1.0

    def __post_init__(self):
        if not (self.w0.layout == self.w1.layout == self.w2.layout):
            raise ValueError("planar vectors must share one layout")
        self.s = float(self.s)

    @classmethod
    def from_base(cls, w0: ParamVector, s: float = 1.0) -> "PlanarModel":
        """Collapsed plane on the base weights: w1 = w2 = 0."""
        zero = w0.with_values(np.zeros(len(w0)))
        return cls(w0.copy(), zero, zero.copy(), s)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w0": self.w0.values, "w1": self.w1.values, "w2": self.w2.values, "s": np.array([self.s])}

    def replace(self, arrays: dict[str, np.ndarray]) -> "PlanarModel":
        return PlanarModel(
            self.w0.with_values(arrays["w0"]),
            self.w1.with_values(arrays["w1"]),
            self.w2.with_values(arrays["w2"]),
            float(arrays["s"][0]),
        )


def _check(t: float) -> float:
    t = float(t)
    if math.isnan(t) or not 0.0 <= t <= 1.0:
        raise ValueError(f"planar coordinate {t} outside [0, 1]")
    return t


def planar_weights(model: PlanarModel, t1: float, t2: float) -> ParamVector:
    t1, t2 = _check(t1), _check(t2)
    if t1 == 0.0 and t2 == 0.0:
        return model.w0.copy()
    v = model.w0.values + (t1 * model.s) * model.w1.values + (t2 * model.s) * model.w2.values
    return model.w0.with_values(v)


def planar_loss_and_grads(
    model: PlanarModel, net: Network, batches: list[tuple[float, float, np.ndarray, np.ndarray]]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over pre-corrupted ``(t1, t2, x, y)`` batches and its gradient w.r.t. (w0, w1, w2, s)."""
    grads = {k: np.zeros_like(v) for k, v in model.arrays().items()}
    total = 0.0
    for t1, t2, x, y in batches:
        loss, g = net.loss_and_grad(planar_weights(model, t1, t2).values, x, y)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss at (t1, t2)=({t1}, {t2})", t=(t1, t2))
        total += loss
        grads["w0"] += g
        grads["w1"] += (t1 * model.s) * g
        grads["w2"] += (t2 * model.s) * g
        grads["s"][0] += g @ (t1 * model.w1.values + t2 * model.w2.values)
    n = len(batches)
    return total / n, {k: v / n for k, v in grads.items()}


def planar_train_epoch(
    model: PlanarModel,
    net: Network,
    dataset: Dataset,
    corruption1: CorruptionSpec,
    corruption2: CorruptionSpec,
    opt_state: OptimizerState,
    rng: np.random.Generator,
    batch_size: int = 128,
    steps: int = 1,
    points: int = POINTS_PER_STEP,
) -> tuple[PlanarModel, float]:
    """``steps`` optimizer steps, each on the mean loss of ``points`` random corruption points.

    Every point gets a fresh minibatch, corrupted by ``corruption1`` at t1
    and then ``corruption2`` at t2.
    """
    losses = []
    for _ in range(steps):
        batches = []
        for _ in range(points):
            t1, t2 = rng.random(2)
            idx = rng.integers(0, len(dataset), size=min(batch_size, len(dataset)))
            x = corrupt(dataset.x[idx], t1, corruption1, rng)
            x = corrupt(x, t2, corruption2, rng)
            batches.append((float(t1), float(t2), x, dataset.y[idx]))
        loss, grads = planar_loss_and_grads(model, net, batches)
        model = model.replace(sgd_step(model.arrays(), grads, opt_state))
        losses.append(loss)
    return model, float(np.mean(losses))


def planar_eval_grid(
    model: PlanarModel,
    net: Network,
    dataset: Dataset,
    corruption1: CorruptionSpec,
    corruption2: CorruptionSpec,
    seed: int = 0,
    grid: np.ndarray = GRID,
) -> np.ndarray:
    """Accuracy at every (t1, t2) grid point; entry [i, j] is t1 = grid[i], t2 = grid[j].

    Each cell corrupts with its own generator derived from ``seed`` and the
    cell index, so results do not depend on evaluation order.
    """
    acc = np.zeros((len(grid), len(grid)))
    for i, t1 in enumerate(grid):
        for j, t2 in enumerate(grid):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), i, j]))
            x = corrupt(dataset.x, t1, corruption1, rng)
            x = corrupt(x, t2, corruption2, rng)
            w = planar_weights(model, t1, t2)
            acc[i, j] = float((net.predict(w, x) == dataset.y).mean())
    return acc


T = TypeVar("T")


def early_stopping(
    epoch_fn: Callable[[T], T], score_fn: Callable[[T], float], state: T, patience: int, max_epochs: int
) -> tuple[T, list[float]]:
    """Run epochs until the best score has not improved for ``patience`` epochs.

    Returns the earliest best-scoring state and the per-epoch scores.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    best, best_state, stale, scores = -math.inf, state, 0, []
    for _ in range(max_epochs):
        state = epoch_fn(state)
        score = score_fn(state)
        scores.append(score)
        if score > best:
            best, best_state, stale = score, state, 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best_state, scores


def planar_train(
    model: PlanarModel,
    net: Network,
    dataset: Dataset,
    eval_set: Dataset,
    corruptions: tuple[CorruptionSpec, CorruptionSpec],
    opt_state: OptimizerState,
    seed: int,
    patience: int = 20,
    max_epochs: int = 200,
    batch_size: int = 128,
    steps_per_epoch: int = 1,
    points: int = POINTS_PER_STEP,
) -> tuple[PlanarModel, list[dict]]:
    """Train with early stopping on the mean 11x11 grid accuracy of ``eval_set``."""
    rng = rng_stream(seed, "planar-train")
    c1, c2 = corruptions
    history: list[dict] = []

    def epoch_fn(m):
        m, loss = planar_train_epoch(m, net, dataset, c1, c2, opt_state, rng, batch_size, steps_per_epoch, points)
        history.append({"epoch": len(history), "loss": loss})
        return m

    def score_fn(m):
        score = float(planar_eval_grid(m, net, eval_set, c1, c2, seed=seed).mean())
        history[-1]["mean_grid_accuracy"] = score
        return score

    best, _ = early_stopping(epoch_fn, score_fn, model, patience, max_epochs)
    return best, history
