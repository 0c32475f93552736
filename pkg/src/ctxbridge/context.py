"""The three readings of the context parameter t.

* risk profile: the loss up-weights the class whose bin contains t;
* long-tail corruption: inputs are corrupted with severity t;
* contextual shift: minibatch labels are drawn from a t-dependent prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

__all__ = [
    "RiskProfile",
    "CorruptionSpec",
    "ShiftSpec",
    "ContextSpec",
    "favored_class",
    "alpha",
    "class_weights",
    "weighted_ce_loss",
    "corrupt",
    "class_distribution",
    "raw_class_weights",
    "sample_contextual_batch",
    "context_from_dict",
]


@dataclass(frozen=True)
class RiskProfile:
    beta: float
    num_classes: int
    kind: Literal["risk"] = "risk"

    def __post_init__(self):
        if not self.beta >= 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")


@dataclass(frozen=True)
class CorruptionSpec:
    """``gaussian-noise``: sigma = gamma * t.  ``contrast``: shrink toward the mean by gamma * t (gamma <= 1)."""

    corruption: Literal["gaussian-noise", "contrast"]
    gamma: float = 1.0
    stream: int = 0
    kind: Literal["corruption"] = "corruption"

    def __post_init__(self):
        if self.corruption not in ("gaussian-noise", "contrast"):
            raise ValueError(f"unknown corruption {self.corruption!r}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.corruption == "contrast" and self.gamma > 1:
            raise ValueError("contrast gamma must be <= 1 (gamma * t is the fraction of contrast removed)")


@dataclass(frozen=True)
class ShiftSpec:
    num_classes: int
    kind: Literal["shift"] = "shift"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("label shift needs at least 2 classes")


ContextSpec = Union[RiskProfile, CorruptionSpec, ShiftSpec]


def context_from_dict(d: dict) -> ContextSpec:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "risk":
        return RiskProfile(float(d["beta"]), int(d["num_classes"]))
    if kind == "corruption":
        return CorruptionSpec(d["corruption"], float(d.get("gamma", 1.0)), int(d.get("stream", 0)))
    if kind == "shift":
        return ShiftSpec(int(d["num_classes"]))
    raise ValueError(f"unknown context kind {kind!r}")


def _check_t(t: float) -> float:
    t = float(t)
    if math.isnan(t) or not 0.0 <= t <= 1.0:
        raise ValueError(f"context t={t} outside [0, 1]")
    return t


# -- risk profile ----------------------------------------------------------


def favored_class(t: float, num_classes: int) -> int:
    """Bin index floor(t * K), with t = 1 folded into the last bin."""
    t = _check_t(t)
    return min(int(math.floor(t * num_classes)), num_classes - 1)


def alpha(t: float, k: int, profile: RiskProfile) -> float:
    return float(profile.beta) if k == favored_class(t, profile.num_classes) else 1.0


def class_weights(t: float, labels: np.ndarray, profile: RiskProfile) -> np.ndarray:
    """Per-sample alpha(t, y_i)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= profile.num_classes):
        raise ValueError(f"labels must lie in [0, {profile.num_classes})")
    return np.where(labels == favored_class(t, profile.num_classes), float(profile.beta), 1.0)


def weighted_ce_loss(logits: np.ndarray, labels: np.ndarray, t: float, profile: RiskProfile) -> float:
    """Batch mean of alpha(t, y_i) * -log softmax(logits_i)[y_i]."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != profile.num_classes:
        raise ValueError(f"logits {logits.shape} do not match {profile.num_classes} classes")
    w = class_weights(t, labels, profile)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(w * logp[np.arange(labels.size), labels]).sum() / labels.size)


# -- corruption ------------------------------------------------------------


def corrupt(x: np.ndarray, t: float, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply the corruption at severity t. t = 0 (or gamma = 0) returns an exact copy and draws nothing."""
    t = _check_t(t)
    x = np.asarray(x, dtype=np.float64)
    severity = spec.gamma * t
    if severity == 0.0:
        return x.copy()
    if spec.corruption == "gaussian-noise":
        return x + rng.normal(0.0, severity, size=x.shape)
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    return mu + (1.0 - severity) * (x - mu)


# -- contextual label shift -------------------------------------------------


def raw_class_weights(t: float, num_classes: int) -> np.ndarray:
    """Unnormalized (1 - 2t)(c - N/2)/N + 1/2 for c = 0..N-1."""
    t = _check_t(t)
    c = np.arange(num_classes, dtype=np.float64)
    return (1.0 - 2.0 * t) * (c - 0.5 * num_classes) / num_classes + 0.5


def class_distribution(t: float, spec: ShiftSpec) -> np.ndarray:
    raw = raw_class_weights(t, spec.num_classes)
    return raw / raw.sum()


def sample_contextual_batch(dataset, t: float, spec: ShiftSpec, batch_size: int, rng: np.random.Generator):
    """Draw labels from P(Y|t), then one uniformly chosen sample of each drawn label.

    Returns ``(x, y)``.
    """
    p = class_distribution(t, spec)
    index_sets = dataset.class_indices()
    for c in np.flatnonzero(p > 0):
        if c >= len(index_sets) or index_sets[c].size == 0:
            raise ValueError(f"class {c} has probability {p[c]:.3g} at t={t} but no samples in the dataset")
    if batch_size == 0:
        return dataset.x[:0].copy(), np.zeros(0, dtype=np.int64)
    labels = rng.choice(spec.num_classes, size=batch_size, p=p)
    picks = np.empty(batch_size, dtype=np.int64)
    for c in np.unique(labels):
        sel = labels == c
        picks[sel] = index_sets[c][rng.integers(0, index_sets[c].size, size=int(sel.sum()))]
    return dataset.x[picks], dataset.y[picks]
