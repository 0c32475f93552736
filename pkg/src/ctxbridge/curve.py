"""Quadratic Bezier curve in weight space with one trainable bend.

``phi(t) = (1-t)^2 * theta0 + 2t(1-t) * theta_b + t^2 * theta1``, t in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import ParamVector

__all__ = [
    "CurveModel",
    "NonFiniteLossError",
    "coefficients",
    "curve_point",
    "curve_grad_route",
    "bmc_step",
    "sample_model",
    "midpoint_curve",
]


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, t: float | None = None, step: int | None = None):
        super().__init__(message)
        self.t = t
        self.step = step


@dataclass
class CurveModel:
    theta0: ParamVector
    theta_b: ParamVector
    theta1: ParamVector
    endpoints_frozen: bool = False

    def __post_init__(self):
        if not (self.theta0.layout == self.theta_b.layout == self.theta1.layout):
            raise ValueError("curve control points must share one layout")

    @property
    def layout(self):
        return self.theta0.layout

    def trainable(self) -> dict[str, np.ndarray]:
        """Name -> values of the vectors the optimizer may touch."""
        if self.endpoints_frozen:
            return {"theta_b": self.theta_b.values}
        return {"theta0": self.theta0.values, "theta_b": self.theta_b.values, "theta1": self.theta1.values}

    def replace(self, **values: np.ndarray) -> "CurveModel":
        parts = {"theta0": self.theta0, "theta_b": self.theta_b, "theta1": self.theta1}
        for name, v in values.items():
            parts[name] = parts[name].with_values(v)
        return CurveModel(endpoints_frozen=self.endpoints_frozen, **parts)


def midpoint_curve(theta0: ParamVector, theta1: ParamVector, endpoints_frozen: bool = False) -> CurveModel:
    """Curve whose bend starts at the midpoint, i.e. a straight line."""
    bend = theta0.with_values(0.5 * (theta0.values + theta1.values))
    return CurveModel(theta0.copy(), bend, theta1.copy(), endpoints_frozen)


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise ValueError(f"curve parameter t={t} outside [0, 1]")
    return t


def coefficients(t: float) -> tuple[float, float, float]:
    """Bernstein basis (c0, cb, c1) at t."""
    t = _check_t(t)
    return (1.0 - t) ** 2, 2.0 * t * (1.0 - t), t * t


def curve_point(curve: CurveModel, t: float) -> ParamVector:
    t = _check_t(t)
    # exact endpoint copies; the weighted sum would reintroduce rounding
    if t == 0.0:
        return curve.theta0.copy()
    if t == 1.0:
        return curve.theta1.copy()
    c0, cb, c1 = coefficients(t)
    v = c0 * curve.theta0.values + cb * curve.theta_b.values + c1 * curve.theta1.values
    return curve.theta0.with_values(v)


def curve_grad_route(
    upstream: np.ndarray, t: float, endpoints_frozen: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain rule through the curve: grads for (theta0, theta_b, theta1)."""
    c0, cb, c1 = coefficients(t)
    upstream = np.asarray(upstream, dtype=np.float64)
    if endpoints_frozen:
        zero = np.zeros_like(upstream)
        return zero, cb * upstream, zero.copy()
    return c0 * upstream, cb * upstream, c1 * upstream


LossFn = Callable[[np.ndarray, tuple], tuple[float, np.ndarray]]


def bmc_step(curve: CurveModel, batch, t: float, loss_fn: LossFn, opt_state, step: int | None = None):
    """One Monte Carlo term of the curve objective: loss at phi(t), then one optimizer step.

    ``loss_fn(weights, batch)`` returns ``(loss, dloss/dweights)``.
    Returns ``(new_curve, loss)``.
    """
    from .training import sgd_step

    point = curve_point(curve, t)
    loss, g = loss_fn(point.values, batch)
    if not np.isfinite(loss) or not np.all(np.isfinite(g)):
        raise NonFiniteLossError(f"non-finite loss {loss} at t={t}, step {step}", t=t, step=step)
    g0, gb, g1 = curve_grad_route(g, t, curve.endpoints_frozen)
    grads = {"theta0": g0, "theta_b": gb, "theta1": g1}
    params = curve.trainable()
    updated = sgd_step(params, {k: grads[k] for k in params}, opt_state)
    return curve.replace(**updated), loss


def sample_model(curve: CurveModel, t: float) -> ParamVector:
    """Standalone weights for context t, detached from the curve."""
    return curve_point(curve, t)
