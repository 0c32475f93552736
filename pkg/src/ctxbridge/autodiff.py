"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Tape` records every operation applied to the tensors it created.
``tape.backward(loss)`` walks the record in reverse and returns one gradient
per trainable leaf, in the order the leaves were created.

    tape = Tape()
    w = tape.leaf(np.ones(3), trainable=True)
    loss = tape.sum(tape.mul(w, w))
    (grad,) = tape.backward(loss)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Raised when an op receives inputs of incompatible shape."""


class Tensor:
    """Immutable float64 array bound to the tape that produced it."""

    __slots__ = ("data", "tape", "index")

    def __init__(self, data: np.ndarray, tape: "Tape", index: int):
        data = np.asarray(data, dtype=np.float64)
        data.flags.writeable = False
        self.data = data
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.index})"


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    # maps upstream grad -> grads for each input (None where no grad flows)
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    trainable: bool = False


@dataclass
class Tape:
    """Ordered record of operations. Inputs of a node always precede it."""

    nodes: list[_Node] = field(default_factory=list)
    values: list[Tensor] = field(default_factory=list)

    # -- recording -------------------------------------------------------
    def _record(self, op, data, inputs=(), vjp=None, trainable=False) -> Tensor:
        for t in inputs:
            if t.tape is not self:
                raise ValueError(f"{op}: input tensor belongs to a different tape")
        idx = len(self.nodes)
        self.nodes.append(_Node(op, tuple(t.index for t in inputs), vjp, trainable))
        out = Tensor(data, self, idx)
        self.values.append(out)
        return out

    def leaf(self, data, trainable: bool = False) -> Tensor:
        return self._record("leaf", np.array(data, dtype=np.float64), trainable=trainable)

    def constant(self, data) -> Tensor:
        return self.leaf(data, trainable=False)

    @property
    def trainable_leaves(self) -> list[Tensor]:
        return [self.values[i] for i, n in enumerate(self.nodes) if n.trainable]

    # -- elementwise -----------------------------------------------------
    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum with numpy broadcasting (used for bias terms)."""
        try:
            out = a.data + b.data
        except ValueError:
            raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._record("add", out, (a, b), vjp)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
        ad, bd = a.data, b.data
        return self._record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))

    def scale(self, a: Tensor, factor: float) -> Tensor:
        factor = float(factor)
        return self._record("scale", a.data * factor, (a,), lambda g: (g * factor,))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0
        return self._record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def sum(self, a: Tensor) -> Tensor:
        shape = a.shape
        return self._record(
            "sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
        )

    # -- shape plumbing --------------------------------------------------
    def reshape(self, a: Tensor, shape: Sequence[int]) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != a.data.size:
            raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
        src = a.shape
        return self._record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))

    def flatten(self, a: Tensor) -> Tensor:
        """Collapse every axis after the first (batch) axis."""
        if a.data.ndim < 1:
            raise ShapeError("flatten: needs at least one axis")
        return self.reshape(a, (a.shape[0], int(np.prod(a.shape[1:]))))

    def slice(self, a: Tensor, start: int, stop: int) -> Tensor:
        """Contiguous segment of a 1-D tensor."""
        if a.data.ndim != 1 or not 0 <= start <= stop <= a.shape[0]:
            raise ShapeError(f"slice: [{start}:{stop}] invalid for shape {a.shape}")
        n = a.shape[0]

        def vjp(g):
            full = np.zeros(n)
            full[start:stop] = g
            return (full,)

        return self._record("slice", a.data[start:stop], (a,), vjp)

    # -- linear algebra --------------------------------------------------
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
        ad, bd = a.data, b.data
        return self._record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))

    def conv2d(self, x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
        """Cross-correlation of (N, C, H, W) input with (O, C, kh, kw) kernels."""
        if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
        if stride < 1 or pad < 0:
            raise ShapeError(f"conv2d: bad stride={stride} / pad={pad}")
        n, c, h, wd = x.shape
        _, _, kh, kw = w.shape
        hp, wp = h + 2 * pad, wd + 2 * pad
        if hp < kh or wp < kw:
            raise ShapeError(f"conv2d: padded input {(hp, wp)} smaller than kernel {(kh, kw)}")
        oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1

        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        s = xp.strides
        cols = as_strided(
            xp,
            shape=(n, c, kh, kw, oh, ow),
            strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
            writeable=False,
        )
        wdat = w.data
        out = np.einsum("ncklij,ockl->noij", cols, wdat, optimize=True)

        def vjp(g):
            gw = np.einsum("ncklij,noij->ockl", cols, g, optimize=True)
            gcols = np.einsum("ockl,noij->ncklij", wdat, g, optimize=True)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride] += gcols[
                        :, :, di, dj
                    ]
            return gxp[:, :, pad : pad + h, pad : pad + wd], gw

        return self._record("conv2d", out, (x, w), vjp)

    def max_pool2d(self, x: Tensor, k: int) -> Tensor:
        """Non-overlapping k x k max pooling; trailing rows/cols that do not fill a window are dropped."""
        if x.data.ndim != 4 or x.shape[2] < k or x.shape[3] < k:
            raise ShapeError(f"max_pool2d: input {x.shape} too small for k={k}")
        n, c, h, w = x.shape
        oh, ow = h // k, w // k
        win = x.data[:, :, : oh * k, : ow * k].reshape(n, c, oh, k, ow, k)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

        def vjp(g):
            gwin = np.zeros((n, c, oh, ow, k * k))
            np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
            gwin = gwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
            gx = np.zeros((n, c, h, w))
            gx[:, :, : oh * k, : ow * k] = gwin.reshape(n, c, oh * k, ow * k)
            return (gx,)

        return self._record("max_pool2d", out, (x,), vjp)

    # -- losses ----------------------------------------------------------
    def log_softmax(self, a: Tensor) -> Tensor:
        """Row-wise log-softmax of a (batch, classes) tensor."""
        if a.data.ndim != 2:
            raise ShapeError(f"log_softmax: expects (batch, classes), got {a.shape}")
        z = a.data - a.data.max(axis=1, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(out)
        return self._record(
            "log_softmax", out, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),)
        )

    def nll(self, logp: Tensor, labels, weights=None) -> Tensor:
        """Mean over the batch of ``-weights[i] * logp[i, labels[i]]``."""
        labels = np.asarray(labels, dtype=np.int64)
        if logp.data.ndim != 2 or labels.shape != (logp.shape[0],):
            raise ShapeError(f"nll: log-probs {logp.shape} vs labels {labels.shape}")
        b, k = logp.shape
        if b == 0:
            raise ShapeError("nll: empty batch")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"nll: labels must lie in [0, {k})")
        wts = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
        if wts.shape != (b,):
            raise ShapeError(f"nll: weights {wts.shape} vs batch {b}")
        rows = np.arange(b)
        out = -(wts * logp.data[rows, labels]).sum() / b

        def vjp(g):
            gl = np.zeros((b, k))
            gl[rows, labels] = -wts * (float(g) / b)
            return (gl,)

        return self._record("nll", np.array(out), (logp,), vjp)

    # -- reverse pass ----------------------------------------------------
    def backward(self, loss: Tensor) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` w.r.t. every trainable leaf, in creation order."""
        if loss.tape is not self:
            raise ValueError("backward: loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
        for idx in range(loss.index, -1, -1):
            g = grads.get(idx)
            node = self.nodes[idx]
            if g is None or node.vjp is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if src in grads:
                    grads[src] = grads[src] + gi
                else:
                    grads[src] = gi
        out = []
        for i, node in enumerate(self.nodes):
            if node.trainable:
                g = grads.get(i)
                shape = self.values[i].shape
                out.append(np.zeros(shape) if g is None else np.asarray(g, dtype=np.float64).reshape(shape))
        return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-5,
    mask: np.ndarray | None = None,
) -> float:
    """Max over coordinates of ``|analytic - central difference| / max(1, |analytic|)``.

    ``mask`` selects the coordinates to check; callers use it to drop points
    sitting on a relu or max-pool kink, where the derivative is undefined.
    """
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(params.shape)
    flat = params.ravel()
    keep = np.ones(flat.size, bool) if mask is None else np.asarray(mask, bool).ravel()
    worst = 0.0
    for i in np.flatnonzero(keep):
        hi, lo = flat.copy(), flat.copy()
        hi[i] += step
        lo[i] -= step
        numeric = (f(hi.reshape(params.shape)) - f(lo.reshape(params.shape))) / (2 * step)
        a = analytic.ravel()[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
