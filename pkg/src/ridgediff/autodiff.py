"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the denoiser needs are provided: 3x3 and 1x1
convolutions, 2x average pooling, 2x nearest upsampling, per-sample group
normalization, SiLU, dense layers, broadcast additions and mean squared
error.  Activations use NHWC layout.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Array value plus an optional gradient and the closure that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed once propagated
                if node._parents:
                    node.grad = None

    def __add__(self, other):
        return add(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _make(data, parents, backward):
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _rowsum(a: np.ndarray) -> np.ndarray:
    """Sum over the second-to-last axis; a BLAS product beats ``ndarray.sum`` here."""
    return np.ones(a.shape[-2], dtype=a.dtype) @ a


# --------------------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=keep, keepdims=True) if keep else g


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def silu(x):
    x = _wrap(x)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def backward(g):
        x._accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return _make(out, (x,), backward)


def add_channel(x, v):
    """Add a per-sample channel vector ``v`` of shape (N, C) to NHWC ``x``."""
    x, v = _wrap(x), _wrap(v)
    out = x.data + v.data[:, None, None, :]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)
        if v.requires_grad:
            n, h, w, c = g.shape
            v._accumulate(_rowsum(g.reshape(n, h * w, c)))

    return _make(out, (x, v), backward)


# --------------------------------------------------------------------------- dense


def linear(x, w, b):
    """``x @ w + b`` for x of shape (N, D)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    out = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(out, (x, w, b), backward)


def conv1x1(x, w, b):
    """Channel mixing of NHWC ``x`` with ``w`` of shape (Cin, Cout)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    n, h, wd, c = x.data.shape
    flat = x.data.reshape(-1, c)
    out = (flat @ w.data + b.data).reshape(n, h, wd, -1)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            w._accumulate(flat.T @ g2)
        if b.requires_grad:
            b._accumulate(_rowsum(g2))

    return _make(out, (x, w, b), backward)


# --------------------------------------------------------------------------- convolution


def _taps(p: np.ndarray, h: int, w: int):
    """The nine shifted ``(N*h*w, C)`` views of a 1-padded NHWC array."""
    c = p.shape[-1]
    for dy in range(3):
        for dx in range(3):
            yield dy, dx, np.ascontiguousarray(p[:, dy : dy + h, dx : dx + w, :]).reshape(-1, c)


def conv3x3(x, w, b):
    """Zero-padded 3x3 convolution; ``w`` has shape (3, 3, Cin, Cout).

    Computed as nine shifted matrix products rather than one im2col
    product: the shifted copies stay cache-sized and no 9C-wide buffer is
    built.
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    n, h, wd, c = x.data.shape
    cout = w.data.shape[-1]
    p = np.zeros((n, h + 2, wd + 2, c), dtype=x.data.dtype)
    p[:, 1:-1, 1:-1, :] = x.data
    acc = None
    for dy, dx, tap in _taps(p, h, wd):
        r = tap @ w.data[dy, dx]
        acc = r if acc is None else acc.__iadd__(r)
    acc += b.data
    out = acc.reshape(n, h, wd, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for dy, dx, tap in _taps(p, h, wd):
                dw[dy, dx] = tap.T @ g2
            w._accumulate(dw)
        if b.requires_grad:
            b._accumulate(_rowsum(g2))
        if x.requires_grad:
            dp = np.zeros_like(p)
            for dy in range(3):
                for dx in range(3):
                    dp[:, dy : dy + h, dx : dx + wd, :] += (g2 @ w.data[dy, dx].T).reshape(n, h, wd, c)
            x._accumulate(dp[:, 1:-1, 1:-1, :])

    return _make(out, (x, w, b), backward)


# --------------------------------------------------------------------------- resampling


def avgpool2(x):
    x = _wrap(x)
    n, h, w, c = x.data.shape
    out = x.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(g):
        x._accumulate(np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25)

    return _make(out, (x,), backward)


def upsample2(x):
    x = _wrap(x)
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        n, h, w, c = g.shape
        x._accumulate(g.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)))

    return _make(out, (x,), backward)


# --------------------------------------------------------------------------- normalization


def _group_sum(a: np.ndarray) -> np.ndarray:
    """``(N, P, G, K) -> (N, G)`` sums."""
    n, p, g, k = a.shape
    return _rowsum(a.reshape(n, p, g * k)).reshape(n, g, k).sum(axis=-1)


def group_norm(x, scale, shift, groups: int, eps: float = 1e-5):
    """Per-sample group normalization with channel affine ``(1 + scale), shift``.

    Statistics never mix batch members, so each sample's output depends on
    that sample alone.
    """
    x, scale, shift = _wrap(x), _wrap(scale), _wrap(shift)
    n, h, w, c = x.data.shape
    k = c // groups
    m = h * w * k
    xg = x.data.reshape(n, h * w, groups, k)
    mean = _group_sum(xg)[:, None, :, None] / m
    xc = xg - mean
    var = _group_sum(xc * xc)[:, None, :, None] / m
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(n, h, w, c)
    gain = 1.0 + scale.data
    out = xhat * gain + shift.data

    def backward(g):
        if scale.requires_grad:
            scale._accumulate(_rowsum((g * xhat).reshape(-1, c)))
        if shift.requires_grad:
            shift._accumulate(_rowsum(g.reshape(-1, c)))
        if x.requires_grad:
            dxhat = (g * gain).reshape(n, h * w, groups, k)
            xh = xhat.reshape(dxhat.shape)
            s1 = _group_sum(dxhat)[:, None, :, None]
            s2 = _group_sum(dxhat * xh)[:, None, :, None]
            dx = (rstd / m) * (m * dxhat - s1 - xh * s2)
            x._accumulate(dx.reshape(x.data.shape))

    return _make(out, (x, scale, shift), backward)


# --------------------------------------------------------------------------- loss


def mse(pred, target):
    """Mean over every element of ``(pred - target)^2``."""
    pred = _wrap(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    diff = pred.data - target
    out = np.asarray(np.mean(diff * diff), dtype=pred.data.dtype)

    def backward(g):
        pred._accumulate((2.0 / diff.size) * g * diff)

    return _make(out, (pred,), backward)
