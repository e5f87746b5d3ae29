"""Minimal reverse-mode differentiation tape.

Forward evaluation is eager numpy; every op returns a `Node` holding
the computed value plus vector-Jacobian closures back to its parents.
`backward` walks the recorded graph in reverse topological order.

Values are float64 arrays, except between the spectral ops where a node
holds a complex128 array; its gradient follows the real-pair convention
(grad.real = dL/d(re), grad.imag = dL/d(im)).

Gradients through the amplitude/phase split are zeroed at bins whose
amplitude is at or below `AMP_GRAD_FLOOR`: the split is singular at the
origin, and instance normalization parks the DC bin exactly there.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import spectral
from .errors import ShapeError

AMP_GRAD_FLOOR = 1e-8

# Softmax-pair outputs are clipped into the open interval (0, 1) so the
# pair stays valid for arbitrarily extreme logits/temperatures.
PAIR_CLIP = 2.0 ** -52


class Node:
    """One value in the recorded computation graph."""

    __slots__ = ("value", "grad", "parents", "name")

    def __init__(self, value, parents: Sequence[tuple["Node", Callable]] = (),
                 name: str = ""):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Node":
        return Node(self.value)


def leaf(value, name: str = "") -> Node:
    return Node(np.asarray(value, dtype=np.float64), name=name)


def backward(root: Node, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of `root` into every reachable node."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _coerce(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64))


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    return Node(a.value + b.value,
                [(a, lambda g: _unbroadcast(g, a.value.shape)),
                 (b, lambda g: _unbroadcast(g, b.value.shape))])


def sub(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    return Node(a.value - b.value,
                [(a, lambda g: _unbroadcast(g, a.value.shape)),
                 (b, lambda g: _unbroadcast(-g, b.value.shape))])


def mul(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    return Node(a.value * b.value,
                [(a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
                 (b, lambda g: _unbroadcast(g * a.value, b.value.shape))])


def div(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    inv = 1.0 / b.value
    return Node(a.value * inv,
                [(a, lambda g: _unbroadcast(g * inv, a.value.shape)),
                 (b, lambda g: _unbroadcast(-g * a.value * inv * inv, b.value.shape))])


def neg(a: Node) -> Node:
    return Node(-a.value, [(a, lambda g: -g)])


def scale(a: Node, s: float) -> Node:
    s = float(s)
    return Node(a.value * s, [(a, lambda g: g * s)])


def sqrt(a: Node) -> Node:
    root = np.sqrt(a.value)
    return Node(root, [(a, lambda g: g * (0.5 / root))])


def square(a: Node) -> Node:
    return Node(a.value * a.value, [(a, lambda g: g * (2.0 * a.value))])


def mean(a: Node, axes: tuple, keepdims: bool = True) -> Node:
    axes = tuple(axes)
    count = 1
    for ax in axes:
        count *= a.value.shape[ax]
    val = a.value.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g / count, a.value.shape).copy()

    return Node(val, [(a, vjp)])


def sum_over(a: Node, axes: tuple, keepdims: bool = True) -> Node:
    axes = tuple(axes)
    val = a.value.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, a.value.shape).copy()

    return Node(val, [(a, vjp)])


def mean_all(a: Node) -> Node:
    count = a.value.size
    return Node(np.asarray(a.value.mean()),
                [(a, lambda g: np.broadcast_to(g / count, a.value.shape).copy())])


def reshape(a: Node, shape: tuple) -> Node:
    return Node(a.value.reshape(shape),
                [(a, lambda g: g.reshape(a.value.shape))])


def pick(a: Node, index: int) -> Node:
    """Select one element of a 1-D node as a scalar node."""
    idx = int(index)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[idx] = g
        return out

    return Node(np.asarray(a.value[idx]), [(a, vjp)])


def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid_pair_weight(a: Node) -> Node:
    """Stable logistic of a scalar logit, clipped into (0, 1)."""
    x = a.value
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = np.clip(s, PAIR_CLIP, 1.0 - PAIR_CLIP)
    return Node(s, [(a, lambda g: g * s * (1.0 - s))])


# -- dense / conv layers ----------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    return Node(a.value @ b.value,
                [(a, lambda g: g @ b.value.T),
                 (b, lambda g: a.value.T @ g)])


def _conv_patches(xp: np.ndarray, kh: int, kw: int, stride: int,
                  oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[1]
    s = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False,
    )


def conv2d(x: Node, w: Node, stride: int = 1, pad: int = 0) -> Node:
    """2-D cross-correlation, NCHW input, (co, ci, kh, kw) kernel."""
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernel")
    n, ci, h, ww_ = xv.shape
    co, ci2, kh, kw = wv.shape
    if ci != ci2:
        raise ShapeError(f"conv2d channel mismatch: input {ci}, kernel {ci2}")
    if h + 2 * pad < kh or ww_ + 2 * pad < kw:
        raise ShapeError("conv2d kernel larger than padded input")
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xv
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww_ + 2 * pad - kw) // stride + 1
    patches = _conv_patches(xp, kh, kw, stride, oh, ow)
    out = np.tensordot(wv, patches, axes=([1, 2, 3], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def vjp_w(g):
        return np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))

    def vjp_x(g):
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, wv[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                    contrib.transpose(0, 3, 1, 2)
        if pad:
            return gxp[:, :, pad:pad + h, pad:pad + ww_]
        return gxp

    return Node(out, [(x, vjp_x), (w, vjp_w)])


def add_channel_bias(x: Node, b: Node) -> Node:
    """Add a per-channel bias vector (c,) onto an NCHW node."""
    bcast = b.value.reshape(1, -1, 1, 1)
    return Node(x.value + bcast,
                [(x, lambda g: g),
                 (b, lambda g: g.sum(axis=(0, 2, 3)))])


def scale_channels(x: Node, s: Node) -> Node:
    """Multiply an NCHW node by a per-channel vector (c,)."""
    sv = s.value.reshape(1, -1, 1, 1)
    return Node(x.value * sv,
                [(x, lambda g: g * sv),
                 (s, lambda g: (g * x.value).sum(axis=(0, 2, 3)))])


def maxpool(x: Node, k: int = 2, stride: int | None = None) -> Node:
    stride = k if stride is None else stride
    xv = x.value
    n, c, h, w = xv.shape
    if (h - k) % stride or (w - k) % stride:
        raise ShapeError(f"maxpool window {k}/stride {stride} does not tile {h}x{w}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    s = xv.strides
    win = as_strided(xv, shape=(n, c, oh, ow, k, k),
                     strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
                     writeable=False)
    flat = win.reshape(n, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(xv)
        ni, ci_, yi, xi = np.indices((n, c, oh, ow))
        ry = yi * stride + arg // k
        rx = xi * stride + arg % k
        np.add.at(gx, (ni, ci_, ry, rx), g)
        return gx

    return Node(np.ascontiguousarray(out), [(x, vjp)])


def global_avg_pool(x: Node) -> Node:
    """(n, c, h, w) -> (n, c) spatial average."""
    n, c, h, w = x.value.shape
    count = h * w

    def vjp(g):
        return np.broadcast_to(g[:, :, None, None] / count, x.value.shape).copy()

    return Node(x.value.mean(axis=(2, 3)), [(x, vjp)])


def linear(x: Node, w: Node, b: Node) -> Node:
    """(n, f) @ (f, k) + (k,)"""
    return Node(x.value @ w.value + b.value,
                [(x, lambda g: g @ w.value.T),
                 (w, lambda g: x.value.T @ g),
                 (b, lambda g: g.sum(axis=0))])


def cross_entropy_with_logits(logits: Node, labels: np.ndarray) -> Node:
    """Mean negative log-likelihood over the batch; labels are class ids."""
    z = logits.value
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    softmax = ez / ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= 1.0
        return grad * (g / n)

    return Node(np.asarray(loss), [(logits, vjp)])


# -- spectral ops (complex-valued nodes) -------------------------------------


def fft_forward(x: Node) -> Node:
    """Forward spectrum of a real node over its trailing two axes."""
    val = spectral.forward_spectrum(x.value, fast=True)
    return Node(val, [(x, lambda g: spectral.forward_adjoint(g, fast=True))])


def ifft_real(F: Node) -> Node:
    """Inverse transform to a real node; raises on non-real spectra."""
    val = spectral.inverse_spectrum(F.value, fast=True)
    return Node(val, [(F, lambda g: spectral.inverse_adjoint(g, fast=True))])


def spectrum_amplitude(F: Node) -> Node:
    amp = np.abs(F.value)
    safe = np.where(amp > AMP_GRAD_FLOOR, amp, 1.0)
    live = amp > AMP_GRAD_FLOOR

    def vjp(g):
        coef = np.where(live, g / safe, 0.0)
        return coef * F.value.real + 1j * (coef * F.value.imag)

    return Node(amp, [(F, vjp)])


def spectrum_phase(F: Node) -> Node:
    re, im = F.value.real, F.value.imag
    amp2 = re * re + im * im
    live = amp2 > AMP_GRAD_FLOOR * AMP_GRAD_FLOOR
    safe = np.where(live, amp2, 1.0)
    phase = np.arctan2(im, re)
    phase = np.where(phase == -np.pi, np.pi, phase)
    phase = np.where(amp2 == 0.0, 0.0, phase)

    def vjp(g):
        coef = np.where(live, g / safe, 0.0)
        return (-coef * im) + 1j * (coef * re)

    return Node(phase, [(F, vjp)])


def compose_spectrum(amp: Node, phase: Node) -> Node:
    cos_p, sin_p = np.cos(phase.value), np.sin(phase.value)
    val = amp.value * cos_p + 1j * (amp.value * sin_p)

    def vjp_amp(g):
        return g.real * cos_p + g.imag * sin_p

    def vjp_phase(g):
        return amp.value * (g.imag * cos_p - g.real * sin_p)

    return Node(val, [(amp, vjp_amp), (phase, vjp_phase)])
