"""Normalization operators and standard CNN layers.

Three frequency-domain normalization operators are provided, all built
on the same recipe: transform, split into amplitude and phase,
recombine, transform back.

    pcnorm  -- amplitude of the batch-normalized feature, phase of the
               original feature (content preserved exactly).
    ccnorm  -- like pcnorm, but the phase source is the partially
               mean-shifted feature f - mean * lambda_norm, so a learned
               weight controls how much of the normalization's content
               change is admitted.
    scnorm  -- blends original and normalized amplitudes by a learned
               pair of weights while keeping the original phase, so the
               degree of style removal is learned (instance norm base by
               default).

Each operator exists twice: as a pure function over `Tensor` values
(stats supplied by the caller) and as a stateful layer class with
learnable parameters, running statistics, and gradients via the
autodiff tape. Both run the same node-level code.

The learnable 2-vector behind ccnorm/scnorm is exposed through a
temperature softmax as a pair (lambda_norm, lambda_org) that sums to 1
exactly (the second entry is computed as 1 - lambda_norm).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, ShapeError
from .normstats import EPS, NormStats, RunningStats, compute_stats, reduction_axes
from .tensor import Tensor


# -- adjusting weights -------------------------------------------------------


def softmax_pair(raw: np.ndarray, temperature: float) -> tuple[float, float]:
    """Temperature softmax of a 2-vector, clipped into the open (0, 1).

    Returns (lambda_norm, lambda_org) with the sum exactly 1.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (2,):
        raise ShapeError(f"adjust vector must have shape (2,), got {raw.shape}")
    z = (raw[0] - raw[1]) / temperature
    if z >= 0:
        lam = 1.0 / (1.0 + np.exp(-z))
    else:
        e = np.exp(z)
        lam = e / (1.0 + e)
    lam = float(np.clip(lam, ad.PAIR_CLIP, 1.0 - ad.PAIR_CLIP))
    return lam, 1.0 - lam


@dataclass
class AdjustParams:
    """Learnable 2-vector with a fixed temperature."""

    raw: np.ndarray
    temperature: float

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(2)
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    def pair(self) -> tuple[float, float]:
        return softmax_pair(self.raw, self.temperature)


@dataclass
class LayerConfig:
    base_scheme: str = "batch"
    temperature: float = 1e-6
    affine: bool = True
    channels: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


# -- node-level building blocks ----------------------------------------------


def _pair_nodes(raw: Node, temperature: float) -> tuple[Node, Node]:
    z = ad.scale(ad.sub(ad.pick(raw, 0), ad.pick(raw, 1)), 1.0 / temperature)
    lam_norm = ad.sigmoid_pair_weight(z)
    lam_org = ad.sub(1.0, lam_norm)
    return lam_norm, lam_org


def _normalize_node(x: Node, scheme: str, stop_stats_grad: bool = False
                    ) -> tuple[Node, Node, np.ndarray, np.ndarray]:
    """Differentiable group standardization from batch statistics.

    Returns (normalized, mean_node, raw mean array, raw biased-var array).
    """
    axes = reduction_axes(scheme)
    mu = ad.mean(x, axes, keepdims=True)
    if stop_stats_grad:
        mu = mu.detach()
    xc = ad.sub(x, mu)
    var = ad.mean(ad.square(xc), axes, keepdims=True)
    if stop_stats_grad:
        var = var.detach()
    std = ad.sqrt(ad.add(var, EPS))
    return ad.div(xc, std), mu, mu.value, var.value


def _normalize_const(x: Node, mean: np.ndarray, std: np.ndarray) -> Node:
    return ad.div(ad.sub(x, Node(mean)), Node(std))


def _recombine_node(amp_source: Node, phase_source: Node) -> Node:
    """IFT(compose(amplitude(FT(amp_source)), phase(FT(phase_source))))."""
    amp = ad.spectrum_amplitude(ad.fft_forward(amp_source))
    phase = ad.spectrum_phase(ad.fft_forward(phase_source))
    return ad.ifft_real(ad.compose_spectrum(amp, phase))


def pcnorm_node(x: Node, normalized: Node) -> Node:
    return _recombine_node(normalized, x)


def ccnorm_node(x: Node, normalized: Node, mean: Node, lam_norm: Node) -> Node:
    shifted = ad.sub(x, ad.mul(mean, lam_norm))
    return _recombine_node(normalized, shifted)


def scnorm_node(x: Node, normalized: Node, lam_norm: Node, lam_org: Node) -> Node:
    original = ad.fft_forward(x)
    amp_mix = ad.add(ad.mul(lam_norm, ad.spectrum_amplitude(ad.fft_forward(normalized))),
                     ad.mul(lam_org, ad.spectrum_amplitude(original)))
    return ad.ifft_real(ad.compose_spectrum(amp_mix, ad.spectrum_phase(original)))


# -- functional operators (pure, stats supplied) -------------------------------


def pcnorm_forward(f: Tensor, scheme: str, stats: NormStats) -> Tensor:
    """Amplitude of the normalized feature, phase of the original."""
    x = Node(f.data)
    xn = _normalize_const(x, stats.mean, stats.std)
    return Tensor(pcnorm_node(x, xn).value)


def content_adjust(f: Tensor, mean, a: AdjustParams) -> Tensor:
    """f - mean * lambda_norm: dials the mean shift from none to full."""
    lam_norm, _ = a.pair()
    mean = mean.mean if isinstance(mean, NormStats) else np.asarray(mean, dtype=np.float64)
    return Tensor(f.data - mean * lam_norm)


def ccnorm_forward(f: Tensor, a: AdjustParams, stats: NormStats) -> Tensor:
    """pcnorm with the phase taken from the partially mean-shifted feature."""
    lam_norm, _ = a.pair()
    x = Node(f.data)
    xn = _normalize_const(x, stats.mean, stats.std)
    out = ccnorm_node(x, xn, Node(stats.mean), Node(np.asarray(lam_norm)))
    return Tensor(out.value)


def scnorm_forward(f: Tensor, a: AdjustParams, scheme: str = "instance") -> Tensor:
    """Blend original and normalized amplitudes, keep the original phase."""
    lam_norm, lam_org = a.pair()
    stats = compute_stats(f, scheme, mode="train")
    x = Node(f.data)
    xn = _normalize_const(x, stats.mean, stats.std)
    out = scnorm_node(x, xn, Node(np.asarray(lam_norm)), Node(np.asarray(lam_org)))
    return Tensor(out.value)


def affine(f: Tensor, gamma: np.ndarray, beta: np.ndarray) -> Tensor:
    """Per-channel f * gamma + beta."""
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    c = f.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"affine parameters must have length {c}, got {gamma.shape} and {beta.shape}"
        )
    return Tensor(f.data * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1))


def conv2d_forward(f: Tensor, kernel: np.ndarray, stride: int = 1, pad: int = 0,
                   bias: np.ndarray | None = None) -> Tensor:
    out = ad.conv2d(Node(f.data), Node(np.asarray(kernel, dtype=np.float64)),
                    stride=stride, pad=pad)
    if bias is not None:
        out = ad.add_channel_bias(out, Node(np.asarray(bias, dtype=np.float64)))
    return Tensor(out.value)


def relu_forward(f: Tensor) -> Tensor:
    return Tensor(np.maximum(f.data, 0.0))


def maxpool_forward(f: Tensor, k: int = 2, stride: int | None = None) -> Tensor:
    return Tensor(ad.maxpool(Node(f.data), k=k, stride=stride).value)


def global_avg_pool_forward(f: Tensor) -> Tensor:
    return Tensor(f.data.mean(axis=(2, 3), keepdims=True))


def linear_forward(features: np.ndarray, weight: np.ndarray,
                   bias: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if features.ndim != 2 or weight.ndim != 2 or features.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear shape mismatch: features {features.shape}, weight {weight.shape}"
        )
    return features @ weight + bias


# -- layer classes (learnable, differentiable) --------------------------------


class Layer:
    """Base: named parameter registry."""

    def params(self) -> list[tuple[str, Node]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        pass


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 pad: int = 1, bias: bool = False, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (c_in * k * k))
        self.stride, self.pad = stride, pad
        self.weight = ad.leaf(rng.normal(0.0, std, size=(c_out, c_in, k, k)), "weight")
        self.bias = ad.leaf(np.zeros(c_out), "bias") if bias else None

    def __call__(self, x: Node) -> Node:
        out = ad.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = ad.add_channel_bias(out, self.bias)
        return out

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class Linear(Layer):
    def __init__(self, f_in: int, f_out: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / f_in)
        self.weight = ad.leaf(rng.normal(0.0, std, size=(f_in, f_out)), "weight")
        self.bias = ad.leaf(np.zeros(f_out), "bias")

    def __call__(self, x: Node) -> Node:
        return ad.linear(x, self.weight, self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Affine(Layer):
    """Per-channel scale and shift, initialized to identity."""

    def __init__(self, channels: int):
        self.gamma = ad.leaf(np.ones(channels), "gamma")
        self.beta = ad.leaf(np.zeros(channels), "beta")

    def __call__(self, x: Node) -> Node:
        return ad.add_channel_bias(ad.scale_channels(x, self.gamma), self.beta)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class _RunningMixin:
    """Shared running-statistics plumbing for batch-scheme layers."""

    def _init_running(self, channels: int, momentum: float | None):
        self.running = RunningStats.init(channels)
        self.momentum = momentum

    def _update_running(self, mean: np.ndarray, var: np.ndarray):
        self.running.update(mean.reshape(-1), var.reshape(-1), self.momentum)

    def buffers(self):
        return [("running_mean", self.running.mean),
                ("running_var", self.running.var),
                ("running_count", np.asarray([float(self.running.count)]))]

    def load_buffers(self, values):
        self.running.mean = np.asarray(values["running_mean"], dtype=np.float64).reshape(-1)
        self.running.var = np.asarray(values["running_var"], dtype=np.float64).reshape(-1)
        self.running.count = int(np.asarray(values["running_count"]).reshape(-1)[0])

    def _running_const(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.running.mean.reshape(1, -1, 1, 1)
        std = np.sqrt(self.running.var.reshape(1, -1, 1, 1) + EPS)
        return mean, std


class BatchNorm2d(Layer, _RunningMixin):
    def __init__(self, channels: int, affine: bool = True,
                 momentum: float | None = 0.1, stop_stats_grad: bool = False):
        self._init_running(channels, momentum)
        self.affine = Affine(channels) if affine else None
        self.stop_stats_grad = stop_stats_grad

    def __call__(self, x: Node, train: bool) -> Node:
        if train:
            xn, _, mean, var = _normalize_node(x, "batch", self.stop_stats_grad)
            self._update_running(mean, var)
        else:
            mean, std = self._running_const()
            xn = _normalize_const(x, mean, std)
        return self.affine(xn) if self.affine else xn

    def params(self):
        return self.affine.params() if self.affine else []


class PCNorm(Layer, _RunningMixin):
    """Batch-norm amplitude, original phase; affine after recomposition."""

    def __init__(self, channels: int, affine: bool = True,
                 momentum: float | None = 0.1, stop_stats_grad: bool = False):
        self._init_running(channels, momentum)
        self.affine = Affine(channels) if affine else None
        self.stop_stats_grad = stop_stats_grad

    def __call__(self, x: Node, train: bool) -> Node:
        if train:
            xn, _, mean, var = _normalize_node(x, "batch", self.stop_stats_grad)
            self._update_running(mean, var)
        else:
            mean, std = self._running_const()
            xn = _normalize_const(x, mean, std)
        out = pcnorm_node(x, xn)
        return self.affine(out) if self.affine else out

    def params(self):
        return self.affine.params() if self.affine else []


class CCNorm(Layer, _RunningMixin):
    """Batch-norm amplitude, learnably mean-shifted phase source."""

    def __init__(self, channels: int, temperature: float = 1e-6, affine: bool = True,
                 momentum: float | None = 0.1, stop_stats_grad: bool = False):
        if temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        self._init_running(channels, momentum)
        self.temperature = temperature
        self.raw = ad.leaf(np.zeros(2), "raw")
        self.affine = Affine(channels) if affine else None
        self.stop_stats_grad = stop_stats_grad
        self.fixed_pair: tuple[float, float] | None = None

    def pair(self) -> tuple[float, float]:
        if self.fixed_pair is not None:
            return self.fixed_pair
        return softmax_pair(self.raw.value, self.temperature)

    def __call__(self, x: Node, train: bool) -> Node:
        if train:
            xn, mu_node, mean, var = _normalize_node(x, "batch", self.stop_stats_grad)
            self._update_running(mean, var)
        else:
            mean, std = self._running_const()
            xn = _normalize_const(x, mean, std)
            mu_node = Node(mean)
        if self.fixed_pair is not None:
            lam_norm = Node(np.asarray(self.fixed_pair[0]))
        else:
            lam_norm, _ = _pair_nodes(self.raw, self.temperature)
        out = ccnorm_node(x, xn, mu_node, lam_norm)
        return self.affine(out) if self.affine else out

    def params(self):
        out = [("raw", self.raw)]
        if self.affine:
            out.extend(self.affine.params())
        return out


class SCNorm(Layer, _RunningMixin):
    """Learned blend of original and normalized amplitude, original phase.

    Instance normalization is the default base; a frozen pair with
    lambda_norm == 0 short-circuits to the identity (the blend then
    installs the original amplitude bit-for-bit).
    """

    def __init__(self, channels: int, scheme: str = "instance",
                 temperature: float = 0.1, affine: bool = False,
                 momentum: float | None = 0.1, stop_stats_grad: bool = False):
        if temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        reduction_axes(scheme)
        self._init_running(channels, momentum)
        self.scheme = scheme
        self.temperature = temperature
        self.raw = ad.leaf(np.zeros(2), "raw")
        self.affine = Affine(channels) if affine else None
        self.stop_stats_grad = stop_stats_grad
        self.fixed_pair: tuple[float, float] | None = None

    def pair(self) -> tuple[float, float]:
        if self.fixed_pair is not None:
            return self.fixed_pair
        return softmax_pair(self.raw.value, self.temperature)

    def __call__(self, x: Node, train: bool) -> Node:
        if self.fixed_pair is not None and self.fixed_pair[0] == 0.0:
            out = x
            return self.affine(out) if self.affine else out
        if self.scheme == "batch" and not train:
            mean, std = self._running_const()
            xn = _normalize_const(x, mean, std)
        else:
            xn, _, mean, var = _normalize_node(x, self.scheme, self.stop_stats_grad)
            if self.scheme == "batch" and train:
                self._update_running(mean, var)
        if self.fixed_pair is not None:
            lam_norm = Node(np.asarray(self.fixed_pair[0]))
            lam_org = Node(np.asarray(self.fixed_pair[1]))
        else:
            lam_norm, lam_org = _pair_nodes(self.raw, self.temperature)
        out = scnorm_node(x, xn, lam_norm, lam_org)
        return self.affine(out) if self.affine else out

    def params(self):
        out = [("raw", self.raw)]
        if self.affine:
            out.extend(self.affine.params())
        return out

    def buffers(self):
        if self.scheme == "batch":
            return _RunningMixin.buffers(self)
        return []

    def load_buffers(self, values):
        if self.scheme == "batch":
            _RunningMixin.load_buffers(self, values)
