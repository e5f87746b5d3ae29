"""Mean/standard-deviation statistics for batch, instance, and layer norm.

Reduction groups:
    batch    -> per channel, over (n, h, w)
    instance -> per (n, c) pair, over (h, w)
    layer    -> per sample, over (c, h, w)

Variance is biased (divide by count). std = sqrt(var + EPS) with
EPS = 1e-5, so a constant group normalizes to zeros instead of NaN.

The batch scheme keeps running estimates for inference: exponential
moving average with a configurable momentum (default 0.1), or a true
cumulative average when momentum is None.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

EPS = 1e-5

SCHEMES = ("batch", "instance", "layer")

# Axes reduced over, and the kept (broadcast) shape of the group stats.
_REDUCE_AXES = {"batch": (0, 2, 3), "instance": (2, 3), "layer": (1, 2, 3)}


def reduction_axes(scheme: str) -> tuple[int, ...]:
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown normalization scheme {scheme!r}; expected one of {SCHEMES}")
    return _REDUCE_AXES[scheme]


@dataclass
class RunningStats:
    """Running mean/variance buffers for the batch scheme (per channel)."""

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def init(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), 0)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray,
               momentum: float | None) -> None:
        """EMA update (torch-style recurrence), or cumulative average when
        momentum is None."""
        self.count += 1
        if momentum is None:
            self.mean = self.mean + (batch_mean - self.mean) / self.count
            self.var = self.var + (batch_var - self.var) / self.count
        else:
            m = float(momentum)
            self.mean = (1.0 - m) * self.mean + m * batch_mean
            self.var = (1.0 - m) * self.var + m * batch_var

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy(), self.count)


@dataclass
class NormStats:
    """Per-group mean/std in broadcastable (keepdims) form."""

    scheme: str
    mean: np.ndarray
    std: np.ndarray
    running: RunningStats | None = field(default=None, repr=False)

    def group_shape(self) -> tuple:
        return self.mean.shape


def compute_stats(t: Tensor, scheme: str, mode: str = "train",
                  running: RunningStats | None = None,
                  momentum: float | None = 0.1) -> NormStats:
    """Group statistics of `t` under the given scheme.

    Train mode always computes from the input; with the batch scheme it
    also updates `running` (if provided). Eval mode with the batch
    scheme reads the running estimates; instance/layer schemes have no
    cross-batch state and always compute from the input.
    """
    axes = reduction_axes(scheme)
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")

    if scheme == "batch" and mode == "eval":
        if running is None:
            raise ConfigError("eval-mode batch stats require running estimates")
        if running.mean.shape[0] != t.shape[1]:
            raise ShapeError(
                f"running stats cover {running.mean.shape[0]} channels, tensor has {t.shape[1]}"
            )
        mean = running.mean.reshape(1, -1, 1, 1)
        std = np.sqrt(running.var.reshape(1, -1, 1, 1) + EPS)
        return NormStats(scheme, mean, std, running)

    mean = t.data.mean(axis=axes, keepdims=True)
    var = t.data.var(axis=axes, keepdims=True)
    if scheme == "batch" and mode == "train" and running is not None:
        running.update(mean.reshape(-1), var.reshape(-1), momentum)
    return NormStats(scheme, mean, np.sqrt(var + EPS), running)


def normalize(t: Tensor, stats: NormStats) -> Tensor:
    """(t - mean) / std with the stats' group structure."""
    _check_group(t, stats)
    return Tensor((t.data - stats.mean) / stats.std)


def denormalize(t: Tensor, stats: NormStats) -> Tensor:
    _check_group(t, stats)
    return Tensor(t.data * stats.std + stats.mean)


def _check_group(t: Tensor, stats: NormStats) -> None:
    expected = {
        "batch": (1, t.shape[1], 1, 1),
        "instance": (t.shape[0], t.shape[1], 1, 1),
        "layer": (t.shape[0], 1, 1, 1),
    }[stats.scheme]
    if stats.mean.shape != expected:
        raise ShapeError(
            f"stats group shape {stats.mean.shape} does not match tensor "
            f"{t.shape} under scheme {stats.scheme!r} (expected {expected})"
        )
