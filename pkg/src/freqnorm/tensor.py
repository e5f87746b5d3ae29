"""Dense NCHW tensor substrate.

Every feature in this package lives in a `Tensor`: a 4-D, row-major,
float64 array with axes (batch n, channels c, height h, width w).
Values are immutable from the caller's perspective; operations return
new tensors and never mutate their inputs.

A self-describing binary file format is provided for datasets and
checkpoints: 8-byte magic ``FNTENSR1``, four little-endian uint64 dims
(n, c, h, w), then n*c*h*w little-endian float64 values row-major.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

MAGIC = b"FNTENSR1"

# Hard cap on element count so corrupt headers cannot trigger huge
# allocations (and as the "overflowing dimension" guard).
_MAX_ELEMS = 1 << 40


def thread_hint() -> int:
    """Thread-count hint from FREQNORM_THREADS (default 1)."""
    raw = os.environ.get("FREQNORM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


class Tensor:
    """Immutable dense 4-D float64 array, shape (n, c, h, w)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n,c,h,w), got ndim={arr.ndim}")
        _check_dims(arr.shape)
        self.data = np.ascontiguousarray(arr)
        self.data.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return id(self)

    def copy_array(self) -> np.ndarray:
        """Writable copy of the underlying array."""
        return self.data.copy()

    # -- elementwise arithmetic ------------------------------------------

    def add(self, other) -> "Tensor":
        return _elementwise(self, other, np.add)

    def sub(self, other) -> "Tensor":
        return _elementwise(self, other, np.subtract)

    def mul(self, other) -> "Tensor":
        return _elementwise(self, other, np.multiply)

    def div(self, other) -> "Tensor":
        out = _elementwise(self, other, np.divide)
        if not np.all(np.isfinite(out.data)):
            raise DomainError("division produced non-finite values")
        return out

    __add__ = add
    __sub__ = sub
    __mul__ = mul
    __truediv__ = div

    # -- reductions ------------------------------------------------------

    def sum(self, axes: Sequence[int] | None = None, keepdims: bool = False):
        return _reduce(self, np.sum, axes, keepdims)

    def mean(self, axes: Sequence[int] | None = None, keepdims: bool = False):
        return _reduce(self, np.mean, axes, keepdims)

    def var(self, axes: Sequence[int] | None = None, keepdims: bool = False):
        """Biased variance (divide by count)."""
        return _reduce(self, np.var, axes, keepdims)


def _check_dims(shape: Iterable[int]) -> None:
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {dims}")
    total = 1
    for d in dims:
        total *= d
        if total > _MAX_ELEMS:
            raise ShapeError(f"shape {dims} overflows the element budget")


def zeros(shape: Sequence[int]) -> Tensor:
    """All-zero tensor of the given (n, c, h, w) shape."""
    if len(shape) != 4:
        raise ShapeError(f"shape must have 4 dims, got {len(shape)}")
    _check_dims(shape)
    return Tensor(np.zeros(tuple(int(d) for d in shape), dtype=np.float64))


def full(shape: Sequence[int], value: float) -> Tensor:
    if len(shape) != 4:
        raise ShapeError(f"shape must have 4 dims, got {len(shape)}")
    _check_dims(shape)
    return Tensor(np.full(tuple(int(d) for d in shape), float(value)))


def from_array(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64))


def _elementwise(t: Tensor, other, op) -> Tensor:
    if isinstance(other, Tensor):
        a, b = t.data, other.data
        if a.shape != b.shape and not _is_channel_broadcast(a.shape, b.shape):
            raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
        return Tensor(op(a, b))
    if np.isscalar(other):
        return Tensor(op(t.data, float(other)))
    raise ShapeError(f"unsupported operand type {type(other).__name__}")


def _is_channel_broadcast(a: tuple, b: tuple) -> bool:
    # Only scalar and per-channel (1, c, 1, 1) broadcasting is supported.
    return b == (1, a[1], 1, 1)


def _reduce(t: Tensor, op, axes, keepdims):
    if axes is None:
        return float(op(t.data))
    axes = tuple(sorted(set(int(a) for a in axes)))
    if any(a < 0 or a > 3 for a in axes):
        raise ShapeError(f"reduction axes must be within 0..3, got {axes}")
    out = op(t.data, axis=axes, keepdims=keepdims)
    if keepdims:
        return Tensor(out)
    return out


def map_channel_slices(t: Tensor, fn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Apply a 2-D grid function to every (n, c) slice.

    `fn` receives a writable (h, w) float64 copy and must return an
    (h, w) array. Slices may be processed by a thread pool (per the
    FREQNORM_THREADS hint) but the output is bit-identical to the
    sequential order since every slice lands in its own output slot.
    """
    n, c, h, w = t.shape
    out = np.empty((n, c, h, w), dtype=np.float64)

    def run(idx: int) -> None:
        i, j = divmod(idx, c)
        res = np.asarray(fn(t.data[i, j].copy()), dtype=np.float64)
        if res.shape != (h, w):
            raise ShapeError(
                f"slice function returned shape {res.shape}, expected {(h, w)}"
            )
        out[i, j] = res

    threads = thread_hint()
    if threads > 1 and n * c > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # list() propagates the first exception from any worker
            list(pool.map(run, range(n * c)))
    else:
        for idx in range(n * c):
            run(idx)
    return Tensor(out)


# -- binary file format ---------------------------------------------------


def write_tensor(path: str | os.PathLike, t: Tensor) -> None:
    """Write a tensor atomically (temp file + rename)."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4Q", *t.shape))
        fh.write(t.data.astype("<f8", copy=False).tobytes())
    os.replace(tmp, path)


def read_tensor(path: str | os.PathLike) -> Tensor:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise IOError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header = fh.read(32)
        if len(header) != 32:
            raise IOError(f"{path}: truncated header")
        dims = struct.unpack("<4Q", header)
        try:
            _check_dims(dims)
        except ShapeError as exc:
            raise IOError(f"{path}: corrupt dims {dims}") from exc
        count = dims[0] * dims[1] * dims[2] * dims[3]
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise IOError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f8").reshape(dims)
    return Tensor(data)
