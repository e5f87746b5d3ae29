"""2-D discrete Fourier transform and amplitude/phase decomposition.

Convention, pinned package-wide: the forward transform uses a positive
exponent and carries the 1/(w*h) factor,

    F(u, v) = (1/(w*h)) * sum_x sum_y f(x, y) * exp(+i*2*pi*(u*x/w + v*y/h)),

so the DC bin F(0, 0) equals the spatial mean of the grid. The inverse
is the unnormalized negative-exponent sum. Grids are indexed [y, x] and
spectra [v, u] (row = height frequency).

Two evaluation paths share this contract: a direct summation ("naive")
path kept permanently as the in-repo oracle, and a radix-2 fast path
used for power-of-two axes. `dft2`/`idft2` always take the naive path;
`fft2_fast`/`ifft2_fast` dispatch per axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, NonRealSignalError, ShapeError

# Inverse transforms of spectra that came from real signals leave only
# rounding noise in the imaginary part; anything above this is a bug.
RESIDUE_TOL = 1e-9


# -- low-level axis transforms (complex, unnormalized) ---------------------


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.flags.writeable = False
    return rev


def _fft_pow2_last(z: np.ndarray, sign: int) -> np.ndarray:
    """Iterative radix-2 transform along the last axis (length 2^k)."""
    n = z.shape[-1]
    out = np.ascontiguousarray(z, dtype=np.complex128)
    if n == 1:
        return out.copy()
    out = out[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp((2j * sign * np.pi / size) * np.arange(half))
        v = out.reshape(out.shape[:-1] + (n // size, size))
        upper = v[..., :half]
        lower = v[..., half:] * tw
        v[..., half:] = upper - lower
        v[..., :half] = upper + lower
        size *= 2
    return out


def _dft_naive_last(z: np.ndarray, sign: int) -> np.ndarray:
    """Direct-summation transform along the last axis."""
    n = z.shape[-1]
    j = np.arange(n)
    mat = np.exp((2j * sign * np.pi / n) * np.outer(j, j))
    return np.ascontiguousarray(z, dtype=np.complex128) @ mat


def _transform2d(z: np.ndarray, sign: int, fast: bool) -> np.ndarray:
    """Unnormalized separable 2-D transform over the last two axes."""
    z = np.asarray(z)
    if z.ndim < 2:
        raise ShapeError(f"expected at least 2 dims, got {z.ndim}")

    def along_last(a: np.ndarray) -> np.ndarray:
        if fast and _is_pow2(a.shape[-1]):
            return _fft_pow2_last(a, sign)
        return _dft_naive_last(a, sign)

    t = along_last(z)                      # x -> u
    t = np.swapaxes(t, -1, -2)
    t = along_last(np.ascontiguousarray(t))  # y -> v
    return np.swapaxes(t, -1, -2)          # [..., v, u]


# -- batched array API (used by layers / dgbench / styletransfer) ----------


def forward_spectrum(f: np.ndarray, fast: bool = True) -> np.ndarray:
    """Forward transform of real grid(s), shape (..., h, w) -> complex."""
    f = np.asarray(f, dtype=np.float64)
    h, w = f.shape[-2], f.shape[-1]
    return _transform2d(f, +1, fast) / (w * h)


def inverse_spectrum(F: np.ndarray, fast: bool = True,
                     residue_tol: float = RESIDUE_TOL) -> np.ndarray:
    """Inverse transform back to real grid(s); rejects non-real signals."""
    z = _transform2d(np.asarray(F, dtype=np.complex128), -1, fast)
    residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if residue > residue_tol:
        raise NonRealSignalError(
            f"inverse transform imaginary residue {residue:.3e} exceeds "
            f"{residue_tol:.1e}; spectrum is not conjugate-symmetric"
        )
    return np.ascontiguousarray(z.real)


def forward_adjoint(g: np.ndarray, fast: bool = True) -> np.ndarray:
    """Adjoint of `forward_spectrum` as a real-linear map.

    Maps an upstream complex gradient on the spectrum to the gradient
    on the real input grid.
    """
    g = np.asarray(g, dtype=np.complex128)
    h, w = g.shape[-2], g.shape[-1]
    return np.ascontiguousarray(_transform2d(g, -1, fast).real) / (w * h)


def inverse_adjoint(g: np.ndarray, fast: bool = True) -> np.ndarray:
    """Adjoint of `inverse_spectrum`: real upstream -> complex gradient."""
    return _transform2d(np.asarray(g, dtype=np.float64), +1, fast)


def amplitude_phase(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split complex spectra into (amplitude, phase) arrays.

    Phase is quadrant-aware in (-pi, pi]; bins with exactly zero
    amplitude get phase 0 by convention (the DC bin of an
    instance-normalized slice is exactly 0, and downstream composition
    must stay well-defined there).
    """
    F = np.asarray(F, dtype=np.complex128)
    amp = np.abs(F)
    phase = np.arctan2(F.imag, F.real)
    phase = np.where(phase == -np.pi, np.pi, phase)
    phase = np.where(amp == 0.0, 0.0, phase)
    return amp, phase


def polar_to_complex(amp: np.ndarray, phase: np.ndarray) -> np.ndarray:
    amp = np.asarray(amp, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amp.shape != phase.shape:
        raise ShapeError(f"amplitude/phase shape mismatch: {amp.shape} vs {phase.shape}")
    if np.any(amp < 0):
        raise DomainError("amplitude must be nonnegative")
    return amp * np.cos(phase) + 1j * amp * np.sin(phase)


# -- object API (single slice) ---------------------------------------------


@dataclass(frozen=True)
class ComplexGrid:
    """One Fourier-transformed channel slice, stored as a complex (h, w) grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2:
            raise ShapeError(f"ComplexGrid must be 2-D, got ndim={v.ndim}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def re(self) -> np.ndarray:
        return np.ascontiguousarray(self.values.real)

    @property
    def im(self) -> np.ndarray:
        return np.ascontiguousarray(self.values.imag)


@dataclass(frozen=True)
class SpectralPair:
    """Amplitude and phase grids of one channel slice."""

    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=np.float64)
        ph = np.asarray(self.phase, dtype=np.float64)
        if amp.shape != ph.shape or amp.ndim != 2:
            raise ShapeError(
                f"amplitude/phase must be matching 2-D grids, got {amp.shape} vs {ph.shape}"
            )
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", ph)

    @property
    def shape(self) -> tuple[int, int]:
        return self.amplitude.shape


def _as_grid(f) -> np.ndarray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected an (h, w) grid, got ndim={arr.ndim}")
    return arr


def dft2(f) -> ComplexGrid:
    """Forward transform of one real grid via the direct-summation path."""
    return ComplexGrid(forward_spectrum(_as_grid(f), fast=False))


def idft2(F) -> np.ndarray:
    """Inverse transform of one spectrum via the direct-summation path."""
    vals = F.values if isinstance(F, ComplexGrid) else np.asarray(F)
    return inverse_spectrum(vals, fast=False)


def fft2_fast(f) -> ComplexGrid:
    """Forward transform; radix-2 on power-of-two axes, naive otherwise."""
    return ComplexGrid(forward_spectrum(_as_grid(f), fast=True))


def ifft2_fast(F) -> np.ndarray:
    vals = F.values if isinstance(F, ComplexGrid) else np.asarray(F)
    return inverse_spectrum(vals, fast=True)


def decompose(F) -> SpectralPair:
    """Split a spectrum into its amplitude and phase grids."""
    vals = F.values if isinstance(F, ComplexGrid) else np.asarray(F)
    amp, phase = amplitude_phase(vals)
    return SpectralPair(amp, phase)


def compose(p: SpectralPair) -> ComplexGrid:
    """Reassemble a spectrum: re = amp*cos(phase), im = amp*sin(phase)."""
    return ComplexGrid(polar_to_complex(p.amplitude, p.phase))
