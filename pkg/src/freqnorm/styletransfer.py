"""Image-level spectral style transfer.

The amplitude spectrum carries the look of an image, the phase carries
its layout. Transplanting the style image's amplitude onto the content
image's phase restyles without moving anything:

    amplitude_swap  -- install the style amplitude wholesale
    amplitude_mix   -- blend the two amplitudes by a ratio
    low_freq_swap   -- swap amplitude only inside a centered
                       low-frequency band, keep the rest

Images are (3, h, w) tensors in [0, 1]; outputs are clipped back into
range and each result reports the fraction of pixels that clipping
touched, plus the pre-clip array for exact spectral checks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DomainError, ShapeError
from .spectral import (amplitude_phase, forward_spectrum, inverse_spectrum,
                       polar_to_complex)
from .tensor import Tensor, from_array


@dataclass
class TransferResult:
    image: Tensor               # clipped to [0, 1]
    pre_clip: np.ndarray        # raw (3, h, w) before clipping
    clipped_fraction: float


def _check_pair(content: Tensor | np.ndarray, style: Tensor | np.ndarray):
    a = content.data if isinstance(content, Tensor) else np.asarray(content, dtype=np.float64)
    b = style.data if isinstance(style, Tensor) else np.asarray(style, dtype=np.float64)
    a, b = _strip(a), _strip(b)
    if a.shape != b.shape:
        raise ShapeError(f"content {a.shape} and style {b.shape} dimensions differ")
    if a.ndim != 3 or a.shape[0] != 3:
        raise ShapeError(f"expected (3, h, w) images, got {a.shape}")
    return a, b


def _strip(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 4 and arr.shape[0] == 1:
        return arr[0]
    return arr


def _finish(raw: np.ndarray) -> TransferResult:
    clipped = np.clip(raw, 0.0, 1.0)
    frac = float(np.mean((raw < 0.0) | (raw > 1.0)))
    return TransferResult(from_array(clipped[None]), raw, frac)


def amplitude_swap(content, style) -> TransferResult:
    """Style amplitude, content phase, per channel."""
    a, b = _check_pair(content, style)
    amp_style, _ = amplitude_phase(forward_spectrum(b))
    _, phase_content = amplitude_phase(forward_spectrum(a))
    raw = inverse_spectrum(polar_to_complex(amp_style, phase_content))
    return _finish(raw)


def amplitude_mix(content, style, ratio: float) -> TransferResult:
    """Blend amplitudes: (1 - ratio) * content + ratio * style."""
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"ratio must lie in [0, 1], got {ratio}")
    a, b = _check_pair(content, style)
    amp_a, phase_a = amplitude_phase(forward_spectrum(a))
    amp_b, _ = amplitude_phase(forward_spectrum(b))
    mixed = (1.0 - ratio) * amp_a + ratio * amp_b
    raw = inverse_spectrum(polar_to_complex(mixed, phase_a))
    return _finish(raw)


def band_mask(h: int, w: int, band: float) -> np.ndarray:
    """Boolean mask for the DC-centered low-frequency square.

    The square has side band * min(h, w) around the DC bin (wrapped
    indexing, so it covers the four corners of the unshifted spectrum).
    """
    if not 0.0 < band <= 0.5:
        raise DomainError(f"band must lie in (0, 0.5], got {band}")
    side = int(np.floor(band * min(h, w)))
    half = side // 2
    fy = np.minimum(np.arange(h), h - np.arange(h))
    fx = np.minimum(np.arange(w), w - np.arange(w))
    return (fy[:, None] <= half) & (fx[None, :] <= half)


def low_freq_swap(content, style, band: float) -> TransferResult:
    """Swap amplitude inside the low-frequency band only."""
    a, b = _check_pair(content, style)
    amp_a, phase_a = amplitude_phase(forward_spectrum(a))
    amp_b, _ = amplitude_phase(forward_spectrum(b))
    mask = band_mask(a.shape[-2], a.shape[-1], band)
    mixed = np.where(mask, amp_b, amp_a)
    raw = inverse_spectrum(polar_to_complex(mixed, phase_a))
    return _finish(raw)


# -- image io ----------------------------------------------------------------


def load_image(path: str | os.PathLike) -> Tensor:
    """Read an 8-bit RGB image (PNG or PPM) as a (1, 3, h, w) tensor in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return from_array(arr.transpose(2, 0, 1)[None])


def save_image(path: str | os.PathLike, image: Tensor | np.ndarray) -> None:
    """Write as 8-bit RGB; format chosen from the extension (.png / .ppm)."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    arr = _strip(arr)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected a (3, h, w) image, got {arr.shape}")
    bytes8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    pil = Image.fromarray(bytes8.transpose(1, 2, 0), mode="RGB")
    path = os.fspath(path)
    tmp = path + ".tmp" + os.path.splitext(path)[1]
    pil.save(tmp)
    os.replace(tmp, path)
