"""Image I/O and convolution primitives.

Images are numpy float64 arrays shaped ``(H, W)`` for grayscale or
``(H, W, 3)`` for color, with intensities in [0, 1]. Masks are boolean
``(H, W)`` arrays. Kernels are odd-sized float arrays (1D or 2D) whose taps
sum to one; the anchor is always the center tap.
"""

from __future__ import annotations

import math
import os
import re

import numpy as np
from PIL import Image as PILImage
from scipy import fft, ndimage

from .errors import (
    CorruptHeaderError,
    DataError,
    ImageFormatError,
    MissingFileError,
    ShapeMismatchError,
    UnsupportedDepthError,
)

# Kernels larger than this many taps are applied through the FFT.
_FFT_THRESHOLD = 121


def as_image(data, copy: bool = True) -> np.ndarray:
    """Coerce array-like data into a clamped float64 image."""
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise DataError(f"image must be (H, W) or (H, W, 3), got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    return np.clip(img, 0.0, 1.0, out=img)


def to_gray(img: np.ndarray) -> np.ndarray:
    return img if img.ndim == 2 else img.mean(axis=2)


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to bytes with round-half-up."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_pgm(raw: bytes, path) -> np.ndarray:
    tokens = []
    pos = 2
    for _ in range(3):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise CorruptHeaderError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise CorruptHeaderError(f"{path}: non-numeric PGM header field") from None
    if width <= 0 or height <= 0 or maxval <= 0:
        raise CorruptHeaderError(f"{path}: invalid PGM dimensions")
    if maxval != 255:
        raise UnsupportedDepthError(f"{path}: PGM maxval {maxval}, only 8-bit supported")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise CorruptHeaderError(f"{path}: missing raster separator")
    data = raw[pos + 1 :]
    if len(data) < width * height:
        raise CorruptHeaderError(f"{path}: raster truncated ({len(data)} of {width * height} bytes)")
    arr = np.frombuffer(data[: width * height], dtype=np.uint8).reshape(height, width)
    return arr.astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    """Load an 8-bit PGM (P5) or an 8/24-bit PNG as a float image in [0, 1]."""
    if not os.path.isfile(path):
        raise MissingFileError(f"no such image file: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"P5":
        return _parse_pgm(raw, path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with PILImage.open(path) as im:
                mode = im.mode
                if mode not in ("L", "RGB"):
                    raise UnsupportedDepthError(f"{path}: PNG mode {mode!r} unsupported")
                arr = np.asarray(im.convert(mode), dtype=np.uint8)
        except ImageFormatError:
            raise
        except Exception as exc:  # Pillow raises assorted types on truncation
            raise CorruptHeaderError(f"{path}: unreadable PNG ({exc})") from None
        return arr.astype(np.float64) / 255.0
    if len(raw) < 8:
        raise CorruptHeaderError(f"{path}: file too short to identify")
    raise ImageFormatError(f"{path}: not a P5 PGM or PNG file")


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as 8-bit PGM (``.pgm``) or PNG (anything else).

    The write is atomic: data goes to a temporary sibling that is renamed
    into place.
    """
    parent = os.path.dirname(os.fspath(path)) or "."
    if not os.path.isdir(parent):
        raise ImageFormatError(f"cannot write {path}: directory does not exist")
    img = np.asarray(img)
    data = quantize(img)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        if os.fspath(path).lower().endswith(".pgm"):
            if data.ndim != 2:
                raise DataError("PGM output requires a single-channel image")
            h, w = data.shape
            with open(tmp, "wb") as fh:
                fh.write(b"P5\n%d %d\n255\n" % (w, h))
                fh.write(data.tobytes())
        else:
            PILImage.fromarray(data, mode="L" if data.ndim == 2 else "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError as exc:
        raise ImageFormatError(f"cannot write {path}: {exc}") from None
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian of radius ceil(3 sigma); sigma=0 gives [1.0]."""
    if sigma < 0 or not math.isfinite(sigma):
        raise DataError(f"sigma must be finite and >= 0, got {sigma}")
    r = kernel_radius(sigma)
    if r == 0:
        return np.ones(1)
    x = np.arange(-r, r + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # tiny sigma: off-center taps underflow to 0
        z = x / sigma
        taps = np.exp(-0.5 * z * z)
    return taps / taps.sum()


def _axis_profile(t: np.ndarray, sigma: float) -> np.ndarray:
    if sigma > 0:
        with np.errstate(over="ignore"):
            z = t / sigma
            return np.exp(-0.5 * z * z)
    # zero-width axis: a unit line sampled with linear interpolation
    return np.maximum(0.0, 1.0 - np.abs(t))


def oriented_gaussian_kernel(sigma_u: float, sigma_v: float, alpha: float) -> np.ndarray:
    """Anisotropic 2D Gaussian with its u axis rotated by ``alpha`` radians.

    Axes with zero sigma degenerate to a one-pixel-wide line along the other
    axis. Equal sigmas skip the rotation so the result is independent of
    ``alpha`` bit for bit.
    """
    if sigma_u < 0 or sigma_v < 0:
        raise DataError(f"sigmas must be >= 0, got ({sigma_u}, {sigma_v})")
    r = kernel_radius(max(sigma_u, sigma_v))
    if r == 0:
        return np.ones((1, 1))
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    if sigma_u == sigma_v:
        with np.errstate(over="ignore"):
            zx, zy = x / sigma_u, y / sigma_u
            taps = np.exp(-0.5 * (zx * zx + zy * zy))
    else:
        a = float(np.mod(alpha, np.pi))
        c, s = math.cos(a), math.sin(a)
        u = x * c + y * s
        v = -x * s + y * c
        taps = _axis_profile(u, sigma_u) * _axis_profile(v, sigma_v)
    return taps / taps.sum()


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _fft_conv(planes: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Edge-replicated 'same' convolution of a ``(k, H, W)`` stack with one 2D kernel."""
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    h, w = planes.shape[1:]
    padded = np.pad(planes, ((0, 0), (ry, ry), (rx, rx)), mode="edge")
    shape = [fft.next_fast_len(n + k - 1, real=True) for n, k in zip(padded.shape[1:], kernel.shape)]
    spec = fft.rfft2(padded, shape) * fft.rfft2(kernel, shape)
    full = fft.irfft2(spec, shape)
    return full[:, 2 * ry : 2 * ry + h, 2 * rx : 2 * rx + w]


def _conv_planes(planes: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.ndim == 1:
        out = ndimage.convolve1d(planes, kernel, axis=1, mode="nearest")
        return ndimage.convolve1d(out, kernel, axis=2, mode="nearest")
    if kernel.size <= _FFT_THRESHOLD:
        return np.stack([ndimage.convolve(p, kernel, mode="nearest") for p in planes])
    return _fft_conv(planes, kernel)


def _check_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim not in (1, 2) or any(n % 2 == 0 for n in kernel.shape):
        raise DataError(f"kernel must be 1D or 2D with odd sides, got {kernel.shape}")
    return kernel


def convolve(img: np.ndarray, kernel: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
    """Convolve ``img`` with a normalized kernel under edge replication.

    A 1D kernel is applied separably along both axes. When ``support`` is
    given, only pixels inside it are rewritten and only pixels inside it
    contribute; each output is renormalized by the in-support tap weight.
    """
    kernel = _check_kernel(kernel)
    img = np.asarray(img, dtype=np.float64)
    if support is not None:
        support = np.asarray(support, dtype=bool)
        if support.shape != img.shape[:2]:
            raise ShapeMismatchError(f"mask {support.shape} does not match image {img.shape[:2]}")
    if kernel.size == 1:
        return img * kernel.flat[0]
    planes = img[None] if img.ndim == 2 else np.moveaxis(img, 2, 0)
    if support is None:
        out = _conv_planes(planes, kernel)
    else:
        if kernel.ndim == 1:
            kernel = np.outer(kernel, kernel)
        m = support.astype(np.float64)
        conv = _conv_planes(np.concatenate([planes * m, m[None]]), kernel)
        out = planes.copy()
        out[:, support] = conv[:-1, support] / conv[-1, support]
    res = out[0] if img.ndim == 2 else np.moveaxis(out, 0, 2).copy()
    return np.clip(res, 0.0, 1.0, out=res)
