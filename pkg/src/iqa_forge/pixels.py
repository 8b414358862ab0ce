"""Image buffers, file I/O, color reduction, patch grids, dyadic downsampling.

Images are numpy float64 arrays with samples in [0, 1]: shape (H, W) for a
single-channel image, (H, W, 3) for color. Disk I/O quantizes to 8 bits at
the boundary; everything in between stays in the real [0, 1] working domain.
Buffers are treated as immutable: no function in this package mutates an
input array.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# Classic ITU-R BT.601 luma weights, as used by the SSIM reference code.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class DecodeError(ValueError):
    """Unreadable or unsupported image file."""


class DimensionError(ValueError):
    """Image too small (or wrongly shaped) for the requested operation."""


def channel_count(img: np.ndarray) -> int:
    if img.ndim == 2:
        return 1
    if img.ndim == 3 and img.shape[2] in (1, 3):
        return img.shape[2]
    raise DimensionError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")


def validate_image(img: np.ndarray) -> None:
    """Check the buffer invariants: shape, dtype domain, sample range."""
    channel_count(img)
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"degenerate image shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise DimensionError(f"image samples must be floating point, got {img.dtype}")
    lo, hi = float(np.min(img)), float(np.max(img))
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"image samples outside [0, 1]: min={lo}, max={hi}")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM into a float [0, 1] buffer.

    Samples are mapped by v / 255. Gray files come back as (H, W), color
    as (H, W, 3).
    """
    path = Path(path)
    if not path.is_file():
        raise DecodeError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise DecodeError(f"unsupported format {im.format!r} in {path}")
            if im.mode not in ("L", "RGB"):
                raise DecodeError(
                    f"unsupported mode {im.mode!r} in {path} (need 8-bit gray or RGB)"
                )
            arr = np.asarray(im, dtype=np.float64)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return arr / 255.0


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write an 8-bit PNG, quantizing with round-half-up: byte = floor(255 v + 0.5)."""
    validate_image(img)
    data = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    mode = "L" if data.ndim == 2 else "RGB"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(data, mode=mode).save(tmp, format="PNG")
    os.replace(tmp, path)


def to_luma(img: np.ndarray) -> np.ndarray:
    """Reduce to a single luma plane with weights (0.299, 0.587, 0.114)."""
    nch = channel_count(img)
    if nch == 1:
        return img[:, :, 0] if img.ndim == 3 else img
    w = np.asarray(LUMA_WEIGHTS)
    return img @ w


@dataclass(frozen=True)
class PatchGrid:
    """Boundary-clamped grid of patch origins covering the whole image."""

    patch_size: int
    stride: int
    origins: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.origins)


def _axis_origins(dim: int, size: int, stride: int) -> list[int]:
    last = dim - size
    out: list[int] = []
    for o in range(0, dim, stride):
        out.append(min(o, last))
        if o >= last:
            break
    return sorted(set(out))


def extract_patches(img: np.ndarray, size: int, stride: int) -> PatchGrid:
    """Grid of ``size``-square patch origins at the given stride.

    Origins run {0, stride, 2*stride, ...}; any origin past (dim - size) is
    clamped to exactly (dim - size), duplicates dropped, so the union of
    patches covers every pixel.
    """
    if size < 1 or stride < 1:
        raise ValueError("patch size and stride must be >= 1")
    if stride > size:
        # gaps between consecutive patches would break full coverage
        raise ValueError(f"stride {stride} larger than patch size {size}")
    h, w = img.shape[:2]
    if h < size or w < size:
        raise DimensionError(f"image {h}x{w} smaller than patch size {size}")
    rows = _axis_origins(h, size, stride)
    cols = _axis_origins(w, size, stride)
    origins = tuple((r, c) for r in rows for c in cols)
    return PatchGrid(patch_size=size, stride=stride, origins=origins)


def patch_at(img: np.ndarray, origin: tuple[int, int], size: int) -> np.ndarray:
    r, c = origin
    return img[r : r + size, c : c + size]


def downsample2x(img: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 block average; odd trailing row/column dropped."""
    if img.ndim != 2:
        raise DimensionError("downsample2x expects a single-channel (H, W) image")
    h, w = img.shape
    if h < 2 or w < 2:
        raise DimensionError(f"image {h}x{w} too small to halve")
    h2, w2 = h // 2, w // 2
    v = img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    return v.mean(axis=(1, 3))
