"""Deterministic, seedable distortion simulators and sequential chains.

Four base distortions: Gaussian white noise, Gaussian blur, a JPEG-style
block-DCT quantization codec model, and a JPEG2000-style wavelet deadzone
quantization codec model. The codec models reproduce the perceptual
character of the compression artifacts (blocking, ringing/blur) without
emitting interoperable bitstreams; manifests record kind+param so real
codecs can be substituted behind the same interface.

Every operation is a pure function of (input, parameters, seed): the same
call always yields the bit-identical array.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

KINDS = ("gaussian_noise", "gaussian_blur", "jpeg_like", "jp2k_like")

# Standard JPEG luminance quantization table (Annex K), applied per channel.
JPEG_LUMA_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def hash64(*parts) -> int:
    """Stable 64-bit hash of the stringified parts (seed derivation)."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def derive_seed(ref_id: str, kind: str, level: int, stage: int, root: int = 0) -> int:
    """Per-image noise seed: reproducible and parallelism-invariant.

    ``root`` salts the whole corpus; rebuilding with another root yields a
    different (but equally deterministic) noise realization everywhere.
    """
    return hash64(root, ref_id, kind, level, stage)


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion application: kind, parameter, and RNG seed.

    ``param`` is sigma in [0,1]-domain units for noise/blur, the quality
    factor q in [1, 100] for jpeg_like, and the quantization step for
    jp2k_like. Only gaussian_noise consumes the seed.
    """

    kind: str
    param: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")

    def apply(self, img: np.ndarray) -> np.ndarray:
        if self.kind == "gaussian_noise":
            return gaussian_noise(img, self.param, self.seed)
        if self.kind == "gaussian_blur":
            return gaussian_blur(img, self.param)
        if self.kind == "jpeg_like":
            return jpeg_like(img, self.param)
        return jp2k_like(img, self.param)

    def serialize(self) -> str:
        return f"{self.kind}:{self.param!r}:{self.seed}"

    @classmethod
    def parse(cls, text: str) -> "DistortionSpec":
        kind, param, seed = text.split(":")
        return cls(kind=kind, param=float(param), seed=int(seed))


DistortionChain = tuple[DistortionSpec, ...]


def serialize_chain(chain: DistortionChain) -> str:
    return "+".join(spec.serialize() for spec in chain)


def parse_chain(text: str) -> DistortionChain:
    if not text:
        return ()
    return tuple(DistortionSpec.parse(part) for part in text.split("+"))


def apply_chain(img: np.ndarray, chain: DistortionChain) -> np.ndarray:
    """Apply the chain's stages strictly left to right."""
    out = img
    for spec in chain:
        out = spec.apply(out)
    return out


def gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """i.i.d. zero-mean Gaussian noise per sample, clamped to [0, 1].

    The generator is PCG64 seeded by ``seed``; sigma = 0 returns the input
    unchanged (bit-identical, no RNG draw).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(img.shape) * sigma
    return np.clip(img + noise, 0.0, 1.0)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel of radius ceil(3 sigma)."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _per_channel(img: np.ndarray, fn) -> np.ndarray:
    if img.ndim == 2:
        return fn(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = fn(img[:, :, c])
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with replicate edge handling."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img
    k = gaussian_kernel1d(sigma)

    def blur_plane(plane):
        tmp = correlate1d(plane, k, axis=0, mode="nearest")
        return correlate1d(tmp, k, axis=1, mode="nearest")

    return np.clip(_per_channel(img, blur_plane), 0.0, 1.0)


def _jpeg_qtable(q: float) -> np.ndarray:
    # Conventional IJG quality scaling of the base table.
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    qt = np.floor((JPEG_LUMA_QTABLE * scale + 50.0) / 100.0)
    return np.clip(qt, 1.0, 255.0)


def jpeg_like(img: np.ndarray, q: float) -> np.ndarray:
    """Block-DCT quantization codec model at quality factor q in [1, 100].

    Per channel: replicate-pad to 8x8 blocks, orthonormal 2-D DCT-II,
    quantize with the standard luminance table under the conventional
    quality scaling (5000/q below 50, 200-2q at or above), dequantize,
    inverse DCT, clamp.
    """
    if not (1 <= q <= 100):
        raise ValueError(f"jpeg quality {q} outside [1, 100]")
    qt = _jpeg_qtable(q)

    def code_plane(plane):
        h, w = plane.shape
        ph, pw = (-h) % 8, (-w) % 8
        x = np.pad(plane * 255.0 - 128.0, ((0, ph), (0, pw)), mode="edge")
        hb, wb = x.shape[0] // 8, x.shape[1] // 8
        blocks = x.reshape(hb, 8, wb, 8).transpose(0, 2, 1, 3)
        coef = dctn(blocks, axes=(2, 3), norm="ortho")
        coef = np.round(coef / qt) * qt
        rec = idctn(coef, axes=(2, 3), norm="ortho")
        rec = rec.transpose(0, 2, 1, 3).reshape(hb * 8, wb * 8)
        return (rec[:h, :w] + 128.0) / 255.0

    return np.clip(_per_channel(img, code_plane), 0.0, 1.0)


def _even_right(even: np.ndarray, nd: int) -> np.ndarray:
    # even[i+1] for i < nd, symmetric extension past the end.
    if even.shape[-1] > nd:
        return even[..., 1:]
    return np.concatenate([even[..., 1:], even[..., -1:]], axis=-1)


def _detail_pair(d: np.ndarray, ne: int) -> tuple[np.ndarray, np.ndarray]:
    # (d[i-1], d[i]) for i = 0..ne-1, symmetric extension at both ends.
    left = np.concatenate([d[..., :1], d[..., :-1]], axis=-1)
    if ne == d.shape[-1]:
        return left, d
    tail = d[..., -1:]
    return np.concatenate([left, tail], axis=-1), np.concatenate([d, tail], axis=-1)


def _dwt53(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    # LeGall 5/3 lifting along one axis, whole-point symmetric extension.
    x = np.moveaxis(x, axis, -1)
    even, odd = x[..., 0::2], x[..., 1::2]
    d = odd - 0.5 * (even[..., : odd.shape[-1]] + _even_right(even, odd.shape[-1]))
    d_l, d_r = _detail_pair(d, even.shape[-1])
    a = even + 0.25 * d_l + 0.25 * d_r
    return np.moveaxis(a, -1, axis), np.moveaxis(d, -1, axis)


def _idwt53(a: np.ndarray, d: np.ndarray, axis: int, n: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    d = np.moveaxis(d, axis, -1)
    d_l, d_r = _detail_pair(d, a.shape[-1])
    even = a - 0.25 * d_l - 0.25 * d_r
    odd = d + 0.5 * (even[..., : d.shape[-1]] + _even_right(even, d.shape[-1]))
    out = np.empty(a.shape[:-1] + (n,), dtype=a.dtype)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return np.moveaxis(out, -1, axis)


def _deadzone(c: np.ndarray, step: float) -> np.ndarray:
    # JPEG2000-style deadzone: index = sign floor(|c|/step), midpoint recon.
    idx = np.sign(c) * np.floor(np.abs(c) / step)
    return np.where(idx == 0.0, 0.0, np.sign(idx) * (np.abs(idx) + 0.5) * step)


def jp2k_like(img: np.ndarray, step: float) -> np.ndarray:
    """Wavelet deadzone quantization codec model.

    Per channel: 3-level separable 5/3 (LeGall) decomposition, uniform
    deadzone quantization of every detail subband with ``step`` (the
    approximation band passes through), reconstruction, clamp. step = 0
    skips the filter bank entirely: it is an exact identity.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    if step == 0:
        return img

    def code_plane(plane):
        levels = []
        a = plane
        for _ in range(3):
            h, w = a.shape
            if h < 2 or w < 2:
                break
            rows_a, rows_d = _dwt53(a, axis=0)
            ll, lh = _dwt53(rows_a, axis=1)
            hl, hh = _dwt53(rows_d, axis=1)
            if step > 0:
                lh, hl, hh = _deadzone(lh, step), _deadzone(hl, step), _deadzone(hh, step)
            levels.append((h, w, lh, hl, hh))
            a = ll
        for h, w, lh, hl, hh in reversed(levels):
            rows_a = _idwt53(a, lh, axis=1, n=w)
            rows_d = _idwt53(hl, hh, axis=1, n=w)
            a = _idwt53(rows_a, rows_d, axis=0, n=h)
        return a

    return np.clip(_per_channel(img, code_plane), 0.0, 1.0)
