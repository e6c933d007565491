"""Ultrasound (sonomyography) preprocessing: downsample, smooth, variance mask.

Images are (H, W) or stacked (n, H, W) float arrays.  The pipeline order is
fixed: :func:`downsample` -> :func:`gaussian_smooth` -> :func:`apply_mask`,
with the mask built once from the training images by :func:`variance_map`
and :func:`build_mask`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import SonoConfig
from .errors import BadFactor, DimMismatch, InsufficientImages, ValidationError

FINGER_DOFS = (2, 3, 4, 5, 6)


class DegenerateVariance(UserWarning):
    """All training pixels have equal variance; the mask falls back to index order."""


@dataclass(frozen=True)
class PixelMask:
    keep: np.ndarray  # (H', W') bool

    def __post_init__(self):
        if self.keep.ndim != 2 or self.keep.dtype != bool or not self.keep.any():
            raise ValidationError("a pixel mask is a non-empty 2-D boolean array")

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def kept(self) -> int:
        return int(self.keep.sum())


def downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean pooling over the last two axes.

    Dimensions not divisible by ``factor`` are edge-padded by replication first.
    """
    img = np.asarray(img, dtype=np.float64)
    if int(factor) != factor or factor < 1:
        raise BadFactor(f"downsample factor must be a positive integer, got {factor!r}")
    f = int(factor)
    if img.ndim < 2:
        raise DimMismatch("images need at least two dimensions")
    if f == 1:
        return img.copy()
    H, W = img.shape[-2:]
    ph, pw = -H % f, -W % f
    if ph or pw:
        pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
        img = np.pad(img, pad, mode="edge")
        H, W = H + ph, W + pw
    blocks = img.reshape(img.shape[:-2] + (H // f, f, W // f, f))
    return blocks.mean(axis=(-3, -1))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D kernel truncated at ceil(3 sigma)."""
    r = int(math.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2) if sigma > 0 else (x == 0).astype(np.float64)
    return k / k.sum()


def _smooth_axis(img: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = k.size // 2
    if r == 0:
        return img
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    # symmetric padding repeats the edge pixel (half-sample reflection)
    p = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * np.take(p, np.arange(i, i + n), axis=axis)
    return out


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the last two axes with reflective borders."""
    img = np.asarray(img, dtype=np.float64)
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    k = gaussian_kernel(sigma)
    return _smooth_axis(_smooth_axis(img, k, img.ndim - 2), k, img.ndim - 1)


def variance_map(images) -> np.ndarray:
    """Per-pixel unbiased variance across a stack of training images."""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 3 or imgs.shape[0] < 2:
        raise InsufficientImages("a variance map needs at least two images")
    return imgs.var(axis=0, ddof=1)


def build_mask(vmap: np.ndarray, keep_fraction: float) -> PixelMask:
    """Keep the ``round(keep_fraction * n)`` highest-variance pixels (at least one).

    Ties are broken by row-major index, lower first.
    """
    vmap = np.asarray(vmap, dtype=np.float64)
    if not 0 < keep_fraction <= 1:
        raise ValidationError("keep_fraction must lie in (0, 1]")
    if vmap.ndim != 2:
        raise DimMismatch("variance map must be 2-D")
    n = vmap.size
    k = min(n, max(1, int(round(keep_fraction * n))))
    flat = vmap.ravel()
    if np.all(flat == flat[0]):
        warnings.warn("variance map is constant; keeping pixels in index order",
                      DegenerateVariance, stacklevel=2)
    # stable sort on -variance keeps the lower index first among ties
    order = np.argsort(-flat, kind="stable")[:k]
    keep = np.zeros(n, dtype=bool)
    keep[order] = True
    return PixelMask(keep.reshape(vmap.shape))


def apply_mask(img: np.ndarray, mask: PixelMask) -> np.ndarray:
    """Kept pixels in row-major order; a stack of images gives (n, kept)."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-2:] != mask.shape:
        raise DimMismatch(f"image {img.shape[-2:]} does not match mask {mask.shape}")
    return img[..., mask.keep]


@dataclass(frozen=True)
class SonoPipeline:
    factor: int
    sigma: float
    mask: PixelMask
    input_shape: tuple[int, int]

    @property
    def reduction(self) -> float:
        return self.input_shape[0] * self.input_shape[1] / self.mask.kept

    def prepare(self, images) -> np.ndarray:
        return gaussian_smooth(downsample(images, self.factor), self.sigma)

    def features(self, images) -> np.ndarray:
        imgs = np.asarray(images, dtype=np.float64)
        if imgs.shape[-2:] != self.input_shape:
            raise DimMismatch(f"expected {self.input_shape} images, got {imgs.shape[-2:]}")
        return apply_mask(self.prepare(imgs), self.mask)


def fit_pipeline(train_images, cfg: SonoConfig | None = None) -> SonoPipeline:
    cfg = cfg or SonoConfig()
    imgs = np.asarray(train_images, dtype=np.float64)
    if imgs.ndim != 3:
        raise DimMismatch("training images must be stacked as (n, H, W)")
    prepared = gaussian_smooth(downsample(imgs, cfg.factor), cfg.sigma)
    mask = build_mask(variance_map(prepared), cfg.keep_fraction)
    return SonoPipeline(int(cfg.factor), float(cfg.sigma), mask, imgs.shape[1:])


def blob_images(phi: np.ndarray, height: int = 32, width: int = 32, seed: int = 0,
                noise: float = 0.02) -> np.ndarray:
    """Synthetic forearm cross-sections: one Gaussian blob per finger DoF.

    Blob ``j`` sits on a fixed column; finger flexion moves it down by up to a
    quarter of the image height and brightens it.  Returns (steps, H, W).
    """
    phi = np.asarray(phi, dtype=np.float64)
    fingers = phi[:, list(FINGER_DOFS)] if phi.shape[1] == 7 else phi
    n, m = fingers.shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cx = (np.arange(m) + 0.5) * width / m
    rad = 0.08 * width
    out = np.full((n, height, width), 0.1)
    for j in range(m):
        cy = height * (0.35 + 0.25 * fingers[:, j])
        amp = 0.4 + 0.4 * fingers[:, j]
        d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[j]) ** 2
        out += amp[:, None, None] * np.exp(-0.5 * d2 / rad ** 2)
    out += noise * np.random.default_rng([int(seed), 7]).standard_normal(out.shape)
    return np.clip(out, 0.0, 1.0)
