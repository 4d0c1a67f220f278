"""Gist-style global descriptor: Gabor filter bank energies pooled on a grid.

All filtering happens in the frequency domain with periodic boundaries, so
circularly shifting the (resized) image by a multiple of the cell size
permutes the pooled cells exactly.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

PREFILTER_FC = 4.0
CONTRAST_FLOOR = 0.2
DEFAULT_ORIENTS = (8, 8, 8, 8)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance in [0, 1], shape ``(height, width)``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D grayscale image, got shape {v.shape}")
        if min(v.shape) < 32:
            raise ValueError(f"image too small: {v.shape[1]}x{v.shape[0]} (minimum 32x32)")
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class GaborBank:
    image_size: int
    filters: np.ndarray  # (n_filters, image_size, image_size), unshifted frequency layout
    tags: tuple[tuple[int, int], ...]  # (scale, orientation index) per filter
    orients_per_scale: tuple[int, ...]
    grid: int

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def dim(self) -> int:
        return self.n_filters * self.grid * self.grid

    def orientation(self, f: int) -> float:
        """Orientation of filter ``f`` in radians."""
        s, o = self.tags[f]
        return np.pi * o / self.orients_per_scale[s]


def _freq_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.fft.fftfreq(n) * n
    fx, fy = np.meshgrid(f, f)
    return fx, fy


def make_gabor_bank(
    scales: int = 4,
    orients_per_scale: Sequence[int] = DEFAULT_ORIENTS,
    image_size: int = 256,
    grid: int = 4,
) -> GaborBank:
    """Frequency-domain Gabor transfer functions, ``sum(orients)`` of them.

    Scale ``s`` is tuned to ``0.3 / 1.85**s`` cycles per pixel; the angular
    bandwidth narrows with the number of orientations at that scale.
    """
    orients = tuple(int(o) for o in orients_per_scale)
    if len(orients) != scales:
        raise ValueError(f"orients_per_scale has {len(orients)} entries, expected {scales}")
    if any(o < 1 for o in orients):
        raise ValueError("every scale needs at least one orientation")
    if image_size < 32 or image_size & (image_size - 1):
        raise ValueError(f"image_size must be a power of two >= 32, got {image_size}")
    if not 1 <= grid <= image_size:
        raise ValueError(f"grid must lie in [1, {image_size}]")

    fx, fy = _freq_grid(image_size)
    radius = np.sqrt(fx**2 + fy**2) / image_size
    theta = np.arctan2(fy, fx)
    filters, tags = [], []
    for s, n_or in enumerate(orients):
        centre = 0.3 / 1.85**s
        angular = 16 * n_or**2 / 32**2
        for o in range(n_or):
            t = theta + np.pi * o / n_or
            t = np.where(t < -np.pi, t + 2 * np.pi, t)
            t = np.where(t > np.pi, t - 2 * np.pi, t)
            g = np.exp(-10 * 0.35 * (radius / centre - 1) ** 2 - 2 * angular * np.pi * t**2)
            filters.append(g)
            tags.append((s, o))
    bank = np.stack(filters)
    bank.setflags(write=False)
    return GaborBank(image_size, bank, tuple(tags), orients, grid)


def resize_bilinear(values: np.ndarray, size: int) -> np.ndarray:
    """Square bilinear warp to ``size x size`` (aspect ratio ignored)."""
    h, w = values.shape
    if (h, w) == (size, size):
        return np.array(values, dtype=np.float64)
    ys = (np.arange(size) + 0.5) * h / size - 0.5
    xs = (np.arange(size) + 0.5) * w / size - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(values, [yy, xx], order=1, mode="nearest")


def prefilter(img: np.ndarray, fc: float = PREFILTER_FC) -> np.ndarray:
    """Log luminance, Gaussian high-pass and divisive local contrast normalization."""
    lo, hi = float(img.min()), float(img.max())
    # resampling can leave rounding-level ripple on a flat image
    if hi - lo <= 1e-9 * max(1.0, abs(hi)):
        return np.zeros_like(img, dtype=np.float64)
    x = np.log1p(255.0 * (img - lo) / (hi - lo))
    n = x.shape[0]
    s1 = fc / np.sqrt(np.log(2))
    fx, fy = _freq_grid(n)
    gf = np.exp(-(fx**2 + fy**2) / s1**2)
    out = x - np.real(np.fft.ifft2(np.fft.fft2(x) * gf))
    local_std = np.sqrt(np.abs(np.real(np.fft.ifft2(np.fft.fft2(out**2) * gf))))
    return out / (CONTRAST_FLOOR + local_std)


def _pool(energy: np.ndarray, grid: int) -> np.ndarray:
    n = energy.shape[-1]
    if n % grid == 0:
        c = n // grid
        return energy.reshape(energy.shape[0], grid, c, grid, c).mean(axis=(2, 4))
    edges = np.floor(np.linspace(0, n, grid + 1)).astype(int)
    out = np.empty((energy.shape[0], grid, grid))
    for r in range(grid):
        for c in range(grid):
            out[:, r, c] = energy[:, edges[r] : edges[r + 1], edges[c] : edges[c + 1]].mean(axis=(1, 2))
    return out


def filter_energies(img: GrayImage | np.ndarray, bank: GaborBank) -> np.ndarray:
    """Per-filter energy maps ``|ifft(F(prefiltered) * G)|``, shape ``(n_filters, N, N)``."""
    values = img.values if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    x = prefilter(resize_bilinear(values, bank.image_size))
    spectrum = np.fft.fft2(x)
    return np.abs(np.fft.ifft2(spectrum[None, :, :] * bank.filters))


def gist_descriptor(img: GrayImage | np.ndarray, bank: GaborBank) -> np.ndarray:
    """``grid**2 * n_filters`` non-negative values, filter-major, cells row-major."""
    if not isinstance(img, GrayImage):
        img = GrayImage(img)
    return _pool(filter_energies(img, bank), bank.grid).reshape(-1)


def read_pgm(path: str | os.PathLike) -> GrayImage:
    """Load an 8-bit grayscale PGM (or any image Pillow reads) as luminance in [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1"):
                im = im.convert("L")
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise ValueError(f"{path}: unreadable image: {exc}") from exc
    return GrayImage(arr)


def write_pgm(path: str | os.PathLike, values: np.ndarray) -> None:
    """Save luminance in [0, 1] as an 8-bit binary PGM."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")
