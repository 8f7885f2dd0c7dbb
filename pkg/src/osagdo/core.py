"""Shared value types and grid/raster conversions.

Patch ordering is row-major everywhere: patch ``k`` sits at grid cell
``(k // w, k % w)``, left-to-right then top-to-bottom, the usual ViT
patchification order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes violate a type or operation contract."""


@dataclass(frozen=True)
class Image:
    """H x W x 3 uint8 RGB raster."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"image must be HxWx3, got {px.shape}")
        if px.dtype != np.uint8:
            raise ShapeError(f"image must be uint8, got {px.dtype}")
        if px.shape[0] < 32 or px.shape[1] < 32:
            raise ShapeError(f"image must be at least 32x32, got {px.shape[:2]}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FeatureMap:
    """L x C patch features laid out on an (h, w) grid, L = h * w."""

    values: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        h, w = (int(g) for g in self.grid)
        if v.ndim != 2:
            raise ShapeError(f"feature values must be L x C, got {v.shape}")
        if v.shape[0] != h * w:
            raise ShapeError(f"L={v.shape[0]} does not match grid {h}x{w}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "grid", (h, w))

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]


HeatmapKind = Literal["probability", "weight"]


@dataclass(frozen=True)
class Heatmap:
    """Dense H x W map; probability maps live in [0, 1], weight maps in [1, 2]."""

    values: np.ndarray
    kind: HeatmapKind = "probability"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"heatmap must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("heatmap contains non-finite values")
        lo, hi = (0.0, 1.0) if self.kind == "probability" else (1.0, 2.0)
        if v.size and (v.min() < lo or v.max() > hi):
            raise ValueError(f"{self.kind} map outside [{lo}, {hi}]: [{v.min()}, {v.max()}]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class AffordanceLabel:
    id: int
    name: str


def label_table(names) -> list[AffordanceLabel]:
    names = list(names)
    if len(set(names)) != len(names):
        raise ValueError("affordance names must be unique")
    return [AffordanceLabel(i, n) for i, n in enumerate(names)]


def to_grid(f: FeatureMap) -> np.ndarray:
    h, w = f.grid
    return f.values.reshape(h, w, f.C)


def from_grid(arr: np.ndarray) -> FeatureMap:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"grid array must be h x w x C, got {arr.shape}")
    h, w, c = arr.shape
    return FeatureMap(arr.reshape(h * w, c), (h, w))


def _axis_weights(n_in: int, n_out: int):
    # corner-aligned sampling: output ends map onto input ends
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(src).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    t = src - lo
    return lo, hi, t


def resample(h, H2: int, W2: int):
    """Bilinear, corner-aligned resize of the first two axes.

    Accepts a :class:`Heatmap` (returns one of the same kind) or a raw
    array of shape H x W or H x W x C (returns float64 array).
    """
    if H2 < 1 or W2 < 1:
        raise ValueError(f"target size must be >= 1, got {H2}x{W2}")
    is_heatmap = isinstance(h, Heatmap)
    src = np.asarray(h.values if is_heatmap else h, dtype=np.float64)
    H, W = src.shape[:2]
    if (H, W) == (H2, W2):
        out = src.copy()
    else:
        lo, hi, t = _axis_weights(H, H2)
        t = t.reshape((-1,) + (1,) * (src.ndim - 1))
        a, b = src[lo], src[hi]
        rows = a + t * (b - a)
        lo, hi, t = _axis_weights(W, W2)
        t = t.reshape((1, -1) + (1,) * (src.ndim - 2))
        a, b = rows[:, lo], rows[:, hi]
        out = a + t * (b - a)
        out = np.clip(out, src.min(), src.max())
    if is_heatmap:
        return Heatmap(out, h.kind)
    return out
