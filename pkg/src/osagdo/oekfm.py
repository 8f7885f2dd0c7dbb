"""Keypoint-prior fusion.

Corners found by an ORB-style detector (FAST-9 segment test, Harris
ranking, top-n) are splatted with unit-peak Gaussians into a region map
``M``. ``M`` is rescaled into a weight map ``M'`` in [1, 2) and multiplied
into the decoder prediction, which is then clamped back into [0, 1]. Since
``M' >= 1`` everywhere, the fusion can only amplify a prediction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import cv2
import numpy as np
from scipy import ndimage

from .core import Image, resample

REFERENCE_SIZE = 224

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
_CIRCLE = [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
           (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]
_ARC = 9


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class OEKFMConfig:
    n_features: int = 400
    sigma_px: float = 8.0
    epsilon: float = 1e-8
    fast_threshold: float = 20.0
    harris_k: float = 0.04
    harris_block: int = 7

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.sigma_px <= 0 or self.epsilon <= 0:
            raise ValueError("sigma_px and epsilon must be positive")

    def sigma_for(self, H: int, W: int) -> float:
        """Gaussian width scaled from the 224 px reference to an H x W image."""
        return self.sigma_px * min(H, W) / REFERENCE_SIZE


class KeypointDetector(Protocol):
    def __call__(self, img: Image, cfg: OEKFMConfig) -> list[Keypoint]: ...


def rgb_to_gray(pixels: np.ndarray) -> np.ndarray:
    px = pixels.astype(np.float64)
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def fast_candidates(gray: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean mask of FAST-9 corners (9 contiguous circle pixels all brighter or all darker)."""
    H, W = gray.shape
    padded = np.pad(gray, 3, mode="edge")
    ring = np.stack([padded[3 + dy:3 + dy + H, 3 + dx:3 + dx + W] for dx, dy in _CIRCLE])
    mask = np.zeros((H, W), dtype=bool)
    for side in (ring > gray + threshold, ring < gray - threshold):
        ext = np.concatenate([side, side[:_ARC - 1]])
        run = ext[:16].copy()
        for k in range(1, _ARC):
            run &= ext[k:k + 16]
        mask |= run.any(axis=0)
    # circle pixels must lie inside the image
    mask[:3] = mask[-3:] = False
    mask[:, :3] = mask[:, -3:] = False
    return mask


def harris_response(gray: np.ndarray, k: float = 0.04, block: int = 7) -> np.ndarray:
    g = gray / 255.0
    ix = ndimage.sobel(g, axis=1, mode="reflect")
    iy = ndimage.sobel(g, axis=0, mode="reflect")
    sxx = ndimage.uniform_filter(ix * ix, block, mode="reflect")
    syy = ndimage.uniform_filter(iy * iy, block, mode="reflect")
    sxy = ndimage.uniform_filter(ix * iy, block, mode="reflect")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_keypoints(img: Image, cfg: OEKFMConfig = OEKFMConfig()) -> list[Keypoint]:
    """FAST candidates, 3x3 non-max suppression on Harris response, top ``n_features``.

    Ordering is by descending score, ties broken by (y, x), so the result is
    deterministic.
    """
    gray = rgb_to_gray(img.pixels)
    cand = fast_candidates(gray, cfg.fast_threshold)
    if not cand.any():
        return []
    resp = harris_response(gray, cfg.harris_k, cfg.harris_block)
    masked = np.where(cand, resp, -np.inf)
    cand &= masked >= ndimage.maximum_filter(masked, size=3, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero(cand)
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:cfg.n_features]
    return [Keypoint(float(xs[i]), float(ys[i]), float(scores[i])) for i in order]


def region_map(kps: list[Keypoint], H: int, W: int, cfg: OEKFMConfig = OEKFMConfig(),
               sigma: float | None = None) -> np.ndarray:
    """Sum of unit-peak Gaussians centred on the keypoints (raw ``M``)."""
    if not kps:
        return np.zeros((H, W))
    s = cfg.sigma_for(H, W) if sigma is None else sigma
    xs = np.array([k.x for k in kps])
    ys = np.array([k.y for k in kps])
    gx = np.exp(-(np.arange(W)[None, :] - xs[:, None]) ** 2 / (2 * s * s))
    gy = np.exp(-(np.arange(H)[None, :] - ys[:, None]) ** 2 / (2 * s * s))
    return gy.T @ gx


def normalize_region(M: np.ndarray, cfg: OEKFMConfig = OEKFMConfig()) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    lo, hi = M.min(), M.max()
    return 1.0 + (M - lo) / (hi - lo + cfg.epsilon)


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.where(x < 0, 0.0, np.where(x > 1, 1.0, x))


def fuse(F_pred: np.ndarray, M_prime: np.ndarray) -> np.ndarray:
    F_pred = np.asarray(F_pred, dtype=np.float64)
    M_prime = np.asarray(M_prime, dtype=np.float64)
    if F_pred.shape != M_prime.shape:
        raise ValueError(f"prediction {F_pred.shape} and weight map {M_prime.shape} differ")
    return clamp01(F_pred * M_prime)


def weight_map(img: Image, out_shape: tuple[int, int], cfg: OEKFMConfig = OEKFMConfig(),
               detector: KeypointDetector = detect_keypoints):
    """Return ``(M, M')`` with ``M`` at image resolution and ``M'`` at ``out_shape``."""
    kps = detector(img, cfg)
    M = region_map(kps, img.height, img.width, cfg)
    M_prime = resample(normalize_region(M, cfg), *out_shape)
    return M, M_prime


def dump_region(M: np.ndarray, M_prime: np.ndarray, out_dir, stem: str) -> None:
    """Write ``M`` (max-scaled) and ``M'`` (1..2 mapped to 0..65535) as 16-bit PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    peak = M.max()
    m16 = np.zeros(M.shape) if peak <= 0 else M / peak
    cv2.imwrite(str(out / f"{stem}_M.png"), np.round(m16 * 65535).astype(np.uint16))
    cv2.imwrite(str(out / f"{stem}_Mprime.png"),
                np.round(np.clip(M_prime - 1.0, 0, 1) * 65535).astype(np.uint16))
