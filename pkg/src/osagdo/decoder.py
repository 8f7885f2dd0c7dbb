"""Text-as-query transformer decoder with [CLS] modulation and cosine readout."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import FeatureMap, ShapeError
from .encoders import TextEmbedding

BCE_EPS = 1e-7


class CrossAttentionBlock(nn.Module):
    """Single-head cross-attention of queries over patches, then a 4x MLP; both residual."""

    def __init__(self, C: int):
        super().__init__()
        self.q = nn.Linear(C, C)
        self.k = nn.Linear(C, C)
        self.v = nn.Linear(C, C)
        self.o = nn.Linear(C, C)
        self.ffn = nn.Sequential(nn.Linear(C, 4 * C), nn.GELU(), nn.Linear(4 * C, C))

    def forward(self, queries: torch.Tensor, patches: torch.Tensor) -> torch.Tensor:
        scores = self.q(queries) @ self.k(patches).T / math.sqrt(queries.shape[1])
        queries = queries + self.o(torch.softmax(scores, dim=1) @ self.v(patches))
        return queries + self.ffn(queries)


class CLSGuidedDecoder(nn.Module):
    """Produces one sigmoid map per text row.

    Queries are the projected text embeddings, FiLM-modulated by the global
    token as ``(1 + gamma) * q + beta``. After ``depth`` blocks, each query's
    map is ``sigmoid(sharpness * cos(q_i, patch_j))`` on the patch grid,
    upsampled bilinearly (corner-aligned) to the requested size.
    """

    def __init__(self, C: int, C_t: int, depth: int = 2, sharpness: float = 10.0,
                 cls_modulation: bool = True):
        super().__init__()
        self.C = C
        self.text_proj = nn.Linear(C_t, C)
        self.cls_mod = nn.Linear(C, 2 * C)
        self.blocks = nn.ModuleList(CrossAttentionBlock(C) for _ in range(depth))
        self.sharpness = sharpness
        self.cls_modulation = cls_modulation

    def queries(self, F_t: torch.Tensor, cls: torch.Tensor) -> torch.Tensor:
        q = self.text_proj(F_t)
        if self.cls_modulation:
            gamma, beta = self.cls_mod(cls).chunk(2)
            q = (1.0 + gamma) * q + beta
        return q

    def logits(self, patches: torch.Tensor, F_t: torch.Tensor, cls: torch.Tensor) -> torch.Tensor:
        if patches.ndim != 2 or patches.shape[1] != self.C:
            raise ShapeError(f"patches must be L x {self.C}, got {tuple(patches.shape)}")
        if F_t.ndim != 2 or F_t.shape[1] != self.text_proj.in_features:
            raise ShapeError(f"text embeddings must be N x {self.text_proj.in_features}, "
                             f"got {tuple(F_t.shape)}")
        if cls.shape != (self.C,):
            raise ShapeError(f"cls must have length {self.C}, got {tuple(cls.shape)}")
        q = self.queries(F_t, cls)
        for blk in self.blocks:
            q = blk(q, patches)
        cos = F.normalize(q, dim=1) @ F.normalize(patches, dim=1).T
        return self.sharpness * cos

    def forward(self, patches: torch.Tensor, F_t: torch.Tensor, cls: torch.Tensor,
                grid: tuple[int, int], out_size: tuple[int, int]) -> torch.Tensor:
        h, w = grid
        maps = torch.sigmoid(self.logits(patches, F_t, cls)).reshape(-1, 1, h, w)
        if (h, w) != tuple(out_size):
            maps = F.interpolate(maps, size=tuple(out_size), mode="bilinear", align_corners=True)
        return maps[:, 0]


def bce_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel binary cross-entropy with soft targets."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    p = pred.clamp(BCE_EPS, 1 - BCE_EPS)
    return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean()


def kld_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    P = pred / (pred.sum() + eps)
    G = gt / (gt.sum() + eps)
    return (G * torch.log(G / (P + eps) + eps)).sum()


LOSSES = {"bce": bce_loss, "kld": kld_loss}


def decode(f_enhanced: FeatureMap, F_t: TextEmbedding, cls, p: CLSGuidedDecoder,
           out_size: tuple[int, int]) -> np.ndarray:
    """N_aff x H x W stack of maps in (0, 1)."""
    with torch.no_grad():
        maps = p(torch.as_tensor(f_enhanced.values),
                 torch.as_tensor(np.asarray(F_t.values, dtype=np.float64)),
                 torch.as_tensor(np.asarray(cls, dtype=np.float64)),
                 f_enhanced.grid, out_size)
    return maps.numpy().copy()


def grounding_loss(pred_slice, gt) -> float:
    return float(bce_loss(torch.as_tensor(np.asarray(pred_slice, dtype=np.float64)),
                          torch.as_tensor(np.asarray(gt, dtype=np.float64))))
