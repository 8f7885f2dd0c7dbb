"""Label-conditioned dual gating of patch features.

Pipeline for one image with features ``f`` (L x C on an h x w grid) and an
optional dense label map:

1. adaptive average pooling of the label to (h, w)
2. 1x1 conv aligning label channels to C  -> ``L~``
3. 1x1 conv adjusting the visual features -> ``F~``
4. spatial gate  ``W_s = sigmoid(conv3x3(F~))``, one value per cell
5. channel gate  ``W_c = sigmoid(conv1x1(GAP(concat(F~, L~))))``, one value per channel
6. ``F' = F~ * (0.5 + W_c) * (0.5 + W_s)``

Without a label, a trainable default label map stands in for the pooled label.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import FeatureMap, Heatmap, ShapeError


class DefoSEM(nn.Module):
    def __init__(self, C: int, grid: tuple[int, int], label_channels: int = 1,
                 channel_gate_on: bool = True, spatial_gate_on: bool = True):
        super().__init__()
        self.C = C
        self.grid = tuple(grid)
        self.label_align = nn.Conv2d(label_channels, C, 1)
        self.visual_adjust = nn.Conv2d(C, C, 1)
        self.spatial_gate = nn.Conv2d(C, 1, 3, padding=1)
        self.channel_gate = nn.Conv2d(2 * C, C, 1)
        self.default_label = nn.Parameter(torch.zeros(label_channels, *self.grid))
        self.channel_gate_on = channel_gate_on
        self.spatial_gate_on = spatial_gate_on

    def _pooled_label(self, label: torch.Tensor | None) -> torch.Tensor:
        if label is None:
            return self.default_label
        if label.ndim == 2:
            label = label[None]
        return F.adaptive_avg_pool2d(label[None], self.grid)[0]

    def gates(self, x: torch.Tensor, label: torch.Tensor | None = None):
        """Return ``(adjusted, W_c, W_s)`` with shapes (C,h,w), (C,), (h,w)."""
        h, w = self.grid
        if x.shape != (h * w, self.C):
            raise ShapeError(f"features {tuple(x.shape)} do not match grid {h}x{w}, C={self.C}")
        pooled = self._pooled_label(label)
        if pooled.shape[1:] != self.grid:
            raise ShapeError(f"pooled label {tuple(pooled.shape)} does not match grid {self.grid}")
        grid_x = x.T.reshape(1, self.C, h, w)
        adjusted = self.visual_adjust(grid_x)
        label_feat = self.label_align(pooled[None].to(x.dtype))
        w_s = torch.sigmoid(self.spatial_gate(adjusted))[0, 0]
        desc = torch.cat([adjusted, label_feat], dim=1).mean(dim=(2, 3), keepdim=True)
        w_c = torch.sigmoid(self.channel_gate(desc))[0, :, 0, 0]
        return adjusted[0], w_c, w_s

    def forward(self, x: torch.Tensor, label: torch.Tensor | None = None) -> torch.Tensor:
        adjusted, w_c, w_s = self.gates(x, label)
        mult = 1.0
        if self.channel_gate_on:
            mult = mult * (0.5 + w_c)[:, None, None]
        if self.spatial_gate_on:
            mult = mult * (0.5 + w_s)[None]
        out = adjusted * mult
        return out.reshape(self.C, -1).T


def _label_tensor(label) -> torch.Tensor | None:
    if label is None:
        return None
    values = label.values if isinstance(label, Heatmap) else np.asarray(label, dtype=np.float64)
    return torch.as_tensor(values, dtype=torch.float64)


def enhance(f: FeatureMap, label, p: DefoSEM) -> FeatureMap:
    """Gate ``f`` with ``p``; ``label`` may be a Heatmap, array, or None."""
    if tuple(f.grid) != p.grid:
        raise ShapeError(f"feature grid {f.grid} does not match module grid {p.grid}")
    with torch.no_grad():
        out = p(torch.as_tensor(f.values), _label_tensor(label))
    return FeatureMap(out.numpy().copy(), f.grid)


def gate_ranges(p: DefoSEM, f: FeatureMap, label=None) -> tuple[np.ndarray, np.ndarray]:
    """Diagnostic accessor for the internal gates ``(W_c, W_s)``."""
    with torch.no_grad():
        _, w_c, w_s = p.gates(torch.as_tensor(f.values), _label_tensor(label))
    return w_c.numpy().copy(), w_s.numpy().copy()
