"""Instance-conditional prompts.

A small Linear-ReLU-Linear Meta-Net (hidden width ``d_vis // 24``) turns the
patch mean of the enhanced features into a shift ``pi``. The shift is added
to every learnable context vector, and the shifted context is prepended to
each class's token embeddings::

    t_i(x) = [v_1 + pi, ..., v_M + pi, c_i]

With ``pi = 0`` this reduces to static prompt learning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoders import EncoderSpec, TextEmbedding, token_embeddings

METANET_REDUCTION = 24


@dataclass(frozen=True)
class ClassTokenTable:
    names: tuple[str, ...]
    tokens: tuple[np.ndarray, ...]

    @classmethod
    def from_names(cls, names, spec: EncoderSpec) -> "ClassTokenTable":
        names = tuple(names)
        return cls(names, tuple(token_embeddings(n, spec) for n in names))

    def __len__(self):
        return len(self.names)


class PromptContext(nn.Module):
    def __init__(self, d_vis: int, d_tok: int, C_t: int, n_ctx: int = 4, tau: float = 0.07,
                 cocoop_on: bool = True):
        super().__init__()
        hidden = d_vis // METANET_REDUCTION
        if hidden < 1:
            raise ValueError(f"d_vis={d_vis} too small for a /{METANET_REDUCTION} bottleneck")
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.context = nn.Parameter(torch.zeros(n_ctx, d_tok))
        self.metanet = nn.Sequential(nn.Linear(d_vis, hidden), nn.ReLU(), nn.Linear(hidden, d_tok))
        # maps the pooled image feature into the text embedding space for the class head
        self.image_proj = nn.Linear(d_vis, C_t)
        self.tau = tau
        self.cocoop_on = cocoop_on

    @property
    def n_ctx(self) -> int:
        return self.context.shape[0]

    @property
    def hidden(self) -> int:
        return self.metanet[0].out_features

    def conditioning_vector(self, f_enhanced: torch.Tensor) -> torch.Tensor:
        if not self.cocoop_on:
            return torch.zeros(self.context.shape[1], dtype=self.context.dtype)
        return self.metanet(f_enhanced.mean(dim=0))

    def build_prompts(self, table: ClassTokenTable, pi: torch.Tensor) -> list[torch.Tensor]:
        ctx = self.context + pi[None, :]
        return [torch.cat([ctx, torch.as_tensor(tok, dtype=ctx.dtype)]) for tok in table.tokens]

    def image_feature(self, f_enhanced: torch.Tensor) -> torch.Tensor:
        return self.image_proj(f_enhanced.mean(dim=0))


def class_probabilities_t(x_feat: torch.Tensor, F_t: torch.Tensor, tau: float) -> torch.Tensor:
    xn = x_feat.norm()
    tn = F_t.norm(dim=1)
    if xn.item() == 0 or bool((tn == 0).any()):
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    sim = (F_t @ x_feat) / (tn * xn)
    return torch.softmax(sim / tau, dim=0)


# numpy-facing wrappers

def conditioning_vector(f_enhanced, p: PromptContext) -> np.ndarray:
    values = getattr(f_enhanced, "values", f_enhanced)
    with torch.no_grad():
        return p.conditioning_vector(torch.as_tensor(values, dtype=torch.float64)).numpy().copy()


def build_prompts(p: PromptContext, table: ClassTokenTable, pi) -> list[np.ndarray]:
    pi = torch.as_tensor(np.asarray(pi, dtype=np.float64))
    if pi.shape != (p.context.shape[1],):
        raise ValueError(f"pi must have length {p.context.shape[1]}, got {tuple(pi.shape)}")
    with torch.no_grad():
        return [s.numpy().copy() for s in p.build_prompts(table, pi)]


def class_probabilities(x_feat, F_t, tau: float) -> np.ndarray:
    values = F_t.values if isinstance(F_t, TextEmbedding) else F_t
    return class_probabilities_t(torch.as_tensor(np.asarray(x_feat, dtype=np.float64)),
                                 torch.as_tensor(np.asarray(values, dtype=np.float64)),
                                 tau).numpy().copy()
