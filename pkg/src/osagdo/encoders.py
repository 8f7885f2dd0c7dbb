"""Vision and text encoders.

Two kinds are supported behind one signature:

* ``toy``: seeded random projections, cheap and fully deterministic. Used for
  desk-scale training and every test in this repository.
* ``adapter:<name>``: a frozen pretrained backbone registered at runtime with
  :func:`register_adapter`. Backbone weights are never trained here.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .core import FeatureMap, Image, ShapeError


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "toy"
    input_size: int = 224
    patch_size: int = 14
    C: int = 384
    C_t: int = 128
    d_tok: int = 96
    seed: int = 0

    def __post_init__(self):
        if self.input_size % self.patch_size:
            raise ValueError(
                f"input_size {self.input_size} not divisible by patch_size {self.patch_size}")
        if not (self.kind == "toy" or self.kind.startswith("adapter:")):
            raise ValueError(f"unknown encoder kind {self.kind!r}")

    @property
    def grid(self) -> tuple[int, int]:
        n = self.input_size // self.patch_size
        return n, n


@dataclass(frozen=True)
class VisionEncoding:
    patches: FeatureMap
    cls: np.ndarray


@dataclass(frozen=True)
class TextEmbedding:
    values: np.ndarray

    @property
    def N(self) -> int:
        return self.values.shape[0]


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def _word_key(word: str) -> int:
    return int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")


def tokenize(name: str) -> list[str]:
    """Split an affordance name like ``grasp_sleeve`` into words."""
    return [t for t in re.split(r"[\s_]+", name.strip().lower()) if t]


def token_embeddings(name: str, spec: EncoderSpec) -> np.ndarray:
    """Fixed per-word embeddings (n_words x d_tok) for the toy text path."""
    words = tokenize(name)
    if not words:
        raise ValueError(f"empty class name {name!r}")
    return np.stack([
        _rng(spec.seed, 2, _word_key(w)).normal(0.0, 1.0 / np.sqrt(spec.d_tok), spec.d_tok)
        for w in words
    ])


class ToyVisionEncoder:
    """Per-patch flatten, seeded Gaussian projection, tanh squashing."""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        dim = spec.patch_size * spec.patch_size * 3
        self.projection = _rng(spec.seed, 1).normal(0.0, 1.0 / np.sqrt(dim), (dim, spec.C))

    def __call__(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, p = self.spec.input_size, self.spec.patch_size
        n = s // p
        x = pixels.astype(np.float64) / 127.5 - 1.0
        x = x.reshape(n, p, n, p, 3).transpose(0, 2, 1, 3, 4).reshape(n * n, p * p * 3)
        patches = np.tanh(x @ self.projection)
        return patches, patches.mean(axis=0)


class ToyTextEncoder(nn.Module):
    """Mean over the prompt's vectors, fixed linear map to C_t, L2 normalize."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        w = _rng(spec.seed, 3).normal(0.0, 1.0 / np.sqrt(spec.d_tok), (spec.d_tok, spec.C_t))
        self.register_buffer("weight", torch.from_numpy(w))

    def forward(self, prompts: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(prompts) == 0:
            raise ValueError("no prompts given")
        rows = []
        for p in prompts:
            if p.ndim != 2 or p.shape[0] == 0:
                raise ValueError("each prompt must be a non-empty sequence of vectors")
            rows.append(p.mean(dim=0))
        z = torch.stack(rows) @ self.weight.to(rows[0].dtype)
        return z / z.norm(dim=1, keepdim=True)


_ADAPTERS: dict[str, tuple[Callable, Callable]] = {}


def register_adapter(name: str, vision_factory: Callable, text_factory: Callable) -> None:
    """Register a pretrained backbone pair under ``adapter:<name>``.

    ``vision_factory(spec)`` must return a callable mapping an
    ``input_size x input_size x 3`` uint8 raster to ``(patches L x C, cls C)``.
    ``text_factory(spec)`` must return an ``nn.Module`` with the same call
    contract as :class:`ToyTextEncoder`. Both are treated as frozen.
    """
    _ADAPTERS[name] = (vision_factory, text_factory)


def _adapter(spec: EncoderSpec):
    name = spec.kind.split(":", 1)[1]
    if name not in _ADAPTERS:
        raise KeyError(f"no adapter registered as {name!r}; known: {sorted(_ADAPTERS)}")
    return _ADAPTERS[name]


@lru_cache(maxsize=8)
def vision_encoder(spec: EncoderSpec):
    if spec.kind == "toy":
        return ToyVisionEncoder(spec)
    return _adapter(spec)[0](spec)


@lru_cache(maxsize=8)
def text_encoder(spec: EncoderSpec) -> nn.Module:
    enc = ToyTextEncoder(spec) if spec.kind == "toy" else _adapter(spec)[1](spec)
    for p in enc.parameters():
        p.requires_grad_(False)
    return enc.double()


def encode_image(img: Image, spec: EncoderSpec) -> VisionEncoding:
    if (img.height, img.width) != (spec.input_size, spec.input_size):
        raise ShapeError(
            f"image is {img.height}x{img.width}, encoder expects {spec.input_size}x{spec.input_size}")
    patches, cls = vision_encoder(spec)(img.pixels)
    patches = np.asarray(patches, dtype=np.float64)
    cls = np.asarray(cls, dtype=np.float64)
    if patches.shape != (spec.grid[0] * spec.grid[1], spec.C):
        raise ShapeError(f"backbone returned patches of shape {patches.shape}")
    return VisionEncoding(FeatureMap(patches, spec.grid), cls)


def embed_prompts(prompts, spec: EncoderSpec) -> TextEmbedding:
    seqs = [torch.as_tensor(np.asarray(p, dtype=np.float64)) for p in prompts]
    with torch.no_grad():
        out = text_encoder(spec)(seqs)
    return TextEmbedding(out.numpy().copy())
