"""Full grounding network: enhancement, prompting, decoding, keypoint fusion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .core import Image
from .decoder import CLSGuidedDecoder
from .defosem import DefoSEM
from .encoders import EncoderSpec, encode_image, text_encoder
from .nn_init import fan_in_uniform_
from .oekfm import OEKFMConfig, fuse, weight_map
from .prompts import ClassTokenTable, PromptContext, class_probabilities_t

CONTEXT_INIT_STD = 0.02


@dataclass
class TrainConfig:
    iterations: int = 10000
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    defosem_on: bool = True
    cocoop_on: bool = True
    oekfm_on: bool = True
    channel_gate_on: bool = True
    spatial_gate_on: bool = True
    cls_modulation_on: bool = True
    n_features: int = 400
    oekfm_sigma: float = 8.0
    loss: str = "bce"
    aux_class_loss_weight: float = 0.1
    label_dropout: float = 0.5
    n_ctx: int = 4
    tau: float = 0.07
    depth: int = 2
    sharpness: float = 10.0
    annotation_sigma: float = 10.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.loss not in ("bce", "kld"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def oekfm(self) -> OEKFMConfig:
        return OEKFMConfig(n_features=self.n_features, sigma_px=self.oekfm_sigma)


class GroundingModel(nn.Module):
    def __init__(self, cfg: TrainConfig, enc: EncoderSpec, affordances):
        super().__init__()
        self.cfg = cfg
        self.enc = enc
        self.affordances = list(affordances)
        self.table = ClassTokenTable.from_names(self.affordances, enc)
        self.defosem = DefoSEM(enc.C, enc.grid, channel_gate_on=cfg.channel_gate_on,
                               spatial_gate_on=cfg.spatial_gate_on)
        self.prompt = PromptContext(enc.C, enc.d_tok, enc.C_t, n_ctx=cfg.n_ctx, tau=cfg.tau,
                                    cocoop_on=cfg.cocoop_on)
        self.decoder = CLSGuidedDecoder(enc.C, enc.C_t, depth=cfg.depth, sharpness=cfg.sharpness,
                                        cls_modulation=cfg.cls_modulation_on)
        self.double()

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        for m in (self.defosem, self.prompt, self.decoder):
            fan_in_uniform_(m, g)
        with torch.no_grad():
            self.defosem.default_label.zero_()
            # pi starts at 0 so training begins from static prompts
            self.prompt.metanet[2].weight.zero_()
            self.prompt.metanet[2].bias.zero_()
            self.prompt.context.copy_(
                torch.randn(self.prompt.context.shape, generator=g, dtype=torch.float64)
                * CONTEXT_INIT_STD)

    @property
    def text(self):
        return text_encoder(self.enc)

    def forward(self, patches: torch.Tensor, cls: torch.Tensor, label: torch.Tensor | None = None,
                out_size: tuple[int, int] | None = None, which: list[int] | None = None) -> dict:
        f = self.defosem(patches, label) if self.cfg.defosem_on else patches
        pi = self.prompt.conditioning_vector(f)
        F_t = self.text(self.prompt.build_prompts(self.table, pi))
        probs = class_probabilities_t(self.prompt.image_feature(f), F_t, self.prompt.tau)
        queries = F_t if which is None else F_t[which]
        size = out_size or (self.enc.input_size, self.enc.input_size)
        maps = self.decoder(f, queries, cls, self.enc.grid, size)
        return {"maps": maps, "probs": probs, "pi": pi, "features": f}


@dataclass
class Prediction:
    F_pred: np.ndarray
    P_final: np.ndarray
    M: np.ndarray | None = None
    M_prime: np.ndarray | None = None
    probs: np.ndarray = field(default_factory=lambda: np.zeros(0))


def predict(model: GroundingModel, img: Image, use_oekfm: bool | None = None,
            source: Image | None = None, oekfm_cfg: OEKFMConfig | None = None) -> Prediction:
    """Run inference on an encoder-sized image.

    ``source`` is the original-resolution image the keypoint region map is
    computed on (defaults to ``img``); ``M'`` is resampled to the prediction.
    """
    use_oekfm = model.cfg.oekfm_on if use_oekfm is None else use_oekfm
    enc = encode_image(img, model.enc)
    with torch.no_grad():
        out = model(torch.as_tensor(enc.patches.values), torch.as_tensor(enc.cls))
    F_pred = out["maps"].numpy().copy()
    probs = out["probs"].numpy().copy()
    if not use_oekfm:
        return Prediction(F_pred, F_pred.copy(), probs=probs)
    M, M_prime = weight_map(source if source is not None else img, F_pred.shape[1:],
                            oekfm_cfg or model.cfg.oekfm)
    return Prediction(F_pred, fuse(F_pred, np.broadcast_to(M_prime, F_pred.shape)), M, M_prime,
                      probs)
