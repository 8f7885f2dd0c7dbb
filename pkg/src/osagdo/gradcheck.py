"""Central finite-difference check of autograd gradients (float64)."""
from __future__ import annotations

from typing import Callable

import torch

# Central differences at eps=1e-5 carry ~1e-11 roundoff, so relative error is
# meaningless for gradients that are exactly zero (e.g. key biases under
# softmax). Denominators are floored here; below it the check is absolute.
REL_FLOOR = 1e-6


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()),
                          torch.full_like(analytic, REL_FLOOR))
    return (analytic - numeric).abs() / denom


def check_gradients(loss_fn: Callable[[], torch.Tensor], params: dict[str, torch.Tensor],
                    eps: float = 1e-5) -> dict[str, float]:
    """Max elementwise relative error between autograd and central differences.

    ``loss_fn`` recomputes the scalar loss from the current values of
    ``params`` (leaf tensors with ``requires_grad``). Every element of every
    parameter is perturbed, so keep dimensions tiny.
    """
    for p in params.values():
        if p.dtype != torch.float64:
            raise TypeError("gradient checks require float64 parameters")
        p.grad = None
    loss_fn().backward()
    analytic = {k: p.grad.detach().clone() for k, p in params.items()}
    out = {}
    with torch.no_grad():
        for name, p in params.items():
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * eps)
            out[name] = float(relative_error(analytic[name], numeric).max())
    return out
