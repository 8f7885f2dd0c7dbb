import math

import torch
from torch import nn


def fan_in_uniform_(module: nn.Module, generator: torch.Generator) -> None:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every conv/linear weight and bias.

    Draws from ``generator`` in module registration order, so a fixed seed
    yields bit-identical parameters.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            w = m.weight
            fan_in = w.shape[1] * (w[0, 0].numel() if w.ndim > 2 else 1)
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                w.copy_(torch.rand(w.shape, generator=generator, dtype=w.dtype) * 2 * bound - bound)
                if m.bias is not None:
                    m.bias.copy_(
                        torch.rand(m.bias.shape, generator=generator, dtype=w.dtype) * 2 * bound - bound)
