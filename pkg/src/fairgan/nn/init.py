"""Seeded weight initialization that avoids global RNG state."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def _xavier_uniform_(w: torch.Tensor, generator: torch.Generator, gain: float) -> None:
    fan_out = w.shape[0] * (w[0][0].numel() if w.dim() > 2 else 1)
    fan_in = w[0].numel()
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    w.uniform_(-bound, bound, generator=generator)


def init_module(module: nn.Module, generator: torch.Generator, gain: float = 1.0) -> None:
    """Re-initialize all conv/linear/embedding weights from ``generator``.

    Xavier-uniform for weight matrices, zeros for biases, unit normal for
    embeddings. Iteration follows ``named_parameters`` order, so the same
    seed always produces bit-identical weights for a fixed architecture.
    """
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "bias":
                p.zero_()
            elif leaf == "gain":
                p.fill_(1.0)
            elif "embed" in name:
                p.normal_(0.0, 1.0, generator=generator)
            elif p.dim() >= 2:
                _xavier_uniform_(p, generator, gain)
        for name, b in module.named_buffers():
            if name.endswith("weight_u"):
                b.normal_(0.0, 1.0, generator=generator)
                b.div_(b.norm().clamp_min(1e-12))
