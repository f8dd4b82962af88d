"""Conditional generator emitting an image and a soft outcome from one latent.

The image path is a linear projection to a small spatial tensor followed by
upsampling residual blocks with conditional batch norm, then BN/relu/conv
and tanh. The outcome path is two dense layers on the latent (optionally
concatenated with a class embedding), also ending in tanh, so both heads of
a fake sample are driven by the same (c, z) draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError
from .layers import GenBlock, UnconditionalBatchNorm2d


class OutcomeConditioning(Enum):
    """How the outcome head sees the class: through a learned embedding
    concatenated with the latent, or not at all (latent only)."""

    CLASS_EMBED = "class_embed"
    LATENT_ONLY = "latent_only"


@dataclass(frozen=True)
class GeneratorSpec:
    noise_dim: int = 128
    num_classes: int = 2
    base_channels: int = 64
    image_shape: tuple[int, int, int] = (3, 64, 64)
    num_up_blocks: int = 4
    outcome_hidden_dim: int = 128
    outcome_conditioning: OutcomeConditioning = OutcomeConditioning.CLASS_EMBED

    def __post_init__(self) -> None:
        ch, h, w = self.image_shape
        if self.noise_dim < 1 or self.base_channels < 1 or self.outcome_hidden_dim < 1:
            raise ConfigError("generator dimensions must be positive")
        if self.num_classes < 2:
            raise ConfigError("generator needs at least two classes")
        if self.num_up_blocks < 1:
            raise ConfigError("generator needs at least one upsampling block")
        if h != w:
            raise ConfigError(f"images must be square, got {h}x{w}")
        factor = 2**self.num_up_blocks
        if h % factor or h // factor < 1:
            raise ConfigError(
                f"image side {h} not divisible by 2**{self.num_up_blocks}"
            )
        if ch not in (1, 3):
            raise ConfigError(f"images must have 1 or 3 channels, got {ch}")

    @property
    def initial_size(self) -> int:
        return self.image_shape[1] // 2**self.num_up_blocks

    @property
    def channel_widths(self) -> list[int]:
        """Block output channels, widest first: [.., 4, 2, 1] * base_channels."""
        return [self.base_channels * 2**i for i in reversed(range(self.num_up_blocks))]

    @property
    def initial_channels(self) -> int:
        return self.base_channels * 2**self.num_up_blocks


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        s0 = spec.initial_size
        self.linear = nn.Linear(spec.noise_dim, spec.initial_channels * s0 * s0)
        widths = [spec.initial_channels] + spec.channel_widths
        self.blocks = nn.ModuleList(
            GenBlock(a, b, spec.num_classes, upsample=True)
            for a, b in zip(widths, widths[1:])
        )
        self.out_bn = UnconditionalBatchNorm2d(widths[-1])
        self.out_conv = nn.Conv2d(widths[-1], spec.image_shape[0], 3, padding=1)
        if spec.outcome_conditioning is OutcomeConditioning.CLASS_EMBED:
            self.class_embed = nn.Embedding(spec.num_classes, spec.noise_dim)
            y_in = 2 * spec.noise_dim
        else:
            y_in = spec.noise_dim
        self.y_fc1 = nn.Linear(y_in, spec.outcome_hidden_dim)
        self.y_fc2 = nn.Linear(spec.outcome_hidden_dim, 1)

    def forward(self, c: torch.Tensor, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Map class labels (B,) and latents (B, noise_dim) to images in
        [-1, 1] and soft outcomes in (-1, 1)."""
        if z.shape[1] != self.spec.noise_dim:
            raise ConfigError(
                f"latent dim {z.shape[1]} != spec noise_dim {self.spec.noise_dim}"
            )
        s0 = self.spec.initial_size
        h = self.linear(z).reshape(z.shape[0], self.spec.initial_channels, s0, s0)
        for block in self.blocks:
            h = block(h, c)
        x = torch.tanh(self.out_conv(F.relu(self.out_bn(h))))
        if self.spec.outcome_conditioning is OutcomeConditioning.CLASS_EMBED:
            t = torch.cat([z, self.class_embed(c)], dim=1)
        else:
            t = z
        y = torch.tanh(self.y_fc2(F.relu(self.y_fc1(t)))).squeeze(-1)
        return x, y
