"""Normalization layers and residual blocks.

Conditional batch norm keeps one (gain, bias) row per class and selects the
row by the conditioning label; running statistics are plain float32 buffers
so checkpoints stay a flat bag of float arrays. Blocks follow the
pre-activation resnet recipe: the generator upsamples with nearest-neighbor
before the first conv, the discriminator downsamples with 2x average
pooling after the second.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DataError
from .spectral import SNConv2d, SNLinear


def conditional_batch_norm(
    h: torch.Tensor,
    c: torch.Tensor,
    gain: torch.Tensor,
    bias: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Normalize ``h`` (B, C, H, W) per channel, then scale and shift by the
    class-indexed rows of ``gain`` and ``bias`` (num_classes, C).

    In training mode the batch statistics are used (biased variance, as in
    standard batch norm) and the running buffers are updated in place with
    the unbiased variance; in eval mode the running buffers are used.
    """
    if c.max() >= gain.shape[0] or c.min() < 0:
        raise DataError(
            f"class index out of range for {gain.shape[0]} conditioning rows"
        )
    if training:
        mean = h.mean(dim=(0, 2, 3))
        var = h.var(dim=(0, 2, 3), unbiased=False)
        with torch.no_grad():
            count = h.numel() / h.shape[1]
            unbiased = var * count / max(count - 1, 1)
            running_mean.mul_(1 - momentum).add_(momentum * mean)
            running_var.mul_(1 - momentum).add_(momentum * unbiased)
    else:
        mean, var = running_mean, running_var
    h_norm = (h - mean[None, :, None, None]) / torch.sqrt(
        var[None, :, None, None] + eps
    )
    return gain[c][:, :, None, None] * h_norm + bias[c][:, :, None, None]


class ConditionalBatchNorm2d(nn.Module):
    def __init__(
        self, num_classes: int, num_features: int, eps: float = 1e-5, momentum: float = 0.1
    ):
        super().__init__()
        self.num_classes = num_classes
        self.eps = eps
        self.momentum = momentum
        self.gain = nn.Parameter(torch.ones(num_classes, num_features))
        self.bias = nn.Parameter(torch.zeros(num_classes, num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return conditional_batch_norm(
            h,
            c,
            self.gain,
            self.bias,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class UnconditionalBatchNorm2d(ConditionalBatchNorm2d):
    """Single-class conditional batch norm, for the generator output stage."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__(1, num_features, eps, momentum)

    def forward(self, h: torch.Tensor) -> torch.Tensor:  # type: ignore[override]
        c = torch.zeros(h.shape[0], dtype=torch.long, device=h.device)
        return super().forward(h, c)


class GenBlock(nn.Module):
    """Upsampling pre-activation residual block with class conditioning."""

    def __init__(self, in_ch: int, out_ch: int, num_classes: int, upsample: bool = True):
        super().__init__()
        self.upsample = upsample
        self.bn1 = ConditionalBatchNorm2d(num_classes, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn2 = ConditionalBatchNorm2d(num_classes, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.learned_shortcut = in_ch != out_ch or upsample
        if self.learned_shortcut:
            self.conv_sc = nn.Conv2d(in_ch, out_ch, 1)

    def _up(self, h: torch.Tensor) -> torch.Tensor:
        return F.interpolate(h, scale_factor=2, mode="nearest") if self.upsample else h

    def forward(self, h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.bn1(h, c))
        x = self.conv1(self._up(x))
        x = self.conv2(F.relu(self.bn2(x, c)))
        s = self._up(h)
        if self.learned_shortcut:
            s = self.conv_sc(s)
        return x + s


class DiscBlock(nn.Module):
    """Downsampling pre-activation residual block; spectral norm optional so
    the same trunk serves both the discriminator and plain classifiers."""

    def __init__(self, in_ch: int, out_ch: int, downsample: bool = True, spectral: bool = True):
        super().__init__()
        conv = SNConv2d if spectral else nn.Conv2d
        self.downsample = downsample
        self.conv1 = conv(in_ch, out_ch, 3, padding=1)
        self.conv2 = conv(out_ch, out_ch, 3, padding=1)
        self.learned_shortcut = in_ch != out_ch or downsample
        if self.learned_shortcut:
            self.conv_sc = conv(in_ch, out_ch, 1)

    def _down(self, h: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(h, 2) if self.downsample else h

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        x = self.conv1(F.relu(h))
        x = self.conv2(F.relu(x))
        x = self._down(x)
        s = h
        if self.learned_shortcut:
            s = self.conv_sc(s)
        s = self._down(s)
        return x + s


class DiscStemBlock(nn.Module):
    """First discriminator block: no pre-activation on the raw image, and the
    shortcut pools before its 1x1 conv."""

    def __init__(self, in_ch: int, out_ch: int, spectral: bool = True):
        super().__init__()
        conv = SNConv2d if spectral else nn.Conv2d
        self.conv1 = conv(in_ch, out_ch, 3, padding=1)
        self.conv2 = conv(out_ch, out_ch, 3, padding=1)
        self.conv_sc = conv(in_ch, out_ch, 1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        x = self.conv1(h)
        x = self.conv2(F.relu(x))
        x = F.avg_pool2d(x, 2)
        s = self.conv_sc(F.avg_pool2d(h, 2))
        return x + s


class ImageTrunk(nn.Module):
    """Stack of downsampling blocks ending in relu and global sum pooling.

    Output feature dimension is ``base_channels * 2 ** (num_blocks - 1)``;
    each block halves the spatial extent, so the input side must be
    divisible by ``2 ** num_blocks``.
    """

    def __init__(
        self,
        in_channels: int,
        base_channels: int,
        num_blocks: int,
        spectral: bool = True,
    ):
        super().__init__()
        if num_blocks < 1:
            raise DataError("trunk needs at least one block")
        widths = [base_channels * 2**i for i in range(num_blocks)]
        blocks: list[nn.Module] = [DiscStemBlock(in_channels, widths[0], spectral=spectral)]
        for a, b in zip(widths, widths[1:]):
            blocks.append(DiscBlock(a, b, downsample=True, spectral=spectral))
        self.blocks = nn.ModuleList(blocks)
        self.feature_dim = widths[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return F.relu(h).sum(dim=(2, 3))
