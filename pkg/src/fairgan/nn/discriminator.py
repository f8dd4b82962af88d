"""Projection discriminator over (image, outcome) pairs.

A shared spectrally-normalized trunk produces features phi(x). Four outputs
hang off it: a joint source logit using the projection trick against the
continuous outcome, an image-only source logit, class logits read from the
image, and class logits read from the outcome alone through a small dense
head. The last of these is the handle the generator's fairness penalty
pulls on.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, NumericError
from .layers import ImageTrunk
from .spectral import SNLinear


@dataclass(frozen=True)
class DiscriminatorSpec:
    base_channels: int = 64
    num_classes: int = 2
    in_channels: int = 3
    num_down_blocks: int = 4
    y_head_hidden_dim: int = 128

    def __post_init__(self) -> None:
        if self.base_channels < 1 or self.y_head_hidden_dim < 1:
            raise ConfigError("discriminator dimensions must be positive")
        if self.num_classes < 2:
            raise ConfigError("discriminator needs at least two classes")
        if self.num_down_blocks < 1:
            raise ConfigError("discriminator needs at least one block")
        if self.in_channels not in (1, 3):
            raise ConfigError(f"images must have 1 or 3 channels, got {self.in_channels}")

    @property
    def feature_dim(self) -> int:
        return self.base_channels * 2 ** (self.num_down_blocks - 1)


@dataclass(frozen=True)
class DiscriminatorOutputs:
    """All four discriminator readings for a batch; logits, unsquashed."""

    s_joint: torch.Tensor  # (B,) source logit for the (x, y) pair
    s_x: torch.Tensor  # (B,) source logit for the image alone
    logits_c_given_x: torch.Tensor  # (B, num_classes)
    logits_c_given_y: torch.Tensor  # (B, num_classes)


@dataclass(frozen=True)
class ImageOnlyOutputs:
    """Trunk readings available without an outcome, for unlabeled images."""

    s_x: torch.Tensor
    logits_c_given_x: torch.Tensor


def projection_logit(
    phi_x: torch.Tensor, y: torch.Tensor, v_y: torch.Tensor, v_x: torch.Tensor
) -> torch.Tensor:
    """Joint source logit ``y * <v_y, phi(x)> + <v_x, phi(x)>``.

    ``phi_x`` is (B, F), ``y`` is (B,), and the two direction vectors are
    (F,). The outcome enters only through the bilinear first term.
    """
    if phi_x.shape[1] != v_y.shape[0] or v_y.shape != v_x.shape:
        raise ConfigError("projection vector dimensions do not match features")
    return y * (phi_x @ v_y) + phi_x @ v_x


def _check_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"discriminator output {name} is non-finite")
    return t


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.trunk = ImageTrunk(
            spec.in_channels, spec.base_channels, spec.num_down_blocks, spectral=True
        )
        feat = self.trunk.feature_dim
        self.head_sx = SNLinear(feat, 1)
        self.head_cx = SNLinear(feat, spec.num_classes)
        self.proj_y = SNLinear(feat, 1, bias=False)
        self.proj_x = SNLinear(feat, 1, bias=False)
        self.y_fc1 = SNLinear(1, spec.y_head_hidden_dim)
        self.y_fc2 = SNLinear(spec.y_head_hidden_dim, spec.num_classes)

    @property
    def feature_dim(self) -> int:
        return self.trunk.feature_dim

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.trunk(x)

    def outcome_logits(self, y: torch.Tensor) -> torch.Tensor:
        """Class logits from the outcome scalar alone, (B,) -> (B, K)."""
        if y.dim() != 1:
            raise ConfigError(f"outcome must be a (B,) vector, got shape {tuple(y.shape)}")
        if y.numel() and float(y.detach().abs().max()) > 1.0:
            raise NumericError("outcome values must lie in [-1, 1]")
        return self.y_fc2(F.relu(self.y_fc1(y.unsqueeze(-1))))

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> DiscriminatorOutputs:
        phi = self.features(x)
        s_x = self.head_sx(phi).squeeze(-1)
        logits_cx = self.head_cx(phi)
        s_joint = y * self.proj_y(phi).squeeze(-1) + self.proj_x(phi).squeeze(-1)
        logits_cy = self.outcome_logits(y)
        return DiscriminatorOutputs(
            s_joint=_check_finite("s_joint", s_joint),
            s_x=_check_finite("s_x", s_x),
            logits_c_given_x=_check_finite("logits_c_given_x", logits_cx),
            logits_c_given_y=_check_finite("logits_c_given_y", logits_cy),
        )

    def forward_image_only(self, x: torch.Tensor) -> ImageOnlyOutputs:
        """Score images with no outcome attached (the unlabeled pool)."""
        phi = self.features(x)
        return ImageOnlyOutputs(
            s_x=_check_finite("s_x", self.head_sx(phi).squeeze(-1)),
            logits_c_given_x=_check_finite("logits_c_given_x", self.head_cx(phi)),
        )
