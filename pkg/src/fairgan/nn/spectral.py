"""Spectral normalization via power iteration.

The functional form keeps its power-iteration vector in an explicit state
object so callers control persistence; the module wrappers store it as a
buffer, advance it once per training-mode forward, and reuse the frozen
estimate in eval mode. Gradients flow through the weight only: the singular
vectors are treated as constants of the current iterate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMA_FLOOR = 1e-12


def _l2normalize(v: torch.Tensor, eps: float = SIGMA_FLOOR) -> torch.Tensor:
    return v / (v.norm() + eps)


@dataclass
class SpectralNormState:
    """Persistent left singular vector estimate for one weight matrix."""

    u: torch.Tensor  # (rows,), unit norm
    n_power_iterations: int = 1

    @classmethod
    def fresh(
        cls,
        weight: torch.Tensor,
        n_power_iterations: int = 1,
        generator: torch.Generator | None = None,
    ) -> "SpectralNormState":
        rows = weight.reshape(weight.shape[0], -1).shape[0]
        u = torch.randn(rows, generator=generator, dtype=weight.dtype)
        return cls(u=_l2normalize(u), n_power_iterations=n_power_iterations)


def spectral_normalize(
    weight: torch.Tensor, state: SpectralNormState
) -> tuple[torch.Tensor, SpectralNormState]:
    """Divide ``weight`` by its estimated largest singular value.

    Tensors with more than two dimensions are flattened to
    (out_features, -1) for the estimate, the convolutional convention.
    Returns the normalized weight and the advanced state; the input state
    is not mutated. A singular value below ``SIGMA_FLOOR`` is clamped to
    the floor with a warning rather than dividing by zero.
    """
    w = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        u = _l2normalize(state.u.to(w.dtype))
        for _ in range(state.n_power_iterations):
            v = _l2normalize(w.t().mv(u))
            u = _l2normalize(w.mv(v))
        v = _l2normalize(w.t().mv(u))
    sigma = torch.dot(u, w.mv(v))
    if float(sigma.detach()) < SIGMA_FLOOR:
        warnings.warn(
            f"spectral norm estimate {float(sigma):.3e} below floor; clamping",
            stacklevel=2,
        )
        sigma = sigma.clamp_min(SIGMA_FLOOR)
    return weight / sigma, replace(state, u=u.detach())


class _SpectralNormMixin(nn.Module):
    """Owns the ``weight_u`` buffer and the train/eval advance policy."""

    weight: nn.Parameter
    weight_u: torch.Tensor

    def _init_u(self, n_power_iterations: int) -> None:
        self.n_power_iterations = int(n_power_iterations)
        rows = self.weight.reshape(self.weight.shape[0], -1).shape[0]
        self.register_buffer("weight_u", _l2normalize(torch.randn(rows)))

    def normalized_weight(self) -> torch.Tensor:
        n = self.n_power_iterations if self.training else 0
        state = SpectralNormState(u=self.weight_u, n_power_iterations=n)
        w, state = spectral_normalize(self.weight, state)
        if self.training:
            self.weight_u = state.u
        return w


class SNLinear(_SpectralNormMixin):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        n_power_iterations: int = 1,
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        nn.init.xavier_uniform_(self.weight)
        if bias:
            self.bias = nn.Parameter(torch.zeros(out_features))
        else:
            self.register_parameter("bias", None)
        self._init_u(n_power_iterations)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.normalized_weight(), self.bias)


class SNConv2d(_SpectralNormMixin):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        n_power_iterations: int = 1,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels, kernel_size, kernel_size)
        )
        nn.init.xavier_uniform_(self.weight)
        if bias:
            self.bias = nn.Parameter(torch.zeros(out_channels))
        else:
            self.register_parameter("bias", None)
        self._init_u(n_power_iterations)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(
            x, self.normalized_weight(), self.bias, stride=self.stride, padding=self.padding
        )
