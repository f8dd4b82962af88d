"""Adversarial and fairness objectives.

Source (real-vs-generated) terms use the hinge surrogate; the class and
outcome heads use cross entropy. The discriminator learns its class and
outcome heads from real data only, so generated samples never contaminate
the estimate of P(C | .) that the generator is later asked to defeat. The
generator's fairness term rewards making the protected attribute
unpredictable from the generated outcome: fully for demographic parity,
gated by the outcome's positivity for equalized odds.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .datasets import FairnessObjective
from .errors import ConfigError, NumericError
from .nn.discriminator import DiscriminatorOutputs, ImageOnlyOutputs

# Fairness term styles: "adversarial" maximizes the discriminator's loss on
# the generated outcome (the saddle-point form); "uniform" instead pulls the
# head's posterior toward uniform, a bounded alternative kept for ablation.
FAIRNESS_FORMS = ("adversarial", "uniform")


def _require_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if t.numel() and not torch.isfinite(t).all():
        raise NumericError(f"{name} contains non-finite values")
    return t


def hinge_d_source(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Discriminator hinge: mean relu(1 - s_real) + mean relu(1 + s_fake).

    Either side may be empty, in which case it contributes zero.
    """
    _require_finite("real source logits", real_logits)
    _require_finite("fake source logits", fake_logits)
    total = real_logits.new_zeros(())
    if real_logits.numel():
        total = total + F.relu(1.0 - real_logits).mean()
    if fake_logits.numel():
        total = total + F.relu(1.0 + fake_logits).mean()
    return total


def hinge_g_source(fake_logits: torch.Tensor) -> torch.Tensor:
    """Generator hinge: drive fake source logits up, -mean(s_fake)."""
    _require_finite("fake source logits", fake_logits)
    if not fake_logits.numel():
        return fake_logits.new_zeros(())
    return -fake_logits.mean()


def class_ce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross entropy of class logits (B, K) against labels (B,)."""
    _require_finite("class logits", logits)
    if logits.numel() == 0:
        return logits.new_zeros(())
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ConfigError(
            f"labels outside [0, {logits.shape[1]}) for class cross entropy"
        )
    return F.cross_entropy(logits, labels)


def gate_weight(y_soft: torch.Tensor, magnitude: float = 0.8) -> torch.Tensor:
    """Positivity gate in [0, 1]: 1 at y=+magnitude, 0 at y=-magnitude,
    linear in between. Weights the equalized-odds penalty toward samples
    whose generated outcome is favorable."""
    if magnitude <= 0:
        raise ConfigError(f"gate magnitude must be positive, got {magnitude}")
    return torch.clamp((y_soft / magnitude + 1.0) / 2.0, 0.0, 1.0)


@dataclass(frozen=True)
class LossWeights:
    """Per-term multipliers for ablation; all ones reproduces the method."""

    joint_source: float = 1.0
    image_source: float = 1.0
    class_on_image: float = 1.0
    class_on_outcome: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0.0):
                raise ConfigError(f"loss weight {f.name} must be >= 0, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar per-term record of one objective evaluation, for logging."""

    joint_source: float
    image_source: float
    class_on_image: float
    class_on_outcome: float
    total: float

    def as_row(self) -> list[float]:
        return [
            self.joint_source,
            self.image_source,
            self.class_on_image,
            self.class_on_outcome,
            self.total,
        ]

    FIELDS = ("joint_source", "image_source", "class_on_image", "class_on_outcome", "total")


def _breakdown(
    terms: dict[str, torch.Tensor], weights: LossWeights
) -> tuple[torch.Tensor, LossBreakdown]:
    total = (
        weights.joint_source * terms["joint_source"]
        + weights.image_source * terms["image_source"]
        + weights.class_on_image * terms["class_on_image"]
        + weights.class_on_outcome * terms["class_on_outcome"]
    )
    _require_finite("objective total", total)
    return total, LossBreakdown(
        joint_source=float(terms["joint_source"].detach()),
        image_source=float(terms["image_source"].detach()),
        class_on_image=float(terms["class_on_image"].detach()),
        class_on_outcome=float(terms["class_on_outcome"].detach()),
        total=float(total.detach()),
    )


def discriminator_objective(
    real: DiscriminatorOutputs,
    c_real: torch.Tensor,
    fake: DiscriminatorOutputs,
    unlabeled: ImageOnlyOutputs | None = None,
    c_unlabeled: torch.Tensor | None = None,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, LossBreakdown]:
    """Discriminator loss over one batch of outcome-labeled reals, fakes,
    and optionally an outcome-free unlabeled batch.

    The joint source and outcome-class terms see labeled reals only; the
    image source and image-class terms pool labeled and unlabeled reals.
    Fakes enter the two source hinges and nothing else.
    """
    if (unlabeled is None) != (c_unlabeled is None):
        raise ConfigError("unlabeled outputs and labels must be given together")
    sx_real = real.s_x
    cx_logits = real.logits_c_given_x
    cx_labels = c_real
    if unlabeled is not None:
        sx_real = torch.cat([sx_real, unlabeled.s_x])
        cx_logits = torch.cat([cx_logits, unlabeled.logits_c_given_x])
        cx_labels = torch.cat([c_real, c_unlabeled])
    terms = {
        "joint_source": hinge_d_source(real.s_joint, fake.s_joint),
        "image_source": hinge_d_source(sx_real, fake.s_x),
        "class_on_image": class_ce(cx_logits, cx_labels),
        "class_on_outcome": class_ce(real.logits_c_given_y, c_real),
    }
    return _breakdown(terms, weights)


def _fairness_term(
    logits_c_given_y: torch.Tensor,
    c: torch.Tensor,
    y_fake: torch.Tensor,
    objective: FairnessObjective,
    form: str,
    gate_magnitude: float,
) -> torch.Tensor:
    if objective is FairnessObjective.NONE:
        return logits_c_given_y.new_zeros(())
    if form not in FAIRNESS_FORMS:
        raise ConfigError(f"unknown fairness form {form!r}; expected {FAIRNESS_FORMS}")
    if form == "adversarial":
        per_sample = -F.cross_entropy(logits_c_given_y, c, reduction="none")
    else:
        log_p = F.log_softmax(logits_c_given_y, dim=1)
        per_sample = -log_p.mean(dim=1)
    if objective is FairnessObjective.EO:
        per_sample = gate_weight(y_fake, gate_magnitude) * per_sample
    return per_sample.mean()


def generator_objective(
    fake: DiscriminatorOutputs,
    c: torch.Tensor,
    y_fake: torch.Tensor,
    objective: FairnessObjective = FairnessObjective.NONE,
    fairness_form: str = "adversarial",
    gate_magnitude: float = 0.8,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, LossBreakdown]:
    """Generator loss on a batch of fakes scored by the discriminator.

    Beyond fooling both source heads and matching the requested class on
    the image head, the ``class_on_outcome`` slot carries the fairness
    term: zero under NONE, the anti-prediction term under DP, and the
    positivity-gated variant under EO.
    """
    terms = {
        "joint_source": hinge_g_source(fake.s_joint),
        "image_source": hinge_g_source(fake.s_x),
        "class_on_image": class_ce(fake.logits_c_given_x, c),
        "class_on_outcome": _fairness_term(
            fake.logits_c_given_y, c, y_fake, objective, fairness_form, gate_magnitude
        ),
    }
    return _breakdown(terms, weights)
