"""Learning a debiased replacement dataset with a conditional GAN.

The generative side trains a conditional generator emitting (image,
outcome) pairs against a projection discriminator with separate source,
class, and outcome heads; a fairness penalty on the outcome head steers
the generated data toward demographic parity or equalized odds. The
evaluation side trains downstream classifiers on original and generated
data and compares their group-conditional error profiles on held-out real
data.
"""

from .datasets import (
    AttributedDataset,
    AttributedSample,
    FairnessObjective,
    SplitConfig,
    split_dataset,
    validate_dataset,
)
from .estimator import FairnessGAN, OutcomeClassifier
from .evaluation import (
    ClassifierConfig,
    ClassifierMode,
    EigenGrid,
    GroupCounts,
    GroupMetricsReport,
    RocCurve,
    dp_gap,
    eigen_grid,
    eo_gap,
    evaluate_pipeline,
    fairness_metrics,
    group_confusion,
    roc_points,
    train_outcome_classifier,
)
from .objectives import (
    LossBreakdown,
    LossWeights,
    class_ce,
    discriminator_objective,
    gate_weight,
    generator_objective,
    hinge_d_source,
    hinge_g_source,
)
from .training import (
    TrainConfig,
    TrainState,
    generate_debiased_dataset,
    lr_at,
    soften_and_perturb,
    train,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AttributedDataset",
    "AttributedSample",
    "FairnessObjective",
    "SplitConfig",
    "split_dataset",
    "validate_dataset",
    "FairnessGAN",
    "OutcomeClassifier",
    "ClassifierConfig",
    "ClassifierMode",
    "EigenGrid",
    "GroupCounts",
    "GroupMetricsReport",
    "RocCurve",
    "dp_gap",
    "eigen_grid",
    "eo_gap",
    "evaluate_pipeline",
    "fairness_metrics",
    "group_confusion",
    "roc_points",
    "train_outcome_classifier",
    "LossBreakdown",
    "LossWeights",
    "class_ce",
    "discriminator_objective",
    "gate_weight",
    "generator_objective",
    "hinge_d_source",
    "hinge_g_source",
    "TrainConfig",
    "TrainState",
    "generate_debiased_dataset",
    "lr_at",
    "soften_and_perturb",
    "train",
    "train_step",
    "__version__",
]
