"""Scikit-learn style wrappers around the generative model and the
downstream outcome classifier.

These exist so the package plugs into the usual estimator tooling
(``get_params``/``set_params``, clone, pipelines); the functional APIs in
:mod:`fairgan.training` and :mod:`fairgan.evaluation` remain the primary
interface for scripted experiments.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .datasets import AttributedDataset, FairnessObjective
from .errors import ConfigError, DataError
from .evaluation import ClassifierConfig, ClassifierMode, train_outcome_classifier
from .nn.generator import OutcomeConditioning
from .training import (
    TrainConfig,
    TrainState,
    default_specs,
    generate_debiased_dataset,
    train,
)
from .validation import as_dataset, check_images


class FairnessGAN(BaseEstimator):
    """Generative debiaser: fit on an attributed dataset, then sample a
    replacement dataset of (image, outcome) pairs per protected group.

    Parameters mirror the training configuration; see
    :class:`fairgan.training.TrainConfig` for semantics. ``objective``
    selects the fairness penalty: "none", "dp", or "eo".
    """

    def __init__(
        self,
        objective: str = "dp",
        total_steps: int = 1000,
        batch_size: int = 64,
        lr_init: float = 2e-4,
        beta1: float = 0.0,
        beta2: float = 0.9,
        d_steps_per_g_step: int = 1,
        noise_dim: int = 128,
        base_channels: int = 64,
        outcome_hidden_dim: int = 128,
        y_head_hidden_dim: int = 128,
        outcome_conditioning: str = "class_embed",
        fairness_form: str = "adversarial",
        soften_magnitude: float = 0.8,
        y_noise_std: float = 0.01,
        unlabeled_mix_fraction: float = 0.0,
        checkpoint_every: int = 1000,
        seed: int = 0,
    ):
        self.objective = objective
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.lr_init = lr_init
        self.beta1 = beta1
        self.beta2 = beta2
        self.d_steps_per_g_step = d_steps_per_g_step
        self.noise_dim = noise_dim
        self.base_channels = base_channels
        self.outcome_hidden_dim = outcome_hidden_dim
        self.y_head_hidden_dim = y_head_hidden_dim
        self.outcome_conditioning = outcome_conditioning
        self.fairness_form = fairness_form
        self.soften_magnitude = soften_magnitude
        self.y_noise_std = y_noise_std
        self.unlabeled_mix_fraction = unlabeled_mix_fraction
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            total_steps=self.total_steps,
            batch_size=self.batch_size,
            lr_init=self.lr_init,
            beta1=self.beta1,
            beta2=self.beta2,
            d_steps_per_g_step=self.d_steps_per_g_step,
            objective=FairnessObjective.parse(self.objective),
            fairness_form=self.fairness_form,
            soften_magnitude=self.soften_magnitude,
            y_noise_std=self.y_noise_std,
            unlabeled_mix_fraction=self.unlabeled_mix_fraction,
            checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )

    def fit(self, X, y, c, unlabeled_X=None, unlabeled_c=None, run_dir=None):
        """Train the adversarial pair on images X, outcomes y, groups c.

        ``unlabeled_X``/``unlabeled_c`` optionally add an outcome-free pool
        that only the discriminator's image-side heads see.
        """
        labeled = as_dataset(X, c, y)
        if not labeled.outcome_labeled:
            raise DataError("fit requires outcome labels y")
        unlabeled = None
        if unlabeled_X is not None:
            if unlabeled_c is None:
                raise DataError("unlabeled_X given without unlabeled_c")
            unlabeled = as_dataset(unlabeled_X, unlabeled_c)
        gen_spec, disc_spec = default_specs(
            labeled,
            noise_dim=self.noise_dim,
            base_channels=self.base_channels,
            outcome_hidden_dim=self.outcome_hidden_dim,
            y_head_hidden_dim=self.y_head_hidden_dim,
            outcome_conditioning=OutcomeConditioning(self.outcome_conditioning),
        )
        self.state_ = train(
            labeled,
            self._train_config(),
            unlabeled=unlabeled,
            generator_spec=gen_spec,
            discriminator_spec=disc_spec,
            run_dir=run_dir,
        )
        return self

    def _require_fitted(self) -> TrainState:
        state = getattr(self, "state_", None)
        if state is None:
            raise ConfigError("estimator is not fitted; call fit or load first")
        return state

    def sample_dataset(
        self, n: int, class_marginal: float = 0.5, seed: int = 0
    ) -> AttributedDataset:
        """Draw a labeled replacement dataset from the trained generator."""
        return generate_debiased_dataset(
            self._require_fitted(), n, class_marginal=class_marginal, seed=seed
        )

    def sample(self, n: int, class_marginal: float = 0.5, seed: int = 0):
        """As :meth:`sample_dataset` but returning (X, y, c) arrays."""
        ds = self.sample_dataset(n, class_marginal, seed)
        return ds.xs, ds.ys_hard, ds.cs

    def save(self, path) -> None:
        self._require_fitted().save(path)

    @classmethod
    def load(cls, path) -> "FairnessGAN":
        state = TrainState.load(path)
        cfg = state.config
        est = cls(
            objective=cfg.objective.value,
            total_steps=cfg.total_steps,
            batch_size=cfg.batch_size,
            lr_init=cfg.lr_init,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            d_steps_per_g_step=cfg.d_steps_per_g_step,
            noise_dim=state.generator.spec.noise_dim,
            base_channels=state.generator.spec.base_channels,
            outcome_hidden_dim=state.generator.spec.outcome_hidden_dim,
            y_head_hidden_dim=state.discriminator.spec.y_head_hidden_dim,
            outcome_conditioning=state.generator.spec.outcome_conditioning.value,
            fairness_form=cfg.fairness_form,
            soften_magnitude=cfg.soften_magnitude,
            y_noise_std=cfg.y_noise_std,
            unlabeled_mix_fraction=cfg.unlabeled_mix_fraction,
            checkpoint_every=cfg.checkpoint_every,
            seed=cfg.seed,
        )
        est.state_ = state
        return est


class OutcomeClassifier(BaseEstimator, ClassifierMixin):
    """Convolutional outcome classifier with the evaluation-harness
    training recipe; a thin sklearn face over
    :func:`fairgan.evaluation.train_outcome_classifier`."""

    def __init__(
        self,
        mode: str = "full",
        steps: int = 600,
        batch_size: int = 64,
        lr_init: float = 2e-4,
        base_channels: int = 16,
        seed: int = 0,
    ):
        self.mode = mode
        self.steps = steps
        self.batch_size = batch_size
        self.lr_init = lr_init
        self.base_channels = base_channels
        self.seed = seed

    def fit(self, X, y, c=None, feature_extractor=None):
        n = np.asarray(X).shape[0]
        ds = as_dataset(X, c if c is not None else np.zeros(n, dtype=np.int64), y)
        config = ClassifierConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr_init=self.lr_init,
            base_channels=self.base_channels,
            mode=ClassifierMode.parse(self.mode),
        )
        self.model_ = train_outcome_classifier(
            ds, config, seed=self.seed, feature_extractor=feature_extractor
        )
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ConfigError("classifier is not fitted")
        p1 = self.model_.scores(check_images(X))
        return np.stack([1.0 - p1, p1], axis=1)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)
