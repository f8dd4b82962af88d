"""Alternating adversarial training with deterministic, resumable state.

One step is ``d_steps_per_g_step`` discriminator updates followed by one
generator update, all at the linearly decayed learning rate for that step.
Batch indices are a pure function of (seed, step) through per-epoch
permutations, and every other random draw comes from one torch generator
whose state rides in the checkpoint, so training N steps equals training
k steps, checkpointing, reloading, and training N - k more, bit for bit.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .datasets import AttributedDataset, FairnessObjective, ensure_valid
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .nn.checkpoint import (
    arrays_to_state_dict,
    encode_spec,
    load_archive,
    rng_state_from_array,
    rng_state_to_array,
    save_archive,
    state_dict_to_arrays,
)
from .nn.discriminator import Discriminator, DiscriminatorSpec
from .nn.generator import Generator, GeneratorSpec, OutcomeConditioning
from .nn.init import init_module
from .objectives import (
    FAIRNESS_FORMS,
    LossBreakdown,
    LossWeights,
    discriminator_objective,
    generator_objective,
)

SOFT_CLAMP = 0.999


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    batch_size: int = 64
    lr_init: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    d_steps_per_g_step: int = 1
    objective: FairnessObjective = FairnessObjective.NONE
    fairness_form: str = "adversarial"
    soften_magnitude: float = 0.8
    y_noise_std: float = 0.01
    unlabeled_mix_fraction: float = 0.0
    checkpoint_every: int = 1000
    seed: int = 0
    loss_weights: LossWeights = LossWeights()

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be positive")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if self.d_steps_per_g_step < 1:
            raise ConfigError("d_steps_per_g_step must be at least 1")
        if not 0.0 < self.soften_magnitude < 1.0:
            raise ConfigError("soften_magnitude must lie in (0, 1)")
        if self.y_noise_std < 0:
            raise ConfigError("y_noise_std must be non-negative")
        if not 0.0 <= self.unlabeled_mix_fraction < 1.0:
            raise ConfigError("unlabeled_mix_fraction must lie in [0, 1)")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")
        if self.fairness_form not in FAIRNESS_FORMS:
            raise ConfigError(
                f"fairness_form must be one of {FAIRNESS_FORMS}, got {self.fairness_form!r}"
            )
        if not isinstance(self.objective, FairnessObjective):
            object.__setattr__(self, "objective", FairnessObjective.parse(self.objective))

    def encode(self) -> dict:
        doc = encode_spec(self)
        doc["objective"] = self.objective.value
        doc["loss_weights"] = encode_spec(self.loss_weights)
        return doc

    @classmethod
    def decode(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        doc["objective"] = FairnessObjective.parse(doc["objective"])
        doc["loss_weights"] = LossWeights(**doc.get("loss_weights", {}))
        return cls(**doc)


def soften_and_perturb(
    y_hard: torch.Tensor,
    magnitude: float,
    noise_std: float,
    generator: torch.Generator,
) -> torch.Tensor:
    """Map hard outcomes {0, 1} to noisy soft targets near +-magnitude.

    y_soft = (2 y - 1) * magnitude + eps, eps ~ N(0, noise_std^2), clamped
    to (-0.999, 0.999) so downstream tanh-range checks always hold.
    """
    if not 0.0 < magnitude < 1.0:
        raise ConfigError(f"soften magnitude must lie in (0, 1), got {magnitude}")
    base = (2.0 * y_hard.to(torch.float32) - 1.0) * magnitude
    if noise_std > 0:
        base = base + noise_std * torch.randn(
            y_hard.shape, generator=generator, dtype=torch.float32
        )
    return base.clamp(-SOFT_CLAMP, SOFT_CLAMP)


def lr_at(step: int, config: TrainConfig) -> float:
    """Linearly decayed learning rate: lr_init * (1 - step / total_steps)."""
    if step < 0 or step > config.total_steps:
        raise ConfigError(
            f"step {step} outside [0, {config.total_steps}] for lr schedule"
        )
    if config.total_steps == 0:
        return config.lr_init
    return config.lr_init * (1.0 - step / config.total_steps)


class _EpochIndexer:
    """Batch indices as a pure function of the global sample counter.

    Each epoch is an independent seeded permutation of the dataset, so any
    step's indices can be recomputed after a resume without replaying the
    stream.
    """

    def __init__(self, n: int, seed: int, stream: int):
        if n < 1:
            raise DataError("cannot sample from an empty dataset")
        self.n = n
        self.seed = seed
        self.stream = stream
        self._cache: dict[int, list[int]] = {}

    def _perm(self, epoch: int) -> list[int]:
        if epoch not in self._cache:
            g = torch.Generator()
            g.manual_seed((self.seed * 1000003 + self.stream) * 2654435761 % (2**63) + epoch)
            self._cache[epoch] = torch.randperm(self.n, generator=g).tolist()
            for old in [e for e in self._cache if e < epoch - 1]:
                del self._cache[old]
        return self._cache[epoch]

    def take(self, counter: int, k: int) -> list[int]:
        out: list[int] = []
        while len(out) < k:
            epoch, offset = divmod(counter + len(out), self.n)
            perm = self._perm(epoch)
            out.extend(perm[offset : offset + k - len(out)])
        return out


@dataclass
class TrainState:
    """Everything needed to continue or sample from a training run."""

    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    config: TrainConfig
    step: int = 0
    skipped_steps: int = 0

    def save(self, path) -> None:
        arrays: dict[str, np.ndarray] = {}
        arrays.update(state_dict_to_arrays("generator", self.generator))
        arrays.update(state_dict_to_arrays("discriminator", self.discriminator))
        adam_steps = {}
        for tag, opt, model in (
            ("g", self.opt_g, self.generator),
            ("d", self.opt_d, self.discriminator),
        ):
            names = [n for n, _ in model.named_parameters()]
            for idx, pstate in opt.state_dict()["state"].items():
                prefix = f"optim/{tag}/{names[idx]}"
                arrays[f"{prefix}/exp_avg"] = pstate["exp_avg"].numpy()
                arrays[f"{prefix}/exp_avg_sq"] = pstate["exp_avg_sq"].numpy()
                adam_steps[tag] = float(pstate["step"])
        arrays["rng/torch"] = rng_state_to_array(self.rng)
        header = {
            "kind": "fairness-gan-train-state",
            "generator_spec": encode_spec(self.generator.spec),
            "discriminator_spec": encode_spec(self.discriminator.spec),
            "train_config": self.config.encode(),
            "step": self.step,
            "skipped_steps": self.skipped_steps,
            "adam_steps": adam_steps,
        }
        save_archive(path, arrays, header)

    @classmethod
    def load(cls, path) -> "TrainState":
        arrays, header = load_archive(path)
        if header.get("kind") != "fairness-gan-train-state":
            raise CheckpointError(
                f"checkpoint {path} holds {header.get('kind')!r}, not a train state"
            )
        gen_doc = dict(header["generator_spec"])
        gen_doc["image_shape"] = tuple(gen_doc["image_shape"])
        gen_doc["outcome_conditioning"] = OutcomeConditioning(gen_doc["outcome_conditioning"])
        gen_spec = GeneratorSpec(**gen_doc)
        disc_spec = DiscriminatorSpec(**header["discriminator_spec"])
        config = TrainConfig.decode(header["train_config"])
        generator = Generator(gen_spec)
        discriminator = Discriminator(disc_spec)
        generator.load_state_dict(
            arrays_to_state_dict("generator", arrays), strict=True
        )
        discriminator.load_state_dict(
            arrays_to_state_dict("discriminator", arrays), strict=True
        )
        state = cls(
            generator=generator,
            discriminator=discriminator,
            opt_g=_make_adam(generator, config),
            opt_d=_make_adam(discriminator, config),
            rng=rng_state_from_array(arrays["rng/torch"]),
            config=config,
            step=int(header["step"]),
            skipped_steps=int(header.get("skipped_steps", 0)),
        )
        for tag, opt, model in (
            ("g", state.opt_g, state.generator),
            ("d", state.opt_d, state.discriminator),
        ):
            adam_step = header.get("adam_steps", {}).get(tag)
            if adam_step is None:
                continue
            names = [n for n, _ in model.named_parameters()]
            sd = opt.state_dict()
            for idx, name in enumerate(names):
                prefix = f"optim/{tag}/{name}"
                if f"{prefix}/exp_avg" not in arrays:
                    raise CheckpointError(f"missing optimizer moment {prefix}/exp_avg")
                sd["state"][idx] = {
                    "step": torch.tensor(float(adam_step)),
                    "exp_avg": torch.from_numpy(
                        np.array(arrays[f"{prefix}/exp_avg"], dtype=np.float32)
                    ),
                    "exp_avg_sq": torch.from_numpy(
                        np.array(arrays[f"{prefix}/exp_avg_sq"], dtype=np.float32)
                    ),
                }
            opt.load_state_dict(sd)
        return state


def _make_adam(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=config.lr_init, betas=(config.beta1, config.beta2)
    )


def init_train_state(
    config: TrainConfig,
    generator_spec: GeneratorSpec,
    discriminator_spec: DiscriminatorSpec,
) -> TrainState:
    """Fresh models with seeded weights plus their optimizers."""
    rng = torch.Generator()
    rng.manual_seed(config.seed)
    generator = Generator(generator_spec)
    discriminator = Discriminator(discriminator_spec)
    init_module(generator, rng)
    init_module(discriminator, rng)
    return TrainState(
        generator=generator,
        discriminator=discriminator,
        opt_g=_make_adam(generator, config),
        opt_d=_make_adam(discriminator, config),
        rng=rng,
        config=config,
    )


def default_specs(
    dataset: AttributedDataset,
    noise_dim: int = 128,
    base_channels: int = 64,
    outcome_hidden_dim: int = 128,
    y_head_hidden_dim: int = 128,
    outcome_conditioning: OutcomeConditioning = OutcomeConditioning.CLASS_EMBED,
) -> tuple[GeneratorSpec, DiscriminatorSpec]:
    """Architecture specs sized to a dataset's image shape.

    Depth is four resampling blocks for sides of 32 and up, fewer for the
    tiny sides used in tests, keeping the initial/final spatial extent at 2.
    """
    ch, h, w = dataset.image_shape
    if h != w or h < 4 or (h & (h - 1)) != 0:
        raise DataError(f"images must be square with power-of-two side, got {h}x{w}")
    depth = min(4, int(np.log2(h)) - 1)
    gen = GeneratorSpec(
        noise_dim=noise_dim,
        base_channels=base_channels,
        image_shape=(ch, h, w),
        num_up_blocks=depth,
        outcome_hidden_dim=outcome_hidden_dim,
        outcome_conditioning=outcome_conditioning,
    )
    disc = DiscriminatorSpec(
        base_channels=base_channels,
        in_channels=ch,
        num_down_blocks=depth,
        y_head_hidden_dim=y_head_hidden_dim,
    )
    return gen, disc


@dataclass
class StepRecord:
    """Losses logged for one optimizer phase within a step."""

    step: int
    phase: str  # "d" or "g"
    breakdown: LossBreakdown
    lr: float


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def train_step(
    state: TrainState,
    labeled: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    unlabeled: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> list[StepRecord]:
    """Run one full step (D phases then one G phase) and advance the state.

    ``labeled`` is (x, c, y_soft); ``unlabeled`` is (x, c) or None. If a
    phase produces a non-finite loss its update is abandoned with a
    warning, the step counter still advances, and any phases already
    committed within the step stand.
    """
    cfg = state.config
    x_lab, c_lab, y_soft = labeled
    records: list[StepRecord] = []
    lr = lr_at(state.step, cfg)
    if unlabeled is not None:
        x_unl, c_unl = unlabeled
        c_all = torch.cat([c_lab, c_unl])
    else:
        x_unl = c_unl = None
        c_all = c_lab

    for _ in range(cfg.d_steps_per_g_step):
        try:
            state.opt_d.zero_grad(set_to_none=True)
            z = torch.randn(
                c_all.shape[0], state.generator.spec.noise_dim, generator=state.rng
            )
            with torch.no_grad():
                x_fake, y_fake = state.generator(c_all, z)
            real_out = state.discriminator(x_lab, y_soft)
            unl_out = (
                state.discriminator.forward_image_only(x_unl)
                if x_unl is not None
                else None
            )
            fake_out = state.discriminator(x_fake, y_fake)
            loss, breakdown = discriminator_objective(
                real_out, c_lab, fake_out, unl_out, c_unl, cfg.loss_weights
            )
            loss.backward()
            _set_lr(state.opt_d, lr)
            state.opt_d.step()
            records.append(StepRecord(state.step, "d", breakdown, lr))
        except NumericError as e:
            state.skipped_steps += 1
            warnings.warn(f"step {state.step}: discriminator update skipped: {e}")

    try:
        state.opt_g.zero_grad(set_to_none=True)
        z = torch.randn(
            c_all.shape[0], state.generator.spec.noise_dim, generator=state.rng
        )
        x_fake, y_fake = state.generator(c_all, z)
        fake_out = state.discriminator(x_fake, y_fake)
        loss, breakdown = generator_objective(
            fake_out,
            c_all,
            y_fake,
            cfg.objective,
            cfg.fairness_form,
            cfg.soften_magnitude,
            cfg.loss_weights,
        )
        loss.backward()
        _set_lr(state.opt_g, lr)
        state.opt_g.step()
        records.append(StepRecord(state.step, "g", breakdown, lr))
    except NumericError as e:
        state.skipped_steps += 1
        warnings.warn(f"step {state.step}: generator update skipped: {e}")

    state.step += 1
    return records


class LossLogWriter:
    """Append-only CSV of per-phase loss terms."""

    COLUMNS = ("step", "phase", *LossBreakdown.FIELDS, "lr")

    def __init__(self, path):
        self.path = Path(path)
        new = not self.path.exists()
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(self.COLUMNS)

    def write(self, records: list[StepRecord]) -> None:
        for r in records:
            self._writer.writerow(
                [r.step, r.phase, *(f"{v:.8g}" for v in r.breakdown.as_row()), f"{r.lr:.8g}"]
            )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "LossLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed: dict = {"step": int(row["step"]), "phase": row["phase"]}
        for k in (*LossBreakdown.FIELDS, "lr"):
            parsed[k] = float(row[k])
        out.append(parsed)
    return out


def _dataset_tensors(dataset: AttributedDataset, with_outcome: bool):
    x = torch.from_numpy(dataset.xs)
    c = torch.from_numpy(dataset.cs)
    if not with_outcome:
        return x, c
    y = torch.from_numpy(dataset.ys_hard)
    return x, c, y


def train(
    labeled: AttributedDataset,
    config: TrainConfig,
    unlabeled: AttributedDataset | None = None,
    generator_spec: GeneratorSpec | None = None,
    discriminator_spec: DiscriminatorSpec | None = None,
    run_dir=None,
    resume_from=None,
) -> TrainState:
    """Train to ``config.total_steps``, optionally logging and checkpointing.

    The labeled set must carry outcomes and pass validation. When an
    unlabeled pool is supplied, each batch mixes in
    ``round(unlabeled_mix_fraction * batch_size)`` outcome-free images that
    reach only the discriminator's image-side terms. With ``run_dir`` set,
    the directory receives ``losses.csv`` plus periodic and final
    checkpoints; ``resume_from`` continues a saved state bit-exactly.
    """
    ensure_valid(labeled, "labeled dataset")
    if not labeled.outcome_labeled:
        raise DataError("training requires outcome labels on the labeled dataset")
    if unlabeled is not None:
        ensure_valid(unlabeled, "unlabeled dataset")
        if unlabeled.image_shape != labeled.image_shape:
            raise DataError(
                f"unlabeled image shape {unlabeled.image_shape} != labeled {labeled.image_shape}"
            )
        if len(unlabeled) == 0:
            unlabeled = None

    n_unl = (
        int(np.floor(config.unlabeled_mix_fraction * config.batch_size + 0.5))
        if unlabeled is not None
        else 0
    )
    n_lab = config.batch_size - n_unl
    if n_lab < 1:
        raise ConfigError("unlabeled_mix_fraction leaves no labeled samples per batch")

    if resume_from is not None:
        state = TrainState.load(resume_from)
        if state.config != config:
            raise ConfigError("resume config differs from checkpoint config")
    else:
        if generator_spec is None or discriminator_spec is None:
            inferred_g, inferred_d = default_specs(labeled)
            generator_spec = generator_spec or inferred_g
            discriminator_spec = discriminator_spec or inferred_d
        if generator_spec.image_shape != labeled.image_shape:
            raise ConfigError(
                f"generator spec shape {generator_spec.image_shape} != data {labeled.image_shape}"
            )
        state = init_train_state(config, generator_spec, discriminator_spec)

    x_l, c_l, y_l = _dataset_tensors(labeled, with_outcome=True)
    if unlabeled is not None:
        x_u, c_u = _dataset_tensors(unlabeled, with_outcome=False)
    lab_idx = _EpochIndexer(len(labeled), config.seed, stream=0)
    unl_idx = _EpochIndexer(len(unlabeled), config.seed, stream=1) if n_unl else None

    run_dir = Path(run_dir) if run_dir is not None else None
    log = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        log = LossLogWriter(run_dir / "losses.csv")
        if resume_from is None:
            state.save(run_dir / "checkpoints" / "step_0000000.npz")

    try:
        while state.step < config.total_steps:
            take = lab_idx.take(state.step * n_lab, n_lab)
            xb, cb, yb = x_l[take], c_l[take], y_l[take]
            y_soft = soften_and_perturb(
                yb, config.soften_magnitude, config.y_noise_std, state.rng
            )
            if n_unl:
                utake = unl_idx.take(state.step * n_unl, n_unl)
                unl_batch = (x_u[utake], c_u[utake])
            else:
                unl_batch = None
            records = train_step(state, (xb, cb, y_soft), unl_batch)
            if log is not None:
                log.write(records)
                if state.step % config.checkpoint_every == 0 or state.step == config.total_steps:
                    state.save(run_dir / "checkpoints" / f"step_{state.step:07d}.npz")
        if run_dir is not None:
            state.save(run_dir / "checkpoints" / "final.npz")
    finally:
        if log is not None:
            log.close()
    return state


def generate_debiased_dataset(
    state: TrainState,
    n: int,
    class_marginal: float = 0.5,
    seed: int = 0,
    y_threshold: float = 0.0,
    batch_size: int = 256,
) -> AttributedDataset:
    """Sample a replacement dataset of ``n`` labeled images from the
    generator.

    The protected attribute is drawn Bernoulli(``class_marginal``), the
    soft outcome is thresholded at ``y_threshold`` to produce hard labels,
    and the soft value is kept alongside. Sampling uses its own seeded
    generator and eval-mode networks, so it never perturbs training state.
    """
    if n < 1:
        raise ConfigError(f"sample count must be positive, got {n}")
    if not 0.0 <= class_marginal <= 1.0:
        raise ConfigError(f"class marginal must lie in [0, 1], got {class_marginal}")
    g = torch.Generator()
    g.manual_seed(seed)
    was_training = state.generator.training
    state.generator.eval()
    xs, cs, ys, softs = [], [], [], []
    with torch.no_grad():
        done = 0
        while done < n:
            b = min(batch_size, n - done)
            c = (torch.rand(b, generator=g) < class_marginal).to(torch.long)
            z = torch.randn(b, state.generator.spec.noise_dim, generator=g)
            x, y = state.generator(c, z)
            xs.append(x.numpy().astype(np.float32))
            cs.append(c.numpy())
            ys.append((y > y_threshold).to(torch.long).numpy())
            softs.append(y.numpy().astype(np.float32))
            done += b
    if was_training:
        state.generator.train()
    return AttributedDataset.from_arrays(
        np.concatenate(xs),
        np.concatenate(cs),
        np.concatenate(ys),
        np.concatenate(softs),
    )
