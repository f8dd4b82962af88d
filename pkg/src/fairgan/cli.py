"""Command line interface.

Subcommands cover the full experiment loop: ``synth`` builds the planted-
bias benchmark, ``train`` fits the adversarial pair, ``generate`` samples a
replacement dataset from a checkpoint, ``evaluate`` scores datasets with
downstream classifiers, ``rasterize`` converts stroke-vector files to an
image dataset, and ``report`` renders loss curves for a run directory.

Every run directory receives the resolved configuration, the seeds in
effect, and content digests of the data it consumed. Exit codes: 2 for
configuration errors, 3 for data errors, 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from filelock import FileLock

from .datasets import FairnessObjective, SplitConfig, split_dataset
from .errors import ConfigError, DataError, FairganError
from .evaluation import (
    ClassifierConfig,
    ClassifierMode,
    compose_grid,
    evaluate_pipeline,
    format_metrics_table,
    plot_roc,
    write_metrics_csv,
    write_roc_csv,
)
from .nn.discriminator import DiscriminatorSpec
from .nn.generator import GeneratorSpec, OutcomeConditioning
from .training import (
    TrainConfig,
    TrainState,
    generate_debiased_dataset,
    read_loss_log,
    train,
)

RUN_ROOT_ENV = "FAIRGAN_RUN_ROOT"


def _expect_mapping(doc, where: str) -> dict:
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(doc).__name__}")
    return doc


def _take(doc: dict, where: str, known: dict) -> dict:
    """Pull known keys out of a config mapping, rejecting strangers."""
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = {}
    for key, caster in known.items():
        if key in doc and doc[key] is not None:
            try:
                out[key] = caster(doc[key])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {where}.{key}: {e}") from e
    return out


@dataclass(frozen=True)
class DataSection:
    kind: str = "synthetic"
    n: int = 2000
    image_size: int = 32
    noise_std: float = 0.12
    hidden_contrast: float = 0.1
    path: str | None = None
    test_fraction: float = 0.2
    stratify: bool = True

    @classmethod
    def parse(cls, doc) -> "DataSection":
        doc = _expect_mapping(doc, "data")
        vals = _take(
            doc,
            "data",
            {
                "kind": str,
                "n": int,
                "image_size": int,
                "noise_std": float,
                "hidden_contrast": float,
                "path": str,
                "test_fraction": float,
                "stratify": bool,
            },
        )
        section = cls(**vals)
        if section.kind not in ("synthetic", "manifest"):
            raise ConfigError(f"data.kind must be synthetic or manifest, got {section.kind!r}")
        if section.kind == "manifest" and not section.path:
            raise ConfigError("data.kind manifest requires data.path")
        return section


@dataclass(frozen=True)
class ModelSection:
    noise_dim: int = 128
    base_channels: int = 64
    outcome_hidden_dim: int = 128
    y_head_hidden_dim: int = 128
    outcome_conditioning: str = "class_embed"

    @classmethod
    def parse(cls, doc) -> "ModelSection":
        doc = _expect_mapping(doc, "model")
        return cls(
            **_take(
                doc,
                "model",
                {
                    "noise_dim": int,
                    "base_channels": int,
                    "outcome_hidden_dim": int,
                    "y_head_hidden_dim": int,
                    "outcome_conditioning": str,
                },
            )
        )


@dataclass(frozen=True)
class EvaluateSection:
    classifier_steps: int = 600
    classifier_batch_size: int = 64
    classifier_lr_init: float = 2e-4
    classifier_base_channels: int = 16
    classifier_mode: str = "full"
    seeds: tuple[int, ...] = (0, 1, 2)

    @classmethod
    def parse(cls, doc) -> "EvaluateSection":
        doc = _expect_mapping(doc, "evaluate")
        vals = _take(
            doc,
            "evaluate",
            {
                "classifier_steps": int,
                "classifier_batch_size": int,
                "classifier_lr_init": float,
                "classifier_base_channels": int,
                "classifier_mode": str,
                "seeds": lambda v: tuple(int(s) for s in v),
            },
        )
        return cls(**vals)

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            steps=self.classifier_steps,
            batch_size=self.classifier_batch_size,
            lr_init=self.classifier_lr_init,
            base_channels=self.classifier_base_channels,
            mode=ClassifierMode.parse(self.classifier_mode),
        )


@dataclass(frozen=True)
class GenerateSection:
    n: int = 2000
    class_marginal: float = 0.5

    @classmethod
    def parse(cls, doc) -> "GenerateSection":
        doc = _expect_mapping(doc, "generate")
        return cls(**_take(doc, "generate", {"n": int, "class_marginal": float}))


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, parsed from one YAML document."""

    run_root: str = "runs"
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: dict = field(default_factory=dict)
    generate: GenerateSection = field(default_factory=GenerateSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    @classmethod
    def parse(cls, doc) -> "RunConfig":
        doc = _expect_mapping(doc, "config")
        known = {"run_root", "seed", "data", "model", "train", "generate", "evaluate"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        return cls(
            run_root=str(doc.get("run_root", "runs")),
            seed=int(doc.get("seed", 0)),
            data=DataSection.parse(doc.get("data")),
            model=ModelSection.parse(doc.get("model")),
            train=_expect_mapping(doc.get("train"), "train"),
            generate=GenerateSection.parse(doc.get("generate")),
            evaluate=EvaluateSection.parse(doc.get("evaluate")),
        )

    def train_config(self, objective=None, seed=None) -> TrainConfig:
        doc = dict(self.train)
        if "total_steps" not in doc:
            raise ConfigError("train.total_steps is required")
        allowed = {
            "total_steps": int,
            "batch_size": int,
            "lr_init": float,
            "beta1": float,
            "beta2": float,
            "d_steps_per_g_step": int,
            "objective": str,
            "fairness_form": str,
            "soften_magnitude": float,
            "y_noise_std": float,
            "unlabeled_mix_fraction": float,
            "checkpoint_every": int,
        }
        vals = _take(doc, "train", allowed)
        if objective is not None:
            vals["objective"] = objective
        vals["objective"] = FairnessObjective.parse(vals.get("objective", "none"))
        vals["seed"] = self.seed if seed is None else int(seed)
        return TrainConfig(**vals)

    def specs_for(self, image_shape) -> tuple[GeneratorSpec, DiscriminatorSpec]:
        ch, h, w = image_shape
        if h != w or h < 4 or (h & (h - 1)) != 0:
            raise DataError(f"images must be square with power-of-two side, got {h}x{w}")
        depth = min(4, int(np.log2(h)) - 1)
        gen = GeneratorSpec(
            noise_dim=self.model.noise_dim,
            base_channels=self.model.base_channels,
            image_shape=(ch, h, w),
            num_up_blocks=depth,
            outcome_hidden_dim=self.model.outcome_hidden_dim,
            outcome_conditioning=OutcomeConditioning(self.model.outcome_conditioning),
        )
        disc = DiscriminatorSpec(
            base_channels=self.model.base_channels,
            in_channels=ch,
            num_down_blocks=depth,
            y_head_hidden_dim=self.model.y_head_hidden_dim,
        )
        return gen, disc


def load_config(path) -> tuple[RunConfig, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return RunConfig.parse(doc), text


def resolve_run_root(config: RunConfig) -> Path:
    env = os.environ.get(RUN_ROOT_ENV)
    return Path(env) if env else Path(config.run_root)


def dataset_digest(dataset_dir) -> str:
    """Content hash of a dataset directory: manifest plus every image it
    names, in manifest order."""
    from .data import MANIFEST_NAME, load_manifest

    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / MANIFEST_NAME
    h = hashlib.sha256()
    h.update(manifest_path.read_bytes())
    for row in load_manifest(manifest_path).rows:
        h.update((dataset_dir / row.image_path).read_bytes())
    return h.hexdigest()


def _setup_run_dir(
    run_dir: Path, config_text: str, resolved: dict, extra: dict, argv: list[str]
) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config_input.yaml").write_text(config_text)
    (run_dir / "config_resolved.yaml").write_text(
        yaml.safe_dump(resolved, sort_keys=True)
    )
    doc = {"argv": argv, **extra}
    (run_dir / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _resolved_dict(config: RunConfig, train_config: TrainConfig | None = None) -> dict:
    doc = {
        "run_root": config.run_root,
        "seed": config.seed,
        "data": asdict(config.data),
        "model": asdict(config.model),
        "generate": asdict(config.generate),
        "evaluate": {**asdict(config.evaluate), "seeds": list(config.evaluate.seeds)},
    }
    if train_config is not None:
        doc["train"] = train_config.encode()
    return doc


def _load_dataset_dir(path):
    from .data import load_attributed_images

    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset directory not found: {path}")
    return load_attributed_images(path)


def cmd_synth(args) -> int:
    from .data import masked_contrast_spec, save_attributed_dataset, synthesize_biased_dataset

    config, text = load_config(args.config)
    if config.data.kind != "synthetic":
        raise ConfigError("synth requires data.kind: synthetic")
    seed = config.seed if args.seed is None else args.seed
    spec = masked_contrast_spec(
        n=config.data.n,
        seed=seed,
        image_size=config.data.image_size,
        hidden_contrast=config.data.hidden_contrast,
        noise_std=config.data.noise_std,
    )
    dataset, truth = synthesize_biased_dataset(spec)
    out = Path(args.out)
    save_attributed_dataset(dataset, out, overwrite=args.overwrite)
    (out / "ground_truth.json").write_text(
        json.dumps(
            {
                "seed": seed,
                "bayes_err": list(truth.bayes_err),
                "bayes_fnr": list(truth.bayes_fnr),
                "bayes_fpr": list(truth.bayes_fpr),
                "glyphs": truth.glyphs.tolist(),
            },
            indent=2,
        )
    )
    _setup_run_dir(
        out,
        text,
        _resolved_dict(config),
        {"seed": seed, "digest": dataset_digest(out)},
        args.raw_argv,
    )
    print(f"wrote {len(dataset)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    config, text = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    train_config = config.train_config(objective=args.objective, seed=seed)
    labeled = _load_dataset_dir(args.data)
    unlabeled = _load_dataset_dir(args.unlabeled) if args.unlabeled else None
    gen_spec, disc_spec = config.specs_for(labeled.image_shape)
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        run_dir = (
            resolve_run_root(config)
            / f"train_{train_config.objective.value}_seed{seed}"
        )
    run_dir.mkdir(parents=True, exist_ok=True)
    with FileLock(run_dir / ".lock"):
        digests = {"labeled": dataset_digest(args.data)}
        if args.unlabeled:
            digests["unlabeled"] = dataset_digest(args.unlabeled)
        _setup_run_dir(
            run_dir,
            text,
            _resolved_dict(config, train_config),
            {"seed": seed, "digests": digests},
            args.raw_argv,
        )
        state = train(
            labeled,
            train_config,
            unlabeled=unlabeled,
            generator_spec=gen_spec,
            discriminator_spec=disc_spec,
            run_dir=run_dir,
            resume_from=args.resume,
        )
    print(
        f"trained {state.step} steps (skipped {state.skipped_steps}); "
        f"checkpoints in {run_dir / 'checkpoints'}"
    )
    return 0


def cmd_generate(args) -> int:
    from .data import save_attributed_dataset

    state = TrainState.load(args.checkpoint)
    dataset = generate_debiased_dataset(
        state,
        args.n,
        class_marginal=args.class_marginal,
        seed=args.seed,
    )
    out = Path(args.out)
    save_attributed_dataset(dataset, out, overwrite=args.overwrite)
    meta = {
        "checkpoint": str(args.checkpoint),
        "step": state.step,
        "objective": state.config.objective.value,
        "n": args.n,
        "class_marginal": args.class_marginal,
        "seed": args.seed,
        "digest": dataset_digest(out),
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    print(f"wrote {len(dataset)} generated samples to {out}")
    return 0


def _parse_named_dir(value: str) -> tuple[str, str]:
    if "=" not in value:
        raise ConfigError(f"expected NAME=DIR, got {value!r}")
    name, path = value.split("=", 1)
    if not name or not path:
        raise ConfigError(f"expected NAME=DIR, got {value!r}")
    return name, path


def cmd_evaluate(args) -> int:
    from .data import save_png

    config, text = load_config(args.config)
    test_set = _load_dataset_dir(args.test)
    train_sets = {}
    digests = {"test": dataset_digest(args.test)}
    for item in args.train_set:
        name, path = _parse_named_dir(item)
        if name in train_sets:
            raise ConfigError(f"duplicate training set name {name!r}")
        train_sets[name] = _load_dataset_dir(path)
        digests[name] = dataset_digest(path)
    if args.split_test is not None:
        if not 0.0 < args.split_test < 1.0:
            raise ConfigError("--split-test must lie in (0, 1)")
        for name in list(train_sets):
            tr, _ = split_dataset(
                train_sets[name],
                SplitConfig(test_fraction=args.split_test, seed=config.seed),
            )
            train_sets[name] = tr
    results = evaluate_pipeline(
        train_sets,
        test_set,
        classifier_config=config.evaluate.classifier_config(),
        seeds=config.evaluate.seeds,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_run_dir(out, text, _resolved_dict(config), {"digests": digests}, args.raw_argv)
    write_metrics_csv(results, out / "metrics.csv")
    table = format_metrics_table(results)
    (out / "metrics.txt").write_text(table + "\n")
    plot_roc({n: e.roc for n, e in results.items()}, out / "roc.png")
    for name, entry in results.items():
        for curve in entry.roc:
            write_roc_csv(curve, out / f"roc_{name}_c{curve.group}.csv")
        for (c, y), grid in entry.grids.items():
            save_png(compose_grid(grid), out / f"eigen_{name}_c{c}_y{y}.png")
    print(table)
    return 0


def cmd_rasterize(args) -> int:
    from .data import (
        Manifest,
        ManifestRow,
        load_stroke_file,
        rasterize_strokes,
        save_manifest,
        save_png,
    )

    if args.country_c0 == args.country_c1:
        raise ConfigError("the two country codes must differ")
    records = load_stroke_file(args.strokes, limit=None)
    mapping = {args.country_c0.upper(): 0, args.country_c1.upper(): 1}
    out = Path(args.out)
    manifest_path = out / "manifest.csv"
    if manifest_path.exists() and not args.overwrite:
        raise ConfigError(f"{manifest_path} exists; pass --overwrite to replace it")
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        if args.recognized_only and not rec.recognized:
            continue
        c = mapping.get(rec.countrycode.upper())
        if c is None:
            continue
        img = rasterize_strokes(rec.drawing, args.size, margin=args.margin)
        rel = f"images/{len(rows):06d}.png"
        save_png(img, out / rel)
        rows.append(ManifestRow(image_path=rel, c=c))
        if args.limit and len(rows) >= args.limit:
            break
    if not rows:
        raise DataError("no drawings matched the country filters")
    save_manifest(Manifest(rows=tuple(rows)), manifest_path)
    print(f"rasterized {len(rows)} drawings to {out}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    losses_path = run_dir / "losses.csv"
    if not losses_path.exists():
        raise DataError(f"no losses.csv under {run_dir}")
    rows = read_loss_log(losses_path)
    if not rows:
        raise DataError(f"{losses_path} is empty")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    for ax, phase, title in zip(axes, ("d", "g"), ("discriminator", "generator")):
        sub = [r for r in rows if r["phase"] == phase]
        steps = [r["step"] for r in sub]
        for key in ("joint_source", "image_source", "class_on_image", "class_on_outcome", "total"):
            ax.plot(steps, [r[key] for r in sub], label=key, linewidth=0.8)
        ax.set_title(title)
        ax.set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[1].legend(fontsize=6)
    fig.tight_layout()
    out = run_dir / "losses.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    last = rows[-1]
    checkpoints = sorted((run_dir / "checkpoints").glob("*.npz"))
    print(f"{len(rows)} logged phases, last step {last['step']} (lr {last['lr']:.3g})")
    print(f"checkpoints: {', '.join(p.name for p in checkpoints) or 'none'}")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairgan",
        description="Learn a debiased replacement dataset and evaluate its group fairness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the planted-bias synthetic benchmark")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the generator/discriminator pair")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--data", required=True, help="labeled dataset directory")
    p.add_argument("--unlabeled", default=None, help="optional unlabeled dataset directory")
    p.add_argument(
        "--objective", choices=[m.value for m in FairnessObjective], default=None,
        help="override train.objective",
    )
    p.add_argument("--run-dir", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a replacement dataset from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--class-marginal", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score datasets with downstream classifiers")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--test", required=True, help="held-out real dataset directory")
    p.add_argument(
        "--train-set",
        action="append",
        required=True,
        metavar="NAME=DIR",
        help="training set to evaluate; repeatable",
    )
    p.add_argument(
        "--split-test",
        type=float,
        default=None,
        help="carve this held-out fraction off each training set before fitting",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rasterize", help="render stroke-vector drawings to PNGs")
    p.add_argument("--strokes", required=True, help="newline-delimited JSON stroke file")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--margin", type=int, default=2)
    p.add_argument("--country-c0", required=True, help="country code mapped to c=0")
    p.add_argument("--country-c1", required=True, help="country code mapped to c=1")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--recognized-only", action="store_true", default=True)
    p.add_argument(
        "--include-unrecognized", dest="recognized_only", action="store_false"
    )
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("report", help="summarize a training run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw_argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args)
    except FairganError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
