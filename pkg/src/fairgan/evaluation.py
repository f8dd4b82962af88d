"""Downstream evaluation: outcome classifiers, group-conditional error
rates, fairness gaps, ROC curves, and principal-component image grids.

The question answered here is always the same: if a classifier is trained
on this dataset (original or generated replacement), how do its mistakes
distribute across the two protected groups on held-out real data?
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datasets import AttributedDataset, ensure_valid
from .errors import ConfigError, DataError, NumericError
from .nn.layers import ImageTrunk
from .nn.init import init_module


def dp_gap(err_0: float, err_1: float) -> float:
    """Demographic disparity: absolute difference of group error rates."""
    return abs(err_0 - err_1)


def eo_gap(fnr_0: float, fnr_1: float) -> float:
    """Equalized-odds disparity: absolute difference of group false
    negative rates."""
    return abs(fnr_0 - fnr_1)


@dataclass(frozen=True)
class GroupCounts:
    """Confusion counts for one protected group."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def error_rate(self) -> float | None:
        return (self.fp + self.fn) / self.n if self.n else None

    @property
    def fnr(self) -> float | None:
        pos = self.tp + self.fn
        return self.fn / pos if pos else None

    @property
    def fpr(self) -> float | None:
        neg = self.tn + self.fp
        return self.fp / neg if neg else None


@dataclass(frozen=True)
class GroupMetricsReport:
    """Fairness summary over both groups; gaps are None when a rate is
    undefined for either group (empty denominator)."""

    groups: tuple[GroupCounts, GroupCounts]

    @property
    def dp(self) -> float | None:
        e0, e1 = self.groups[0].error_rate, self.groups[1].error_rate
        return None if e0 is None or e1 is None else dp_gap(e0, e1)

    @property
    def eo(self) -> float | None:
        f0, f1 = self.groups[0].fnr, self.groups[1].fnr
        return None if f0 is None or f1 is None else eo_gap(f0, f1)

    @property
    def overall_error(self) -> float | None:
        n = self.groups[0].n + self.groups[1].n
        wrong = sum(g.fp + g.fn for g in self.groups)
        return wrong / n if n else None


def fairness_metrics(counts_0: GroupCounts, counts_1: GroupCounts) -> GroupMetricsReport:
    return GroupMetricsReport(groups=(counts_0, counts_1))


def group_confusion(
    scores: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray,
    threshold: float = 0.5,
) -> GroupMetricsReport:
    """Confusion counts per group from positive-class scores.

    The decision rule is strict: predict 1 when score > threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if not (scores.shape == labels.shape == groups.shape) or scores.ndim != 1:
        raise DataError("scores, labels, and groups must be equal-length vectors")
    if not np.all(np.isfinite(scores)):
        raise NumericError("classifier scores contain non-finite values")
    preds = scores > threshold
    per_group = []
    for g in (0, 1):
        m = groups == g
        y = labels[m].astype(bool)
        p = preds[m]
        per_group.append(
            GroupCounts(
                tp=int(np.sum(p & y)),
                fp=int(np.sum(p & ~y)),
                tn=int(np.sum(~p & ~y)),
                fn=int(np.sum(~p & y)),
            )
        )
    return fairness_metrics(per_group[0], per_group[1])


@dataclass(frozen=True)
class RocCurve:
    """Full sweep of (fpr, tpr) for one group, thresholds descending.

    ``points[i]`` is attained by predicting 1 when score >= thresholds[i];
    the first point is (0, 0) at threshold +inf and the last is (1, 1).
    ``operating_point`` marks the deployed strict-inequality threshold.
    """

    group: int
    points: np.ndarray  # (m, 2) of (fpr, tpr)
    thresholds: np.ndarray  # (m,)
    operating_point: tuple[float, float]
    operating_threshold: float


def roc_points(
    scores: np.ndarray,
    labels: np.ndarray,
    group: int = 0,
    operating_threshold: float = 0.5,
) -> RocCurve:
    """ROC sweep for one already-filtered set of scores and labels.

    Requires both classes present, otherwise one axis is undefined.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise DataError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError(
            f"ROC undefined: group has {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # keep the last index of every run of equal scores
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, tp[distinct] / n_pos]
    fpr = np.r_[0.0, fp[distinct] / n_neg]
    thresholds = np.r_[np.inf, s[distinct]]
    preds = scores > operating_threshold
    op = (
        float(np.sum(preds & ~labels) / n_neg),
        float(np.sum(preds & labels) / n_pos),
    )
    return RocCurve(
        group=group,
        points=np.stack([fpr, tpr], axis=1),
        thresholds=thresholds,
        operating_point=op,
        operating_threshold=operating_threshold,
    )


def roc_by_group(
    scores: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray,
    operating_threshold: float = 0.5,
) -> tuple[RocCurve, RocCurve]:
    curves = []
    for g in (0, 1):
        m = np.asarray(groups) == g
        curves.append(
            roc_points(
                np.asarray(scores)[m], np.asarray(labels)[m], g, operating_threshold
            )
        )
    return curves[0], curves[1]


# --- principal-component image grids ---


@dataclass(frozen=True)
class EigenGrid:
    """3x3 grid around the mean image of a sample cell.

    Columns step the first principal component (left -1 sd, right +1 sd),
    rows step the second (top +1 sd, bottom -1 sd), corners combine both.
    Component signs are fixed by making each component's
    largest-magnitude coordinate positive.
    """

    mean: np.ndarray  # (C, H, W)
    components: np.ndarray  # (2, C, H, W)
    scales: tuple[float, float]
    cells: np.ndarray  # (3, 3, C, H, W), clipped to [-1, 1]
    degenerate: bool


def eigen_grid(images: np.ndarray, tol: float = 1e-10) -> EigenGrid:
    """Top-two PCA directions of a stack of images, arranged as a grid.

    Degenerate stacks (fewer than two images, or vanishing variance) fall
    back to repeating the mean with a warning rather than failing, so
    report generation survives collapsed generator cells.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise DataError(f"expected a (N, C, H, W) stack, got shape {images.shape}")
    n = images.shape[0]
    shape = images.shape[1:]
    flat = images.reshape(n, -1)
    mean = flat.mean(axis=0)
    centered = flat - mean
    comps = np.zeros((2, flat.shape[1]))
    scales = [0.0, 0.0]
    degenerate = False
    if n >= 2:
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        for k in (0, 1):
            if k < svals.size and svals[k] > tol:
                v = vt[k]
                if v[np.argmax(np.abs(v))] < 0:
                    v = -v
                comps[k] = v
                scales[k] = float(svals[k] / np.sqrt(n))
            else:
                degenerate = True
    else:
        degenerate = True
    if degenerate:
        warnings.warn("image stack has fewer than two principal directions")
    cells = np.empty((3, 3, *shape))
    for row in range(3):
        for col in range(3):
            i, j = col - 1, 1 - row
            cell = mean + i * scales[0] * comps[0] + j * scales[1] * comps[1]
            cells[row, col] = np.clip(cell, -1.0, 1.0).reshape(shape)
    return EigenGrid(
        mean=mean.reshape(shape),
        components=comps.reshape(2, *shape),
        scales=(scales[0], scales[1]),
        cells=cells,
        degenerate=degenerate,
    )


def compose_grid(grid: EigenGrid, pad: int = 1, pad_value: float = 0.0) -> np.ndarray:
    """Tile the 3x3 cells into one (C, 3H + 2 pad, 3W + 2 pad) image."""
    _, _, ch, h, w = grid.cells.shape
    out = np.full((ch, 3 * h + 2 * pad, 3 * w + 2 * pad), pad_value, dtype=np.float32)
    for row in range(3):
        for col in range(3):
            r0 = row * (h + pad)
            c0 = col * (w + pad)
            out[:, r0 : r0 + h, c0 : c0 + w] = grid.cells[row, col]
    return out


# --- outcome classifiers ---


class ClassifierMode(Enum):
    FULL = "full"
    LINEAR_PROBE = "linear_probe"

    @classmethod
    def parse(cls, value: "str | ClassifierMode") -> "ClassifierMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown classifier mode {value!r}") from None


@dataclass(frozen=True)
class ClassifierConfig:
    steps: int = 600
    batch_size: int = 64
    lr_init: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    base_channels: int = 16
    mode: ClassifierMode = ClassifierMode.FULL

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.base_channels < 1:
            raise ConfigError("classifier steps, batch size, channels must be positive")
        if self.lr_init <= 0:
            raise ConfigError("classifier lr_init must be positive")
        if not isinstance(self.mode, ClassifierMode):
            object.__setattr__(self, "mode", ClassifierMode.parse(self.mode))


class OutcomeClassifierModel(torch.nn.Module):
    """Trunk features plus a linear outcome head; in probe mode the trunk
    is borrowed frozen from elsewhere and only the head trains."""

    def __init__(self, trunk: ImageTrunk, frozen_trunk: bool):
        super().__init__()
        self.trunk = trunk
        self.frozen_trunk = frozen_trunk
        self.head = torch.nn.Linear(trunk.feature_dim, 2)
        if frozen_trunk:
            for p in self.trunk.parameters():
                p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.frozen_trunk:
            with torch.no_grad():
                phi = self.trunk(x)
        else:
            phi = self.trunk(x)
        return self.head(phi)

    def scores(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Positive-class probabilities for a stack of images."""
        self.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(x), batch_size):
                xb = torch.from_numpy(np.asarray(x[i : i + batch_size], dtype=np.float32))
                out.append(F.softmax(self(xb), dim=1)[:, 1].numpy())
        return np.concatenate(out).astype(np.float64)


def train_outcome_classifier(
    dataset: AttributedDataset,
    config: ClassifierConfig = ClassifierConfig(),
    seed: int = 0,
    feature_extractor: ImageTrunk | None = None,
) -> OutcomeClassifierModel:
    """Fit an outcome classifier on an attributed dataset.

    FULL mode trains a fresh trunk end to end; LINEAR_PROBE freezes the
    supplied feature extractor and fits only the linear head, leaving the
    extractor's parameters bit-identical. Optimization is Adam with the
    same betas and linear decay schedule as the adversarial models.
    """
    ensure_valid(dataset, "classifier training set")
    if not dataset.outcome_labeled:
        raise DataError("classifier training requires outcome labels")
    ch, h, w = dataset.image_shape
    g = torch.Generator()
    g.manual_seed(seed)
    if config.mode is ClassifierMode.LINEAR_PROBE:
        if feature_extractor is None:
            raise ConfigError("linear probe mode requires a feature extractor")
        model = OutcomeClassifierModel(feature_extractor, frozen_trunk=True)
        was_training = feature_extractor.training
        feature_extractor.eval()
    else:
        if h != w or h < 4 or (h & (h - 1)) != 0:
            raise DataError(f"classifier needs square power-of-two images, got {h}x{w}")
        depth = min(4, int(np.log2(h)) - 1)
        trunk = ImageTrunk(ch, config.base_channels, depth, spectral=False)
        model = OutcomeClassifierModel(trunk, frozen_trunk=False)
        was_training = True
    init_module(model.head, g)
    if not model.frozen_trunk:
        init_module(model.trunk, g)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.lr_init, betas=(config.beta1, config.beta2))
    x = torch.from_numpy(dataset.xs)
    y = torch.from_numpy(dataset.ys_hard)
    n = len(dataset)
    model.train()
    for step in range(config.steps):
        idx = torch.randint(n, (min(config.batch_size, n),), generator=g)
        logits = model(x[idx])
        loss = F.cross_entropy(logits, y[idx])
        if not torch.isfinite(loss):
            raise NumericError(f"classifier loss non-finite at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        for group in opt.param_groups:
            group["lr"] = config.lr_init * (1.0 - step / config.steps)
        opt.step()
    model.eval()
    if config.mode is ClassifierMode.LINEAR_PROBE and was_training:
        feature_extractor.train()
    return model


# --- full pipeline ---


@dataclass(frozen=True)
class MeanReport:
    """Rates averaged over classifier seeds, with both gap aggregations:
    the gap of the seed-averaged rates, and the seed-average of per-seed
    absolute gaps."""

    err: tuple[float, float]
    fnr: tuple[float, float]
    fpr: tuple[float, float]
    overall_err: float
    dp_of_mean: float
    dp_mean_abs: float
    eo_of_mean: float
    eo_mean_abs: float


def summarize_reports(reports: "list[GroupMetricsReport]") -> MeanReport:
    def gather(attr):
        vals = [[getattr(r.groups[g], attr) for r in reports] for g in (0, 1)]
        if any(v is None for pair in vals for v in pair):
            raise DataError(f"rate {attr} undefined for some seed; cannot average")
        return np.array(vals, dtype=np.float64)

    err = gather("error_rate")
    fnr = gather("fnr")
    fpr = gather("fpr")
    overall = np.array([r.overall_error for r in reports], dtype=np.float64)
    return MeanReport(
        err=(float(err[0].mean()), float(err[1].mean())),
        fnr=(float(fnr[0].mean()), float(fnr[1].mean())),
        fpr=(float(fpr[0].mean()), float(fpr[1].mean())),
        overall_err=float(overall.mean()),
        dp_of_mean=dp_gap(float(err[0].mean()), float(err[1].mean())),
        dp_mean_abs=float(np.mean(np.abs(err[0] - err[1]))),
        eo_of_mean=eo_gap(float(fnr[0].mean()), float(fnr[1].mean())),
        eo_mean_abs=float(np.mean(np.abs(fnr[0] - fnr[1]))),
    )


@dataclass(frozen=True)
class PipelineEntry:
    """Evaluation of one training set against the shared real test set."""

    name: str
    per_seed: tuple[GroupMetricsReport, ...]
    mean: MeanReport
    roc: tuple[RocCurve, RocCurve]
    grids: dict[tuple[int, int], EigenGrid] = field(default_factory=dict)


def dataset_eigen_grids(dataset: AttributedDataset) -> dict[tuple[int, int], EigenGrid]:
    """One grid per (c, y) cell that actually occurs in the data."""
    grids = {}
    cs = dataset.cs
    ys = dataset.ys_hard
    for c in (0, 1):
        for y in (0, 1):
            mask = (cs == c) & (ys == y)
            if mask.sum() >= 2:
                grids[(c, y)] = eigen_grid(dataset.xs[mask])
    return grids


def evaluate_pipeline(
    train_sets: dict[str, AttributedDataset],
    test_set: AttributedDataset,
    classifier_config: ClassifierConfig = ClassifierConfig(),
    seeds: tuple[int, ...] = (0, 1, 2),
    threshold: float = 0.5,
    feature_extractor: ImageTrunk | None = None,
    with_grids: bool = True,
) -> dict[str, PipelineEntry]:
    """Train classifiers on each named set and measure them on one shared
    real test set.

    Each set gets one classifier per seed; reported rates are averaged
    over seeds, ROC curves come from the first seed's classifier.
    """
    if not train_sets:
        raise ConfigError("no training sets supplied")
    ensure_valid(test_set, "test set")
    if not test_set.outcome_labeled:
        raise DataError("evaluation test set must carry outcomes")
    results: dict[str, PipelineEntry] = {}
    x_test = test_set.xs
    y_test = test_set.ys_hard
    c_test = test_set.cs
    for name, ds in train_sets.items():
        if ds.image_shape != test_set.image_shape:
            raise DataError(
                f"training set {name!r} shape {ds.image_shape} != test {test_set.image_shape}"
            )
        reports = []
        first_scores = None
        for seed in seeds:
            model = train_outcome_classifier(
                ds, classifier_config, seed=seed, feature_extractor=feature_extractor
            )
            scores = model.scores(x_test)
            if first_scores is None:
                first_scores = scores
            reports.append(group_confusion(scores, y_test, c_test, threshold))
        entry = PipelineEntry(
            name=name,
            per_seed=tuple(reports),
            mean=summarize_reports(reports),
            roc=roc_by_group(first_scores, y_test, c_test, threshold),
            grids=dataset_eigen_grids(ds) if with_grids else {},
        )
        results[name] = entry
    return results


# --- report writers ---


def write_metrics_csv(results: dict[str, PipelineEntry], path) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(
            [
                "name",
                "seed",
                "err_0",
                "err_1",
                "fnr_0",
                "fnr_1",
                "fpr_0",
                "fpr_1",
                "overall_err",
                "dp",
                "eo",
            ]
        )
        for name, entry in results.items():
            for seed_i, rep in enumerate(entry.per_seed):
                g0, g1 = rep.groups
                w.writerow(
                    [
                        name,
                        seed_i,
                        f"{g0.error_rate:.6f}",
                        f"{g1.error_rate:.6f}",
                        f"{g0.fnr:.6f}" if g0.fnr is not None else "",
                        f"{g1.fnr:.6f}" if g1.fnr is not None else "",
                        f"{g0.fpr:.6f}" if g0.fpr is not None else "",
                        f"{g1.fpr:.6f}" if g1.fpr is not None else "",
                        f"{rep.overall_error:.6f}",
                        f"{rep.dp:.6f}" if rep.dp is not None else "",
                        f"{rep.eo:.6f}" if rep.eo is not None else "",
                    ]
                )
            m = entry.mean
            w.writerow(
                [
                    name,
                    "mean",
                    f"{m.err[0]:.6f}",
                    f"{m.err[1]:.6f}",
                    f"{m.fnr[0]:.6f}",
                    f"{m.fnr[1]:.6f}",
                    f"{m.fpr[0]:.6f}",
                    f"{m.fpr[1]:.6f}",
                    f"{m.overall_err:.6f}",
                    f"{m.dp_of_mean:.6f}",
                    f"{m.eo_of_mean:.6f}",
                ]
            )


def format_metrics_table(results: dict[str, PipelineEntry]) -> str:
    lines = [
        f"{'set':<16} {'err0':>7} {'err1':>7} {'DP':>7} "
        f"{'fnr0':>7} {'fnr1':>7} {'EO':>7} {'overall':>8}"
    ]
    for name, entry in results.items():
        m = entry.mean
        lines.append(
            f"{name:<16} {m.err[0]:7.4f} {m.err[1]:7.4f} {m.dp_of_mean:7.4f} "
            f"{m.fnr[0]:7.4f} {m.fnr[1]:7.4f} {m.eo_of_mean:7.4f} {m.overall_err:8.4f}"
        )
    return "\n".join(lines)


def write_roc_csv(curve: RocCurve, path) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, (fpr, tpr) in zip(curve.thresholds, curve.points):
            w.writerow([f"{t:.8g}", f"{fpr:.8f}", f"{tpr:.8f}"])


def plot_roc(curves: dict[str, tuple[RocCurve, RocCurve]], path) -> None:
    """One ROC panel with both groups for every named set, operating
    points marked at the deployed threshold."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    styles = ["-", "--", "-.", ":"]
    for i, (name, (c0, c1)) in enumerate(curves.items()):
        ls = styles[i % len(styles)]
        for curve, color in ((c0, "tab:blue"), (c1, "tab:orange")):
            ax.plot(
                curve.points[:, 0],
                curve.points[:, 1],
                ls,
                color=color,
                label=f"{name} c={curve.group}",
            )
            ax.plot(*curve.operating_point, "o", color=color, markersize=4)
    ax.plot([0, 1], [0, 1], color="gray", linewidth=0.5)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
