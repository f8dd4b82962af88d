"""Attributed image datasets and deterministic splits.

A sample couples an image with a binary protected attribute ``c`` and an
optional binary allocative outcome. Outcomes carry two encodings: ``y_hard``
in {0, 1} for classification and evaluation, and ``y_soft`` in (-1, 1) for
the generator/discriminator pair, which models the outcome as a continuous
scalar.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError


class FairnessObjective(Enum):
    """Which fairness penalty the generator trains against."""

    NONE = "none"
    DP = "dp"
    EO = "eo"

    @classmethod
    def parse(cls, value: "str | FairnessObjective") -> "FairnessObjective":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            options = ", ".join(m.value for m in cls)
            raise ConfigError(
                f"unknown fairness objective {value!r}; expected one of: {options}"
            ) from None


@dataclass(frozen=True)
class AttributedSample:
    """One image with its protected attribute and optional outcome."""

    x: np.ndarray  # (C, H, W) float32 in [-1, 1]
    c: int
    y_hard: int | None = None
    y_soft: float | None = None


@dataclass(frozen=True)
class AttributedDataset:
    """Immutable collection of attributed samples with a uniform image shape."""

    samples: tuple[AttributedSample, ...]
    image_shape: tuple[int, int, int]
    outcome_labeled: bool

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[AttributedSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> AttributedSample:
        return self.samples[index]

    @classmethod
    def from_arrays(
        cls,
        x: np.ndarray,
        c: np.ndarray,
        y_hard: np.ndarray | None = None,
        y_soft: np.ndarray | None = None,
    ) -> "AttributedDataset":
        """Build a dataset from stacked arrays; ``x`` is (N, C, H, W)."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 4:
            raise DataError(f"expected (N, C, H, W) images, got shape {x.shape}")
        c = np.asarray(c)
        n = x.shape[0]
        if c.shape != (n,):
            raise DataError(f"attribute array has shape {c.shape}, expected ({n},)")
        if y_hard is not None and np.asarray(y_hard).shape != (n,):
            raise DataError("outcome array length does not match images")
        if y_soft is not None and np.asarray(y_soft).shape != (n,):
            raise DataError("soft outcome array length does not match images")
        samples = []
        for i in range(n):
            samples.append(
                AttributedSample(
                    x=x[i],
                    c=int(c[i]),
                    y_hard=None if y_hard is None else int(y_hard[i]),
                    y_soft=None if y_soft is None else float(y_soft[i]),
                )
            )
        shape = tuple(int(d) for d in x.shape[1:])
        return cls(
            samples=tuple(samples),
            image_shape=shape,  # type: ignore[arg-type]
            outcome_labeled=y_hard is not None,
        )

    @cached_property
    def xs(self) -> np.ndarray:
        """All images stacked as (N, C, H, W) float32."""
        if not self.samples:
            return np.zeros((0, *self.image_shape), dtype=np.float32)
        return np.stack([s.x for s in self.samples]).astype(np.float32)

    @cached_property
    def cs(self) -> np.ndarray:
        return np.array([s.c for s in self.samples], dtype=np.int64)

    @cached_property
    def ys_hard(self) -> np.ndarray:
        if not self.outcome_labeled:
            raise DataError("dataset has no outcome labels")
        return np.array([s.y_hard for s in self.samples], dtype=np.int64)

    @cached_property
    def ys_soft(self) -> np.ndarray:
        if any(s.y_soft is None for s in self.samples):
            raise DataError("dataset has no soft outcomes")
        return np.array([s.y_soft for s in self.samples], dtype=np.float32)

    @property
    def has_soft_outcomes(self) -> bool:
        return bool(self.samples) and all(s.y_soft is not None for s in self.samples)

    def subset(self, indices: Sequence[int]) -> "AttributedDataset":
        """New dataset containing ``samples[i]`` for each index, in order."""
        picked = tuple(self.samples[int(i)] for i in indices)
        return AttributedDataset(picked, self.image_shape, self.outcome_labeled)


@dataclass(frozen=True)
class SplitConfig:
    """Deterministic train/test partition parameters."""

    test_fraction: float
    seed: int = 0
    stratify: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(
                f"test_fraction must lie in (0, 1), got {self.test_fraction}"
            )


@dataclass(frozen=True)
class Violation:
    """One validation failure; ``index`` is None for dataset-level issues."""

    index: int | None
    message: str


def validate_dataset(dataset: AttributedDataset) -> list[Violation]:
    """Check every sample against the dataset contract.

    Returns all violations found rather than raising, so callers can report
    a complete diagnosis of a bad manifest in one pass.
    """
    violations: list[Violation] = []
    shape = dataset.image_shape
    n_hard = 0
    n_soft = 0
    for i, s in enumerate(dataset.samples):
        if not isinstance(s.x, np.ndarray) or s.x.dtype != np.float32:
            violations.append(Violation(i, "image is not a float32 array"))
            continue
        if s.x.shape != shape:
            violations.append(
                Violation(i, f"image shape {s.x.shape} != dataset shape {shape}")
            )
        if not np.all(np.isfinite(s.x)):
            violations.append(Violation(i, "image contains non-finite values"))
        elif s.x.size and (s.x.min() < -1.0 or s.x.max() > 1.0):
            violations.append(Violation(i, "image values fall outside [-1, 1]"))
        if s.c not in (0, 1):
            violations.append(Violation(i, f"attribute c={s.c!r} is not binary"))
        if s.y_hard is not None:
            n_hard += 1
            if s.y_hard not in (0, 1):
                violations.append(Violation(i, f"outcome y={s.y_hard!r} is not binary"))
        if s.y_soft is not None:
            n_soft += 1
            if not np.isfinite(s.y_soft) or not -1.0 < s.y_soft < 1.0:
                violations.append(
                    Violation(i, f"soft outcome {s.y_soft!r} outside (-1, 1)")
                )
    n = len(dataset.samples)
    if 0 < n_hard < n:
        violations.append(
            Violation(None, f"{n_hard} of {n} samples carry outcomes; must be all or none")
        )
    if 0 < n_soft < n:
        violations.append(
            Violation(None, f"{n_soft} of {n} samples carry soft outcomes; must be all or none")
        )
    if dataset.outcome_labeled and n_hard < n:
        violations.append(Violation(None, "dataset marked labeled but outcomes missing"))
    if not dataset.outcome_labeled and n_hard == n and n > 0:
        violations.append(Violation(None, "dataset marked unlabeled but outcomes present"))
    return violations


def ensure_valid(dataset: AttributedDataset, what: str = "dataset") -> None:
    """Raise :class:`DataError` summarizing the first violations, if any."""
    violations = validate_dataset(dataset)
    if violations:
        shown = "; ".join(
            (f"[{v.index}] " if v.index is not None else "") + v.message
            for v in violations[:5]
        )
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        raise DataError(f"invalid {what}: {shown}{more}")


def _stratum_keys(dataset: AttributedDataset, stratify: bool) -> list[tuple]:
    if not stratify:
        return [(0,)] * len(dataset)
    if dataset.outcome_labeled:
        return [(s.c, s.y_hard) for s in dataset.samples]
    return [(s.c,) for s in dataset.samples]


def split_dataset(
    dataset: AttributedDataset, config: SplitConfig
) -> tuple[AttributedDataset, AttributedDataset]:
    """Partition into (train, test), deterministically for a given seed.

    With ``stratify`` the test quota is apportioned across (c, y) cells by
    largest remainder, so group base rates survive the split as closely as
    integer counts allow. Cells absent from the data are skipped with a
    warning. The two parts are disjoint and cover the input.
    """
    n = len(dataset)
    if n < 2:
        raise DataError(f"cannot split a dataset of {n} samples")
    rng = np.random.default_rng(config.seed)
    keys = _stratum_keys(dataset, config.stratify)
    strata: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        strata.setdefault(k, []).append(i)

    if config.stratify and dataset.outcome_labeled:
        expected = {(c, y) for c in (0, 1) for y in (0, 1)}
        missing = sorted(expected - set(strata))
        if missing:
            warnings.warn(
                f"strata absent from data, skipped: {missing}", stacklevel=2
            )

    n_test = int(np.floor(config.test_fraction * n + 0.5))
    n_test = min(max(n_test, 1), n - 1)

    ordered = sorted(strata.items())
    quotas = [n_test * len(idx) / n for _, idx in ordered]
    base = [int(np.floor(q)) for q in quotas]
    shortfall = n_test - sum(base)
    remainder_rank = sorted(
        range(len(ordered)),
        key=lambda j: (-(quotas[j] - base[j]), -len(ordered[j][1]), j),
    )
    for j in remainder_rank[:shortfall]:
        base[j] += 1

    test_idx: list[int] = []
    train_idx: list[int] = []
    for (key, idx), take in zip(ordered, base):
        take = min(take, len(idx))
        perm = rng.permutation(len(idx))
        shuffled = [idx[p] for p in perm]
        test_idx.extend(shuffled[:take])
        train_idx.extend(shuffled[take:])
    test_idx.sort()
    train_idx.sort()
    return dataset.subset(train_idx), dataset.subset(test_idx)
