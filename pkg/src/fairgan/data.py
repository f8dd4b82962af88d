"""Dataset I/O and construction: manifests with PNG images, stroke-vector
rasterization, and a synthetic benchmark with a planted group bias.

Images on disk are 8-bit PNGs; in memory they are float32 in [-1, 1]. The
quantization used for writing is idempotent: loading a written image and
writing it again reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .datasets import AttributedDataset, AttributedSample, ensure_valid
from .errors import ConfigError, DataError


def image_to_unit_range(arr: np.ndarray) -> np.ndarray:
    """uint8 (H, W[, 3]) to float32 (C, H, W) in [-1, 1]."""
    x = arr.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    if x.ndim == 2:
        return x[None, :, :]
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def unit_range_to_image(x: np.ndarray) -> np.ndarray:
    """float32 (C, H, W) in [-1, 1] to uint8 (H, W[, 3])."""
    u = np.clip(np.round((x + 1.0) * 127.5), 0, 255).astype(np.uint8)
    if u.shape[0] == 1:
        return u[0]
    return np.ascontiguousarray(u.transpose(1, 2, 0))


def save_png(x: np.ndarray, path) -> None:
    Image.fromarray(unit_range_to_image(x)).save(path, format="PNG")


def load_png(path, channels: int) -> np.ndarray:
    mode = "L" if channels == 1 else "RGB"
    with Image.open(path) as im:
        arr = np.asarray(im.convert(mode))
    return image_to_unit_range(arr)


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    c: int
    y: int | None = None
    y_soft: float | None = None


@dataclass(frozen=True)
class Manifest:
    """Relative image paths plus attributes, as stored in manifest.csv."""

    rows: tuple[ManifestRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def has_outcomes(self) -> bool:
        return bool(self.rows) and all(r.y is not None for r in self.rows)


MANIFEST_NAME = "manifest.csv"


def _parse_binary(value: str, what: str, line: int) -> int:
    if value not in ("0", "1"):
        raise DataError(f"manifest line {line}: {what}={value!r} is not 0 or 1")
    return int(value)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "image_path" not in reader.fieldnames:
            raise DataError(f"manifest {path} lacks an image_path column")
        if "c" not in reader.fieldnames:
            raise DataError(f"manifest {path} lacks a c column")
        has_y = "y" in reader.fieldnames
        has_soft = "y_soft" in reader.fieldnames
        rows = []
        seen: set[str] = set()
        for i, rec in enumerate(reader, start=2):
            rel = rec["image_path"]
            if not rel:
                raise DataError(f"manifest line {i}: empty image_path")
            if rel in seen:
                raise DataError(f"manifest line {i}: duplicate image_path {rel!r}")
            seen.add(rel)
            y = rec.get("y", "") if has_y else ""
            soft = rec.get("y_soft", "") if has_soft else ""
            rows.append(
                ManifestRow(
                    image_path=rel,
                    c=_parse_binary(rec["c"], "c", i),
                    y=_parse_binary(y, "y", i) if y != "" else None,
                    y_soft=float(soft) if soft != "" else None,
                )
            )
    if not rows:
        raise DataError(f"manifest {path} is empty")
    n_y = sum(r.y is not None for r in rows)
    if 0 < n_y < len(rows):
        raise DataError(
            f"manifest {path}: {n_y} of {len(rows)} rows carry outcomes; must be all or none"
        )
    return Manifest(rows=tuple(rows))


def save_manifest(manifest: Manifest, path) -> None:
    with_y = manifest.has_outcomes
    with_soft = all(r.y_soft is not None for r in manifest.rows)
    cols = ["image_path", "c"] + (["y"] if with_y else []) + (
        ["y_soft"] if with_soft else []
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in manifest.rows:
            row: list = [r.image_path, r.c]
            if with_y:
                row.append(r.y)
            if with_soft:
                # repr of the exact double so float32 round-trips bit-exactly
                row.append(repr(float(r.y_soft)))
            writer.writerow(row)


def load_attributed_images(root, manifest_path=None) -> AttributedDataset:
    """Read a dataset directory: manifest.csv plus the PNGs it names.

    All images must share one shape; a mismatch anywhere is a data error
    naming the offending file.
    """
    root = Path(root)
    manifest = load_manifest(manifest_path or root / MANIFEST_NAME)
    base = Path(manifest_path).parent if manifest_path else root
    xs, shape = [], None
    for r in manifest.rows:
        p = base / r.image_path
        if not p.exists():
            raise DataError(f"image listed in manifest is missing: {p}")
        with Image.open(p) as im:
            channels = 1 if im.mode in ("L", "1", "I", "I;16") else 3
        x = load_png(p, channels)
        if shape is None:
            shape = x.shape
        elif x.shape != shape:
            raise DataError(
                f"image {p} has shape {x.shape}, expected {shape} from the first image"
            )
        xs.append(x)
    ds = AttributedDataset.from_arrays(
        np.stack(xs),
        np.array([r.c for r in manifest.rows]),
        np.array([r.y for r in manifest.rows]) if manifest.has_outcomes else None,
        np.array([r.y_soft for r in manifest.rows], dtype=np.float32)
        if all(r.y_soft is not None for r in manifest.rows)
        else None,
    )
    ensure_valid(ds, f"dataset at {root}")
    return ds


def save_attributed_dataset(dataset: AttributedDataset, out_dir, overwrite: bool = False) -> Path:
    """Write PNGs under ``out_dir/images`` and a manifest.csv beside them.

    Returns the manifest path. Refuses to clobber an existing manifest
    unless ``overwrite`` is set.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise ConfigError(f"{manifest_path} exists; pass overwrite to replace it")
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(dataset.samples):
        rel = f"images/{i:06d}.png"
        save_png(s.x, out_dir / rel)
        rows.append(
            ManifestRow(image_path=rel, c=s.c, y=s.y_hard, y_soft=s.y_soft)
        )
    save_manifest(Manifest(rows=tuple(rows)), manifest_path)
    return manifest_path


# --- stroke-vector rasterization ---


@dataclass(frozen=True)
class StrokeDrawing:
    """Polyline strokes in integer canvas coordinates: ((xs, ys), ...).

    An empty stroke tuple is legal and rasterizes to a blank canvas.
    """

    strokes: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        for k, (xs, ys) in enumerate(self.strokes):
            if len(xs) != len(ys) or not xs:
                raise DataError(f"stroke {k} coordinate lists are empty or unequal")
            for v in (*xs, *ys):
                if not float(v).is_integer():
                    raise DataError(f"stroke {k} has non-integer coordinate {v!r}")


@dataclass(frozen=True)
class StrokeRecord:
    drawing: StrokeDrawing
    word: str = ""
    countrycode: str = ""
    recognized: bool = True


def load_stroke_file(path, limit: int | None = None) -> list[StrokeRecord]:
    """Parse newline-delimited JSON stroke records (one drawing per line)."""
    records = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                strokes = tuple(
                    (tuple(int(v) for v in s[0]), tuple(int(v) for v in s[1]))
                    for s in doc["drawing"]
                )
                records.append(
                    StrokeRecord(
                        drawing=StrokeDrawing(strokes=strokes),
                        word=doc.get("word", ""),
                        countrycode=doc.get("countrycode", ""),
                        recognized=bool(doc.get("recognized", True)),
                    )
                )
            except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as e:
                raise DataError(f"{path} line {i}: bad stroke record: {e}") from e
            if limit is not None and len(records) >= limit:
                break
    if not records:
        raise DataError(f"{path} contains no stroke records")
    return records


def _div_round(num: int, den: int) -> int:
    """round(num / den) for num >= 0, den > 0, in exact integer arithmetic."""
    return (2 * num + den) // (2 * den)


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> Iterable[tuple[int, int]]:
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_strokes(drawing: StrokeDrawing, size: int, margin: int = 2) -> np.ndarray:
    """Render a stroke drawing to a (1, size, size) float32 bitmap.

    The drawing is scaled to fit the box minus the margin, preserving
    aspect ratio and centering the slack axis; lines are one pixel wide,
    ink +1 on a -1 background. Coordinates are mapped with exact rational
    rounding, so scaling every input coordinate by a common integer factor
    yields the identical bitmap.
    """
    if size < 2 * margin + 2:
        raise ConfigError(f"size {size} too small for margin {margin}")
    if not drawing.strokes:
        warnings.warn("empty drawing rasterized to a blank canvas")
        return np.full((1, size, size), -1.0, dtype=np.float32)
    xs_all = [v for xs, _ in drawing.strokes for v in xs]
    ys_all = [v for _, ys in drawing.strokes for v in ys]
    x_min, y_min = min(xs_all), min(ys_all)
    span = max(max(xs_all) - x_min, max(ys_all) - y_min, 1)
    target = size - 2 * margin - 1  # largest mapped offset
    w_scaled = _div_round((max(xs_all) - x_min) * target, span)
    h_scaled = _div_round((max(ys_all) - y_min) * target, span)
    off_x = margin + (target - w_scaled) // 2
    off_y = margin + (target - h_scaled) // 2

    def to_px(x: int, y: int) -> tuple[int, int]:
        return (
            off_x + _div_round((x - x_min) * target, span),
            off_y + _div_round((y - y_min) * target, span),
        )

    img = np.full((size, size), -1.0, dtype=np.float32)
    for xs, ys in drawing.strokes:
        pts = [to_px(int(x), int(y)) for x, y in zip(xs, ys)]
        if len(pts) == 1:
            px, py = pts[0]
            img[py, px] = 1.0
            continue
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            for px, py in _bresenham(x0, y0, x1, y1):
                img[py, px] = 1.0
    return img[None, :, :]


def binarize_outcome(rate: float, threshold: float) -> int:
    """Positive outcome when a non-negative per-unit rate exceeds the
    threshold."""
    if not math.isfinite(rate) or rate < 0:
        raise DataError(f"rate must be finite and non-negative, got {rate!r}")
    if not math.isfinite(threshold):
        raise DataError(f"threshold must be finite, got {threshold!r}")
    return int(rate > threshold)


# --- synthetic benchmark with a planted bias ---


@dataclass(frozen=True)
class ClassMarker:
    """Visible rendering of the protected attribute: per-class background
    and glyph ink levels in [-1, 1]. Unequal contrasts plant a bias where
    one group's glyph is much harder to read."""

    background: tuple[float, float] = (-1.0, -0.6)
    ink: tuple[float, float] = (0.9, 0.9)

    def __post_init__(self) -> None:
        for v in (*self.background, *self.ink):
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"marker level {v} outside [-1, 1]")


@dataclass(frozen=True)
class SyntheticBiasSpec:
    """Sampling plan: glyph uniform in {square, disc}, attribute
    Bernoulli(p_c), outcome Bernoulli(p_y_given[glyph][c])."""

    n: int
    image_size: int = 32
    p_c: float = 0.5
    p_y_given: tuple[tuple[float, float], tuple[float, float]] = (
        (0.9, 0.6),
        (0.4, 0.1),
    )
    marker: ClassMarker = field(default_factory=ClassMarker)
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        probs = [self.p_c, *self.p_y_given[0], *self.p_y_given[1]]
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability {p} outside [0, 1]")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """Per-sample latent glyphs plus the analytic glyph-informed Bayes
    error rates of each group at threshold 1/2."""

    glyphs: np.ndarray  # (n,) 0=square, 1=disc
    bayes_err: tuple[float, float]
    bayes_fnr: tuple[float, float]
    bayes_fpr: tuple[float, float]


def glyph_stencils(size: int) -> np.ndarray:
    """Boolean (2, size, size) masks for the square and disc glyphs."""
    side = int(round(0.5 * size))
    start = (size - side) // 2
    square = np.zeros((size, size), dtype=bool)
    square[start : start + side, start : start + side] = True
    center = (size - 1) / 2.0
    r = 0.3 * size
    ii, jj = np.mgrid[0:size, 0:size]
    disc = (ii - center) ** 2 + (jj - center) ** 2 <= r**2
    if bool(np.all(square == disc)):
        raise ConfigError(f"glyphs indistinguishable at size {size}")
    return np.stack([square, disc])


def _bayes_rates(spec: SyntheticBiasSpec) -> SyntheticGroundTruth:
    p = spec.p_y_given
    err, fnr, fpr = [], [], []
    for c in (0, 1):
        decide = [1 if p[g][c] > 0.5 else 0 for g in (0, 1)]
        err.append(sum(0.5 * (1 - p[g][c] if decide[g] else p[g][c]) for g in (0, 1)))
        p_y1 = sum(0.5 * p[g][c] for g in (0, 1))
        p_y0 = 1.0 - p_y1
        fnr.append(
            sum(0.5 * p[g][c] * (1 - decide[g]) for g in (0, 1)) / p_y1 if p_y1 else float("nan")
        )
        fpr.append(
            sum(0.5 * (1 - p[g][c]) * decide[g] for g in (0, 1)) / p_y0 if p_y0 else float("nan")
        )
    return SyntheticGroundTruth(
        glyphs=np.zeros(0, dtype=np.int64),
        bayes_err=(err[0], err[1]),
        bayes_fnr=(fnr[0], fnr[1]),
        bayes_fpr=(fpr[0], fpr[1]),
    )


def synthesize_biased_dataset(
    spec: SyntheticBiasSpec,
) -> tuple[AttributedDataset, SyntheticGroundTruth]:
    """Draw a dataset from the spec's sampling plan and render it.

    Each image is the class background, the glyph in class ink, then iid
    gaussian pixel noise, clipped to [-1, 1].
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.image_size
    stencils = glyph_stencils(s)
    c = (rng.random(spec.n) < spec.p_c).astype(np.int64)
    glyphs = rng.integers(0, 2, size=spec.n)
    p = np.array(spec.p_y_given, dtype=np.float64)
    y = (rng.random(spec.n) < p[glyphs, c]).astype(np.int64)
    bg = np.array(spec.marker.background, dtype=np.float32)
    ink = np.array(spec.marker.ink, dtype=np.float32)
    x = np.empty((spec.n, 1, s, s), dtype=np.float32)
    for i in range(spec.n):
        canvas = np.full((s, s), bg[c[i]], dtype=np.float32)
        canvas[stencils[glyphs[i]]] = ink[c[i]]
        x[i, 0] = canvas
    if spec.noise_std > 0:
        x += rng.normal(0.0, spec.noise_std, size=x.shape).astype(np.float32)
        np.clip(x, -1.0, 1.0, out=x)
    dataset = AttributedDataset.from_arrays(x, c, y)
    truth = _bayes_rates(spec)
    return dataset, SyntheticGroundTruth(
        glyphs=glyphs,
        bayes_err=truth.bayes_err,
        bayes_fnr=truth.bayes_fnr,
        bayes_fpr=truth.bayes_fpr,
    )


def masked_contrast_spec(
    n: int,
    seed: int = 0,
    image_size: int = 32,
    hidden_contrast: float = 0.1,
    noise_std: float = 0.12,
) -> SyntheticBiasSpec:
    """Benchmark instance where group 1's glyph is nearly invisible.

    Group 0 renders at full contrast; group 1's ink sits
    ``hidden_contrast`` above its background, below the noise floor, so an
    image classifier can read the glyph for group 0 but must fall back to
    the group prior for group 1. With the default outcome table this
    yields a large planted gap in group error rates.
    """
    base1 = 0.35
    return SyntheticBiasSpec(
        n=n,
        image_size=image_size,
        marker=ClassMarker(
            background=(-1.0, base1), ink=(0.9, base1 + hidden_contrast)
        ),
        noise_std=noise_std,
        seed=seed,
    )
