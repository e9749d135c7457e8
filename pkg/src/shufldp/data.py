"""Time-series datasets: synthetic generation, windowing, splitting, CSV I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import DataError, InvalidDimensionError, ParseError

STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    x: np.ndarray  # [S, C, L]
    y: np.ndarray  # [S]
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 3 or y.shape != (x.shape[0],):
            raise DataError(f"expected x [S, C, L] and y [S], got {x.shape} and {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def channels(self) -> int:
        return self.x.shape[1]

    @property
    def length(self) -> int:
        return self.x.shape[2]

    def subset(self, index) -> "TimeSeriesDataset":
        return TimeSeriesDataset(self.x[index], self.y[index], self.num_classes, self.name)


def synth_generate(
    classes: int,
    length: int,
    channels: int,
    per_class: int,
    noise_sigma: float,
    seed: int,
    random_phase: bool = True,
) -> TimeSeriesDataset:
    """Noisy sinusoids whose frequency encodes class and channel.

    Sample of class c, channel j: sin(2π(c+1)(j+1)t/L + φ) + σ·N(0, 1), with
    one phase φ ~ U(0, 2π) per sample (or φ = 0 when ``random_phase`` is
    off). Classes are exactly balanced and emitted in class order.
    """
    if classes < 2 or length < 16 or per_class < 2 or channels < 1:
        raise InvalidDimensionError(
            f"need K >= 2, L >= 16, C >= 1, per_class >= 2; got K={classes}, L={length}, "
            f"C={channels}, per_class={per_class}"
        )
    rng = np.random.default_rng(seed)
    total = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    phase = rng.uniform(0.0, 2.0 * math.pi, total) if random_phase else np.zeros(total)
    t = np.arange(length)
    freq = (labels[:, None] + 1) * (np.arange(channels)[None, :] + 1)  # [S, C]
    angle = 2.0 * math.pi * freq[:, :, None] * t[None, None, :] / length + phase[:, None, None]
    x = np.sin(angle)
    if noise_sigma > 0:
        x = x + noise_sigma * rng.standard_normal(x.shape)
    return TimeSeriesDataset(x, labels, classes, name="synthetic")


def sliding_window(series: np.ndarray, width: int, stride: int) -> np.ndarray:
    """Windows of shape [count, C, width] at offsets 0, stride, 2·stride, ..."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise DataError(f"series must be [C, L], got shape {series.shape}")
    if width < 1 or stride < 1:
        raise DataError("window width and stride must be >= 1")
    if width > series.shape[1]:
        raise DataError(f"window width {width} exceeds series length {series.shape[1]}")
    count = (series.shape[1] - width) // stride + 1
    return np.stack([series[:, i * stride:i * stride + width] for i in range(count)])


def train_test_split(
    ds: TimeSeriesDataset, ratio: float, seed: int
) -> Tuple[TimeSeriesDataset, TimeSeriesDataset]:
    if not 0 < ratio < 1:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(ds))
    cut = int(round(ratio * len(ds)))
    if cut == 0 or cut == len(ds):
        raise DataError(f"split of {len(ds)} samples at ratio {ratio} leaves one side empty")
    return ds.subset(order[:cut]), ds.subset(order[cut:])


@dataclass(frozen=True)
class ZScoreStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C]

    def apply(self, ds: TimeSeriesDataset) -> TimeSeriesDataset:
        x = (ds.x - self.mean[None, :, None]) / self.std[None, :, None]
        return TimeSeriesDataset(x, ds.y, ds.num_classes, ds.name)

    def invert(self, ds: TimeSeriesDataset) -> TimeSeriesDataset:
        x = ds.x * self.std[None, :, None] + self.mean[None, :, None]
        return TimeSeriesDataset(x, ds.y, ds.num_classes, ds.name)


def zscore_fit_apply(train: TimeSeriesDataset, test: TimeSeriesDataset):
    """Per-channel standardization fitted on ``train`` only."""
    if len(train) == 0:
        raise DataError("cannot fit normalization on an empty training set")
    mean = train.x.mean(axis=(0, 2))
    std = np.maximum(train.x.std(axis=(0, 2)), STD_FLOOR)
    stats = ZScoreStats(mean, std)
    return stats.apply(train), stats.apply(test), stats


def load_csv(path, classes: int, length: int, channels: int) -> TimeSeriesDataset:
    """Read header-less rows of ``label, v_1 .. v_{L*C}`` (channel-major).

    Values are returned as stored; standardize after splitting.
    """
    expected = 1 + length * channels
    xs, ys = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(",")
            if len(fields) != expected:
                raise ParseError(f"expected {expected} fields, got {len(fields)}", lineno)
            try:
                label = int(fields[0])
            except ValueError:
                raise ParseError(f"label {fields[0]!r} is not an integer", lineno) from None
            if not 0 <= label < classes:
                raise ParseError(f"label {label} outside [0, {classes})", lineno)
            try:
                values = np.array([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", lineno) from None
            if not np.isfinite(values).all():
                raise ParseError("non-finite value", lineno)
            xs.append(values.reshape(channels, length))
            ys.append(label)
    if not xs:
        raise DataError(f"{path}: no samples")
    return TimeSeriesDataset(np.stack(xs), np.array(ys), classes, name=Path(path).stem)


def write_csv(ds: TimeSeriesDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y in zip(ds.x, ds.y):
            fh.write(",".join([str(int(y))] + [repr(float(v)) for v in x.ravel()]))
            fh.write("\n")
