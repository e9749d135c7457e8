"""A small 1D-CNN time-series classifier with hand-written gradients.

The network is fixed::

    conv1d(C -> 8 filters, kernel 8, stride 1, valid) -> ReLU
        -> global average pool over time -> dense(8 -> K)

The convolution belongs to the feature extractor; the dense layer is the
classifier head. All parameters live in one flat float64 vector whose
layout records which slice belongs to which named tensor and segment.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidDimensionError, LayoutMismatchError, ShapeMismatchError

FILTERS = 8
KERNEL = 8
MIN_LENGTH = 16

EXTRACTOR = "extractor"
CLASSIFIER = "classifier"


@dataclass(frozen=True)
class TensorSlot:
    name: str
    shape: Tuple[int, ...]
    segment: str
    start: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class Layout:
    """Ordered mapping from named tensors to slices of the flat vector.

    Extractor slots always precede classifier slots, so each segment is a
    single contiguous range.
    """

    slots: Tuple[TensorSlot, ...]

    @classmethod
    def build(cls, entries) -> "Layout":
        """Build from ``(name, shape, segment)`` triples, extractor first."""
        ordered = [e for e in entries if e[2] == EXTRACTOR] + [e for e in entries if e[2] == CLASSIFIER]
        if len(ordered) != len(entries):
            raise ValueError("segment must be 'extractor' or 'classifier'")
        slots, offset = [], 0
        for name, shape, segment in ordered:
            slot = TensorSlot(name, tuple(int(s) for s in shape), segment, offset)
            slots.append(slot)
            offset = slot.stop
        return cls(tuple(slots))

    @cached_property
    def size(self) -> int:
        return self.slots[-1].stop if self.slots else 0

    @cached_property
    def extractor_size(self) -> int:
        return sum(s.size for s in self.slots if s.segment == EXTRACTOR)

    @cached_property
    def classifier_size(self) -> int:
        return self.size - self.extractor_size

    @cached_property
    def _by_name(self) -> Dict[str, TensorSlot]:
        return {s.name: s for s in self.slots}

    def slot(self, name: str) -> TensorSlot:
        return self._by_name[name]

    @cached_property
    def digest(self) -> int:
        """Stable 64-bit identifier of the layout, used on the wire."""
        text = ";".join(f"{s.name}:{'x'.join(map(str, s.shape))}:{s.segment}" for s in self.slots)
        return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GradientTuple:
    """A parameter-shaped vector split into extractor and classifier parts.

    This is the unit that gets clipped, normalized, perturbed, shuffled and
    aggregated.
    """

    extractor: np.ndarray
    classifier: np.ndarray
    layout: Layout

    def __post_init__(self):
        object.__setattr__(self, "extractor", _frozen(self.extractor))
        object.__setattr__(self, "classifier", _frozen(self.classifier))
        if self.extractor.shape != (self.layout.extractor_size,) or self.classifier.shape != (
            self.layout.classifier_size,
        ):
            raise LayoutMismatchError(
                f"segment lengths {self.extractor.size}/{self.classifier.size} do not match layout "
                f"{self.layout.extractor_size}/{self.layout.classifier_size}"
            )

    @classmethod
    def from_flat(cls, flat: np.ndarray, layout: Layout) -> "GradientTuple":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (layout.size,):
            raise LayoutMismatchError(f"expected flat vector of length {layout.size}, got {flat.shape}")
        cut = layout.extractor_size
        return cls(flat[:cut].copy(), flat[cut:].copy(), layout)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.extractor, self.classifier])

    def map(self, fn) -> "GradientTuple":
        return GradientTuple(fn(self.extractor), fn(self.classifier), self.layout)


@dataclass(frozen=True, eq=False)
class ModelParams:
    flat: np.ndarray
    layout: Layout

    def __post_init__(self):
        object.__setattr__(self, "flat", _frozen(self.flat))
        if self.flat.shape != (self.layout.size,):
            raise LayoutMismatchError(f"expected {self.layout.size} parameters, got {self.flat.shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        s = self.layout.slot(name)
        return self.flat[s.start:s.stop].reshape(s.shape)

    @property
    def extractor(self) -> Dict[str, np.ndarray]:
        return {s.name: self[s.name] for s in self.layout.slots if s.segment == EXTRACTOR}

    @property
    def classifier(self) -> Dict[str, np.ndarray]:
        return {s.name: self[s.name] for s in self.layout.slots if s.segment == CLASSIFIER}

    @property
    def num_classes(self) -> int:
        return self.layout.slot("dense.weight").shape[0]

    @property
    def channels(self) -> int:
        return self.layout.slot("conv.weight").shape[1]


def flatten(tensors: Dict[str, np.ndarray], layout: Layout) -> np.ndarray:
    flat = np.empty(layout.size)
    for s in layout.slots:
        t = np.asarray(tensors[s.name], dtype=np.float64)
        if t.shape != s.shape:
            raise ShapeMismatchError(f"{s.name}: expected shape {s.shape}, got {t.shape}")
        flat[s.start:s.stop] = t.ravel()
    return flat


def unflatten(flat: np.ndarray, layout: Layout) -> Dict[str, np.ndarray]:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (layout.size,):
        raise LayoutMismatchError(f"expected flat vector of length {layout.size}, got {flat.shape}")
    return {s.name: flat[s.start:s.stop].reshape(s.shape).copy() for s in layout.slots}


def make_layout(channels: int, classes: int) -> Layout:
    return Layout.build(
        [
            ("conv.weight", (FILTERS, channels, KERNEL), EXTRACTOR),
            ("conv.bias", (FILTERS,), EXTRACTOR),
            ("dense.weight", (classes, FILTERS), CLASSIFIER),
            ("dense.bias", (classes,), CLASSIFIER),
        ]
    )


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray  # [B, C, L]
    labels: np.ndarray  # [B]

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 3:
            raise ShapeMismatchError(f"inputs must be [B, C, L], got shape {self.inputs.shape}")
        if self.inputs.shape[0] < 1 or self.labels.shape != (self.inputs.shape[0],):
            raise ShapeMismatchError("need B >= 1 inputs and exactly one label per input")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def model_init(channels: int, length: int, classes: int, seed: int) -> ModelParams:
    """Seeded fan-in uniform initialization; biases start at zero."""
    if channels < 1 or length < MIN_LENGTH or classes < 2:
        raise InvalidDimensionError(
            f"need C >= 1, L >= {MIN_LENGTH}, K >= 2; got C={channels}, L={length}, K={classes}"
        )
    rng = np.random.default_rng(seed)
    conv_bound = 1.0 / np.sqrt(channels * KERNEL)
    dense_bound = 1.0 / np.sqrt(FILTERS)
    layout = make_layout(channels, classes)
    tensors = {
        "conv.weight": rng.uniform(-conv_bound, conv_bound, (FILTERS, channels, KERNEL)),
        "conv.bias": np.zeros(FILTERS),
        "dense.weight": rng.uniform(-dense_bound, dense_bound, (classes, FILTERS)),
        "dense.bias": np.zeros(classes),
    }
    return ModelParams(flatten(tensors, layout), layout)


def _check(params: ModelParams, batch: Batch) -> None:
    _, c, length = batch.inputs.shape
    if c != params.channels:
        raise ShapeMismatchError(f"batch has {c} channels, model expects {params.channels}")
    if length < KERNEL:
        raise ShapeMismatchError(f"sequence length {length} shorter than kernel {KERNEL}")
    k = params.num_classes
    if batch.labels.min() < 0 or batch.labels.max() >= k:
        raise ShapeMismatchError(f"labels must lie in [0, {k})")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(params: ModelParams, x: np.ndarray):
    b, c, length = x.shape
    steps = length - KERNEL + 1
    # im2col: cols[b, t] holds the C*KERNEL inputs seen by window t
    cols = sliding_window_view(x, KERNEL, axis=2).transpose(0, 2, 1, 3).reshape(b, steps, c * KERNEL)
    z = cols @ params["conv.weight"].reshape(FILTERS, c * KERNEL).T + params["conv.bias"]  # [B, L', F]
    h = np.maximum(z, 0.0).mean(axis=1)
    logits = h @ params["dense.weight"].T + params["dense.bias"]
    return cols, z, h, logits


def logits(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    return _forward(params, np.asarray(inputs, dtype=np.float64))[3]


def predict(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    return logits(params, inputs).argmax(axis=1)


def forward(params: ModelParams, batch: Batch) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and class probabilities for a batch."""
    _check(params, batch)
    logp = _log_softmax(_forward(params, batch.inputs)[3])
    loss = -logp[np.arange(len(batch)), batch.labels].mean()
    return float(loss), np.exp(logp)


def value_and_grad(params: ModelParams, batch: Batch) -> Tuple[float, GradientTuple]:
    _check(params, batch)
    b = len(batch)
    cols, z, h, out = _forward(params, batch.inputs)
    logp = _log_softmax(out)
    rows = np.arange(b)
    loss = -logp[rows, batch.labels].mean()

    dlogits = np.exp(logp)
    dlogits[rows, batch.labels] -= 1.0
    dlogits /= b
    d_dense_w = dlogits.T @ h
    d_dense_b = dlogits.sum(axis=0)
    dh = dlogits @ params["dense.weight"]
    dz = (z > 0) * (dh[:, None, :] / z.shape[1])
    d_conv_w = (dz.reshape(-1, FILTERS).T @ cols.reshape(-1, cols.shape[2])).reshape(params["conv.weight"].shape)
    d_conv_b = dz.sum(axis=(0, 1))

    flat = flatten(
        {"conv.weight": d_conv_w, "conv.bias": d_conv_b, "dense.weight": d_dense_w, "dense.bias": d_dense_b},
        params.layout,
    )
    return float(loss), GradientTuple.from_flat(flat, params.layout)


def backward(params: ModelParams, batch: Batch) -> GradientTuple:
    """Exact gradient of the mean cross-entropy w.r.t. every parameter."""
    return value_and_grad(params, batch)[1]


def apply_update(params: ModelParams, update: GradientTuple, lr: float) -> ModelParams:
    if update.layout.digest != params.layout.digest:
        raise LayoutMismatchError("update layout does not match model layout")
    return ModelParams(params.flat - lr * update.flat(), params.layout)
