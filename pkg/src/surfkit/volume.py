"""Voxel-grid data model and label/probability conversions.

Arrays are stored C-order as ``(z, y, x)`` with x fastest. Multi-channel
volumes put the class axis first: ``(C, z, y, x)``. Everything is held in
float64 internally; only file payloads may be narrower.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from surfkit.errors import InvalidLabel, NonFiniteInput, ShapeError

SIMPLEX_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid3:
    """Voxel counts and physical spacing (mm), both ordered (z, y, x)."""

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        if len(shape) != 3 or len(spacing) != 3:
            raise ShapeError(f"Grid3 needs 3 axes, got shape={shape} spacing={spacing}")
        if any(s < 1 for s in shape):
            raise ShapeError(f"shape entries must be >= 1, got {shape}")
        if any(not (math.isfinite(s) and s > 0) for s in spacing):
            raise ShapeError(f"spacing entries must be finite and > 0, got {spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1] * self.shape[2]


def _check_grid_shape(grid: Grid3, arr: np.ndarray, lead: int = 0) -> None:
    if arr.shape[lead:] != grid.shape:
        raise ShapeError(f"array shape {arr.shape} does not match grid {grid.shape}")


@dataclass(frozen=True)
class LabelVolume:
    grid: Grid3
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype.kind not in "iub":
            raise InvalidLabel(f"labels must be integers, got dtype {labels.dtype}")
        _check_grid_shape(self.grid, labels)
        if self.num_classes < 1:
            raise InvalidLabel("num_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidLabel(
                f"labels must lie in [0, {self.num_classes - 1}], "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))


@dataclass(frozen=True)
class ProbVolume:
    """Per-class voxel values in [0, 1], shape ``(C, z, y, x)``."""

    grid: Grid3
    values: np.ndarray
    simplex: bool = False
    binary: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise ShapeError(f"ProbVolume values must be (C, z, y, x), got {values.shape}")
        _check_grid_shape(self.grid, values, lead=1)
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("ProbVolume contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("ProbVolume values must lie in [0, 1]")
        sums = values.sum(axis=0)
        if self.binary:
            if not np.all((values == 0.0) | (values == 1.0)) or not np.all(sums == 1.0):
                raise ValueError("binary ProbVolume must be one-hot at every voxel")
        elif self.simplex and np.max(np.abs(sums - 1.0)) > SIMPLEX_TOL:
            raise ValueError("simplex ProbVolume must sum to 1 per voxel")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ScalarField:
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _check_grid_shape(self.grid, values)
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("ScalarField contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))


@dataclass(frozen=True)
class FieldStack:
    """A per-class stack of scalar fields, shape ``(C, z, y, x)`` (DTMs, logits)."""

    grid: Grid3
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise ShapeError(f"FieldStack values must be (C, z, y, x), got {values.shape}")
        _check_grid_shape(self.grid, values, lead=1)
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("FieldStack contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]


def one_hot_array(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot encode an integer array into float64 ``(C, *labels.shape)``."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabel(f"label outside [0, {num_classes - 1}]")
    classes = np.arange(num_classes).reshape((-1,) + (1,) * labels.ndim)
    return (labels[None] == classes).astype(np.float64)


def one_hot(labels: LabelVolume) -> ProbVolume:
    return ProbVolume(
        labels.grid, one_hot_array(labels.labels, labels.num_classes), binary=True
    )


def softmax_array(logits: np.ndarray) -> np.ndarray:
    """Softmax over axis 0 with per-voxel max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits must be finite")
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_field(logits: FieldStack) -> ProbVolume:
    return ProbVolume(logits.grid, softmax_array(logits.values), simplex=True)


def argmax_labels(prob: ProbVolume) -> LabelVolume:
    return LabelVolume(prob.grid, np.argmax(prob.values, axis=0), prob.num_classes)
