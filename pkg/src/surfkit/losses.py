"""Region and boundary segmentation losses with analytic gradients.

All losses take arrays shaped ``(C, *spatial)``: the prediction ``pred``
(values in [0, 1]), the one-hot ground truth ``truth`` and, for boundary
losses, the ground-truth signed distance maps ``dtm``. Background is class 0
and is included in every sum. Gradients are with respect to ``pred``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from surfkit.dtm import class_dtms
from surfkit.errors import (
    DegenerateGroundTruth,
    EmptyClassInDataset,
    InvalidAlpha,
    NonFiniteGradient,
    ShapeError,
)
from surfkit.volume import one_hot_array

DICE_SMOOTH = 1e-6
CE_CLAMP = 1e-7
GSL_EPS = 1e-12

REGION_KINDS = ("dice", "dice-ce", "gdl")
BOUNDARY_KINDS = ("hl", "bl", "gsl")
LOSS_KINDS = REGION_KINDS + BOUNDARY_KINDS + ("composite",)


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    p: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class LossValue:
    value: float
    per_class_terms: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"value": self.value, "per_class_terms": list(self.per_class_terms)}


@dataclass(frozen=True)
class LossInputs:
    pred: np.ndarray
    truth: np.ndarray
    dtm: np.ndarray | None = None
    weights: ClassWeights | np.ndarray | None = None

    @classmethod
    def from_labels(cls, pred, labels, spacing=None, weights=None) -> "LossInputs":
        """Build inputs from an integer label array, computing one-hot and DTMs."""
        pred = np.asarray(pred, dtype=np.float64)
        truth = one_hot_array(labels, pred.shape[0])
        return cls(pred, truth, class_dtms(truth, spacing), weights)


def dataset_class_weights(voxel_counts, p: float = 1.0) -> ClassWeights:
    """Inverse-frequency class weights ``(1/N_k)**p``, normalized to sum to one."""
    counts = np.asarray(voxel_counts, dtype=np.float64).reshape(-1)
    if counts.size == 0:
        raise ValueError("need at least one class count")
    if p < 1:
        raise ValueError(f"exponent p must be >= 1, got {p}")
    if np.any(counts <= 0):
        empty = [int(k) for k in np.flatnonzero(counts <= 0)]
        raise EmptyClassInDataset(f"classes {empty} have no voxels in the dataset")
    inv = (1.0 / counts) ** p
    return ClassWeights(inv / inv.sum(), float(p))


def _check(pred, truth=None, dtm=None):
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim < 2:
        raise ShapeError(f"expected (C, *spatial) arrays, got shape {pred.shape}")
    out = [pred]
    for name, arr in (("truth", truth), ("dtm", dtm)):
        if arr is None:
            continue
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != pred.shape:
            raise ShapeError(f"{name} shape {arr.shape} != pred shape {pred.shape}")
        out.append(arr)
    return out


def _flat(*arrays):
    return [a.reshape(a.shape[0], -1) for a in arrays]


def _weights_for(weights, num_classes: int) -> np.ndarray:
    if weights is None:
        return np.full(num_classes, 1.0 / num_classes)
    w = weights.weights if isinstance(weights, ClassWeights) else np.asarray(weights, float)
    if w.shape != (num_classes,):
        raise ShapeError(f"expected {num_classes} class weights, got shape {w.shape}")
    return w


def _value(terms: np.ndarray, value: float) -> LossValue:
    return LossValue(float(value), tuple(float(t) for t in terms))


# region losses


def _dice_parts(pred, truth):
    p, t = _flat(pred, truth)
    inter = (t * p).sum(axis=1)
    denom = (t * t).sum(axis=1) + (p * p).sum(axis=1)
    return inter, denom


def dice_loss(pred, truth) -> LossValue:
    pred, truth = _check(pred, truth)
    inter, denom = _dice_parts(pred, truth)
    c = pred.shape[0]
    coeff = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return _value((1.0 - coeff) / c, 1.0 - coeff.sum() / c)


def _dice_grad(pred, truth):
    inter, denom = _dice_parts(pred, truth)
    c = pred.shape[0]
    shape = (c,) + (1,) * (pred.ndim - 1)
    den = (denom + DICE_SMOOTH).reshape(shape)
    num = (2.0 * inter + DICE_SMOOTH).reshape(shape)
    return -(2.0 * truth / den - num * 2.0 * pred / den**2) / c


def _ce_terms(pred, truth):
    p, t = _flat(pred, truth)
    logp = np.log(np.clip(p, CE_CLAMP, 1.0 - CE_CLAMP))
    return -(t * logp).sum(axis=1) / p.size


def _ce_grad(pred, truth):
    inside = (pred > CE_CLAMP) & (pred < 1.0 - CE_CLAMP)
    safe = np.where(inside, pred, 1.0)
    return np.where(inside, -truth / safe, 0.0) / pred.size


def dice_ce_loss(pred, truth) -> LossValue:
    pred, truth = _check(pred, truth)
    dice = dice_loss(pred, truth)
    ce = _ce_terms(pred, truth)
    terms = np.asarray(dice.per_class_terms) + ce
    return _value(terms, dice.value + ce.sum())


def _gdl_parts(pred, truth):
    p, t = _flat(pred, truth)
    size = t.sum(axis=1)
    if not np.any(size > 0):
        raise DegenerateGroundTruth("generalized Dice needs at least one non-empty class")
    present = size > 0
    w = np.zeros_like(size)
    w[present] = 1.0 / size[present] ** 2
    inter = (t * p).sum(axis=1)
    denom = (t * t + p * p).sum(axis=1)
    return w, inter, denom


def generalized_dice_loss(pred, truth) -> LossValue:
    """Generalized Dice with per-example weights ``1 / (class size)**2``.

    Classes absent from ``truth`` get weight zero instead of an infinite one.
    """
    pred, truth = _check(pred, truth)
    w, inter, denom = _gdl_parts(pred, truth)
    total = (w * denom).sum()
    terms = w * (denom - 2.0 * inter) / total
    return _value(terms, 1.0 - 2.0 * (w * inter).sum() / total)


def _gdl_grad(pred, truth):
    w, inter, denom = _gdl_parts(pred, truth)
    a = (w * inter).sum()
    b = (w * denom).sum()
    wk = w.reshape((-1,) + (1,) * (pred.ndim - 1))
    return -2.0 * (wk * truth / b - a * wk * 2.0 * pred / b**2)


# boundary losses


def hausdorff_loss(pred, truth, dtm) -> LossValue:
    """One-sided Hausdorff loss: mean of squared residual times squared DTM."""
    pred, truth, dtm = _check(pred, truth, dtm)
    p, t, d = _flat(pred, truth, dtm)
    terms = ((t - p) ** 2 * d**2).sum(axis=1) / p.size
    return _value(terms, terms.sum())


def _hl_grad(pred, truth, dtm):
    return -2.0 * (truth - pred) * dtm**2 / pred.size


def boundary_loss(pred, dtm) -> LossValue:
    pred, dtm = _check(pred, dtm)
    p, d = _flat(pred, dtm)
    terms = (d * p).sum(axis=1) / p.size
    return _value(terms, terms.sum())


def _gsl_parts(pred, truth, dtm, weights):
    w = _weights_for(weights, pred.shape[0])
    p, t, d = _flat(pred, truth, dtm)
    num = ((d * (1.0 - (t + p))) ** 2).sum(axis=1)
    den = (d * d).sum(axis=1)
    total = (w * den).sum()
    if total == 0.0:
        raise DegenerateGroundTruth("surface loss is undefined: every weighted DTM is zero")
    return w, num, den, total + GSL_EPS


def generalized_surface_loss(pred, truth, dtm, weights=None) -> LossValue:
    """Generalized surface loss, bounded in [0, 1] for predictions in [0, 1].

    ``weights`` are dataset-level class weights (see
    :func:`dataset_class_weights`); ``None`` means uniform ``1/C``.
    """
    pred, truth, dtm = _check(pred, truth, dtm)
    w, num, den, total = _gsl_parts(pred, truth, dtm, weights)
    # 1 - sum(w*num)/total, rearranged so both anchors (pred == truth and
    # pred == 1 - truth) come out exact instead of through cancellation
    gap = w * (den - num)
    return _value(gap / total, (gap.sum() + GSL_EPS) / total)


def _gsl_grad(pred, truth, dtm, weights):
    w, _, _, total = _gsl_parts(pred, truth, dtm, weights)
    wk = w.reshape((-1,) + (1,) * (pred.ndim - 1))
    return 2.0 * wk * dtm**2 * (1.0 - (truth + pred)) / total


# dispatch


def _need_dtm(inputs: LossInputs, kind: str):
    if inputs.dtm is None:
        raise ValueError(f"loss {kind!r} needs ground-truth distance maps")
    return inputs.dtm


def _single(kind: str, inputs: LossInputs) -> LossValue:
    if kind == "dice":
        return dice_loss(inputs.pred, inputs.truth)
    if kind == "dice-ce":
        return dice_ce_loss(inputs.pred, inputs.truth)
    if kind == "gdl":
        return generalized_dice_loss(inputs.pred, inputs.truth)
    if kind == "hl":
        return hausdorff_loss(inputs.pred, inputs.truth, _need_dtm(inputs, kind))
    if kind == "bl":
        return boundary_loss(inputs.pred, _need_dtm(inputs, kind))
    if kind == "gsl":
        return generalized_surface_loss(
            inputs.pred, inputs.truth, _need_dtm(inputs, kind), inputs.weights
        )
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _single_grad(kind: str, inputs: LossInputs) -> np.ndarray:
    if kind in REGION_KINDS:
        pred, truth = _check(inputs.pred, inputs.truth)
        if kind == "dice":
            return _dice_grad(pred, truth)
        if kind == "dice-ce":
            return _dice_grad(pred, truth) + _ce_grad(pred, truth)
        return _gdl_grad(pred, truth)
    if kind in BOUNDARY_KINDS:
        if kind == "bl":
            pred, dtm = _check(inputs.pred, _need_dtm(inputs, kind))
            return dtm / pred.size
        pred, truth, dtm = _check(inputs.pred, inputs.truth, _need_dtm(inputs, kind))
        if kind == "hl":
            return _hl_grad(pred, truth, dtm)
        return _gsl_grad(pred, truth, dtm, inputs.weights)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _check_composite(region_kind: str, boundary_kind: str, alpha: float) -> None:
    if region_kind not in REGION_KINDS:
        raise ValueError(f"region kind must be one of {REGION_KINDS}, got {region_kind!r}")
    if boundary_kind not in BOUNDARY_KINDS:
        raise ValueError(
            f"boundary kind must be one of {BOUNDARY_KINDS}, got {boundary_kind!r}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise InvalidAlpha(f"alpha must lie in [0, 1], got {alpha}")


def composite_loss(
    region_kind: str, boundary_kind: str, alpha: float, inputs: LossInputs
) -> LossValue:
    """``alpha * region + (1 - alpha) * boundary``."""
    _check_composite(region_kind, boundary_kind, alpha)
    region = _single(region_kind, inputs)
    boundary = _single(boundary_kind, inputs)
    terms = [
        alpha * r + (1.0 - alpha) * b
        for r, b in zip(region.per_class_terms, boundary.per_class_terms)
    ]
    return LossValue(alpha * region.value + (1.0 - alpha) * boundary.value, tuple(terms))


def evaluate_loss(
    kind: str,
    inputs: LossInputs,
    alpha: float = 1.0,
    region_kind: str = "dice-ce",
    boundary_kind: str = "gsl",
) -> LossValue:
    """Evaluate any loss by name; ``alpha`` and the kinds only matter for composite."""
    if kind == "composite":
        return composite_loss(region_kind, boundary_kind, alpha, inputs)
    return _single(kind, inputs)


def loss_gradient(
    kind: str,
    inputs: LossInputs,
    alpha: float = 1.0,
    region_kind: str = "dice-ce",
    boundary_kind: str = "gsl",
) -> np.ndarray:
    """Analytic gradient of the named loss with respect to ``inputs.pred``."""
    if kind == "composite":
        _check_composite(region_kind, boundary_kind, alpha)
        grad = alpha * _single_grad(region_kind, inputs) + (1.0 - alpha) * _single_grad(
            boundary_kind, inputs
        )
    else:
        grad = _single_grad(kind, inputs)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"gradient of {kind!r} has non-finite entries")
    return grad
