"""Overlap and surface-distance metrics between binary masks.

Surfaces are the boundary voxels of each mask (see
:func:`surfkit.dtm.boundary_set`), located at voxel centres in mm. HD95 and
ASD pool the directed distances of both directions into one multiset.

Distances go through the exact EDT by default (``method="edt"``): the distance
from a voxel to the nearest opposing surface voxel is read straight off the
EDT of that surface. ``method="brute"`` computes all pairwise distances and
serves as the reference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from surfkit.dtm import _as_mask3, _spacing_for, boundary_set, edt
from surfkit.errors import EmptySurface

PERCENTILE = 95.0
PAIR_CHUNK = 2048


@dataclass(frozen=True)
class MetricReport:
    dice: float
    hd: float | None
    hd95: float | None
    asd: float | None
    undefined_reason: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def surface_points(mask, spacing=None) -> np.ndarray:
    """Physical centres (mm) of the boundary voxels, shape ``(M, 3)``."""
    mask = _as_mask3(mask)
    spacing = _spacing_for(3, spacing)
    idx = np.argwhere(boundary_set(mask))
    return (idx + 0.5) * spacing


def directed_surface_distances(a, b) -> np.ndarray:
    """For every point of ``a`` the distance to its nearest point in ``b``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3) if np.size(a) else np.empty((0, 3))
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3) if np.size(b) else np.empty((0, 3))
    if len(a) == 0 or len(b) == 0:
        raise EmptySurface("directed surface distance needs two non-empty point sets")
    out = np.empty(len(a))
    for start in range(0, len(a), PAIR_CHUNK):
        block = a[start : start + PAIR_CHUNK]
        sq = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        out[start : start + PAIR_CHUNK] = np.sqrt(sq.min(axis=1))
    return out


def hausdorff_distance(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    return float(
        max(directed_surface_distances(a, b).max(), directed_surface_distances(b, a).max())
    )


def _edt_directed(src_boundary, dst_boundary, spacing) -> np.ndarray:
    return edt(dst_boundary, spacing)[src_boundary]


def surface_distances(pred, truth, spacing=None, method: str = "edt"):
    """Directed distances ``(pred -> truth, truth -> pred)`` between surfaces.

    Both masks must be non-empty. Entries follow the C-order scan of the
    source boundary voxels.
    """
    pred, truth = _as_mask3(pred), _as_mask3(truth)
    spacing = _spacing_for(3, spacing)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    if not pred.any() or not truth.any():
        raise EmptySurface("surface distances need two non-empty masks")
    if method == "edt":
        bp, bt = boundary_set(pred), boundary_set(truth)
        return _edt_directed(bp, bt, spacing), _edt_directed(bt, bp, spacing)
    if method == "brute":
        sp, st = surface_points(pred, spacing), surface_points(truth, spacing)
        return directed_surface_distances(sp, st), directed_surface_distances(st, sp)
    raise ValueError(f"method must be 'edt' or 'brute', got {method!r}")


def _degenerate(pred, truth) -> tuple[bool, str | None]:
    p, t = bool(np.any(pred)), bool(np.any(truth))
    if not p and not t:
        return True, None
    if p != t:
        which = "prediction" if not p else "ground truth"
        return True, f"{which} is empty"
    return False, None


def percentile95(values) -> float:
    """95th percentile with linear interpolation at rank ``0.95 * (m - 1)``."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    rank = PERCENTILE / 100.0 * (len(values) - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, len(values) - 1)
    return float(values[lo] + (rank - lo) * (values[hi] - values[lo]))


def _pooled(pred, truth, spacing, method):
    d_pt, d_tp = surface_distances(pred, truth, spacing, method)
    return np.concatenate([d_pt, d_tp])


def dice_coefficient(pred, truth) -> float:
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    total = int(pred.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & truth).sum()) / total


def hd(pred, truth, spacing=None, method: str = "edt") -> float | None:
    degenerate, reason = _degenerate(pred, truth)
    if degenerate:
        return None if reason else 0.0
    return float(_pooled(pred, truth, spacing, method).max())


def hd95(pred, truth, spacing=None, method: str = "edt") -> float | None:
    degenerate, reason = _degenerate(pred, truth)
    if degenerate:
        return None if reason else 0.0
    return percentile95(_pooled(pred, truth, spacing, method))


def asd(pred, truth, spacing=None, method: str = "edt") -> float | None:
    degenerate, reason = _degenerate(pred, truth)
    if degenerate:
        return None if reason else 0.0
    return float(_pooled(pred, truth, spacing, method).mean())


def evaluate(pred, truth, spacing=None, method: str = "edt") -> MetricReport:
    """All metrics for one pair of masks, sharing a single distance computation."""
    pred, truth = _as_mask3(pred), _as_mask3(truth)
    dice = dice_coefficient(pred, truth)
    degenerate, reason = _degenerate(pred, truth)
    if degenerate:
        if reason:
            return MetricReport(dice, None, None, None, reason)
        return MetricReport(dice, 0.0, 0.0, 0.0)
    pooled = _pooled(pred, truth, spacing, method)
    return MetricReport(dice, float(pooled.max()), percentile95(pooled), float(pooled.mean()))


def evaluate_labels(pred_labels, truth_labels, spacing=None, classes=None, method="edt"):
    """Per-class :class:`MetricReport` for two label arrays, keyed by class index.

    ``classes`` defaults to every foreground class present in either volume's
    range (1 .. max label).
    """
    pred_labels, truth_labels = np.asarray(pred_labels), np.asarray(truth_labels)
    if classes is None:
        top = int(max(pred_labels.max(initial=0), truth_labels.max(initial=0)))
        classes = range(1, top + 1)
    return {
        int(k): evaluate(pred_labels == k, truth_labels == k, spacing, method)
        for k in classes
    }
