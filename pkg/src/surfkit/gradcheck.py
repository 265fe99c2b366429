"""Finite-difference verification of the analytic loss gradients."""

from __future__ import annotations

import numpy as np

from surfkit.dtm import class_dtms
from surfkit.losses import LossInputs, dataset_class_weights, evaluate_loss, loss_gradient
from surfkit.volume import one_hot_array, softmax_array

RTOL = 1e-4
ATOL = 1e-7


def random_instance(rng: np.random.Generator, shape=(4, 4, 4), num_classes=2) -> LossInputs:
    """Random labels with every class present, soft predictions in [0.05, 0.95]."""
    n = int(np.prod(shape))
    flat = rng.integers(0, num_classes, size=n)
    flat[rng.permutation(n)[:num_classes]] = np.arange(num_classes)
    labels = flat.reshape(shape)
    truth = one_hot_array(labels, num_classes)
    pred = 0.05 + 0.9 * softmax_array(rng.normal(size=(num_classes,) + tuple(shape)))
    counts = truth.reshape(num_classes, -1).sum(axis=1)
    return LossInputs(pred, truth, class_dtms(truth), dataset_class_weights(counts))


def central_difference(fn, x: np.ndarray, index, h: float) -> float:
    xp, xm = x.copy(), x.copy()
    xp[index] += h
    xm[index] -= h
    return (fn(xp) - fn(xm)) / (2.0 * h)


def compare(analytic: float, numeric: float) -> tuple[float, bool]:
    """Relative error and pass flag under the ``RTOL`` / ``ATOL`` rule."""
    diff = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric))
    rel = diff / scale if scale > 0 else 0.0
    return rel, diff <= ATOL or diff <= RTOL * scale


def check_instance(kind: str, inputs: LossInputs, rng, probes=64, h=1e-6, **loss_kw) -> dict:
    grad = loss_gradient(kind, inputs, **loss_kw)

    def value(pred):
        return evaluate_loss(
            kind, LossInputs(pred, inputs.truth, inputs.dtm, inputs.weights), **loss_kw
        ).value

    pred = np.asarray(inputs.pred, dtype=np.float64)
    picks = rng.choice(pred.size, size=min(probes, pred.size), replace=False)
    worst_rel, worst_abs, ok = 0.0, 0.0, True
    for flat in picks:
        index = np.unravel_index(flat, pred.shape)
        numeric = central_difference(value, pred, index, h)
        rel, passed = compare(grad[index], numeric)
        if not passed:
            ok = False
        worst_abs = max(worst_abs, float(abs(grad[index] - numeric)))
        if max(abs(grad[index]), abs(numeric)) > ATOL:
            worst_rel = max(worst_rel, float(rel))
    return {"max_rel_error": worst_rel, "max_abs_error": worst_abs, "passed": ok}


def gradient_check(
    kind: str,
    seed: int = 42,
    instances: int = 20,
    probes: int = 64,
    h: float = 1e-6,
    shape=(4, 4, 4),
    num_classes: int = 2,
    **loss_kw,
) -> dict:
    """Check ``kind`` on ``instances`` random problems; returns a JSON-ready report.

    ``max_rel_error`` ignores probes where both gradients are below ``ATOL``.
    """
    rng = np.random.default_rng(seed)
    worst_rel, worst_abs, ok = 0.0, 0.0, True
    for _ in range(instances):
        res = check_instance(kind, random_instance(rng, shape, num_classes), rng, probes, h, **loss_kw)
        worst_rel = max(worst_rel, res["max_rel_error"])
        worst_abs = max(worst_abs, res["max_abs_error"])
        ok = ok and res["passed"]
    report = {"kind": kind, "seed": seed, "instances": instances, "probes": probes, "h": h}
    if kind == "composite":
        report.update(
            alpha=loss_kw.get("alpha", 1.0),
            region_kind=loss_kw.get("region_kind", "dice-ce"),
            boundary_kind=loss_kw.get("boundary_kind", "gsl"),
        )
    report.update(max_rel_error=worst_rel, max_abs_error=worst_abs, passed=ok)
    return report
