"""Desk-scale training harness.

A coarse per-class logit field is upsampled trilinearly to the label grid,
pushed through a softmax and optimized with Adam against one of the losses.
The coarse grid is the capacity bottleneck that stands in for a network, so
the loss is the only thing that changes between runs.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from surfkit.dtm import class_dtms
from surfkit.errors import NonFiniteGradient, ShapeError
from surfkit.losses import (
    BOUNDARY_KINDS,
    REGION_KINDS,
    LossInputs,
    dataset_class_weights,
    evaluate_loss,
    loss_gradient,
)
from surfkit.metrics import evaluate_labels
from surfkit.schedules import Schedule
from surfkit.volume import Grid3, LabelVolume, one_hot_array, softmax_array

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    label: int


@dataclass(frozen=True)
class SceneSpec:
    grid: Grid3
    spheres: tuple[Sphere, ...] = ()
    num_classes: int = 2

    def __post_init__(self):
        for s in self.spheres:
            if s.radius <= 0:
                raise ValueError(f"sphere radius must be positive, got {s.radius}")
            if not 1 <= s.label <= self.num_classes - 1:
                raise ValueError(
                    f"sphere label {s.label} outside foreground range [1, {self.num_classes - 1}]"
                )

    def to_dict(self) -> dict:
        return {
            "shape": list(self.grid.shape),
            "spacing": list(self.grid.spacing),
            "num_classes": self.num_classes,
            "spheres": [
                {"center": list(s.center), "radius": s.radius, "label": s.label}
                for s in self.spheres
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        grid = Grid3(tuple(d["shape"]), tuple(d.get("spacing", (1.0, 1.0, 1.0))))
        spheres = tuple(
            Sphere(tuple(float(c) for c in s["center"]), float(s["radius"]), int(s["label"]))
            for s in d.get("spheres", ())
        )
        return cls(grid, spheres, int(d.get("num_classes", 2)))


def reference_scene() -> SceneSpec:
    """32^3 grid at 1 mm: a radius-8 sphere at the centre and a radius-2 one near a corner."""
    return SceneSpec(
        Grid3((32, 32, 32), (1.0, 1.0, 1.0)),
        (Sphere((16.0, 16.0, 16.0), 8.0, 1), Sphere((5.5, 5.5, 5.5), 2.0, 1)),
        num_classes=2,
    )


def make_scene(spec: SceneSpec) -> LabelVolume:
    """Label voxels whose centre lies inside a sphere; later spheres win on overlap."""
    grid = spec.grid
    axes = [(np.arange(n) + 0.5) * s for n, s in zip(grid.shape, grid.spacing)]
    zz, yy, xx = np.meshgrid(*axes, indexing="ij")
    labels = np.zeros(grid.shape, dtype=np.int64)
    for s in spec.spheres:
        cz, cy, cx = s.center
        inside = (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= s.radius**2
        if not inside.any():
            warnings.warn(f"sphere {s} contains no voxel centre", stacklevel=2)
        labels[inside] = s.label
    return LabelVolume(grid, labels, spec.num_classes)


def interpolation_matrix(n_coarse: int, factor: int) -> np.ndarray:
    """1D linear interpolation ``(n_coarse * factor, n_coarse)``, half-pixel aligned.

    Sample positions follow the align-corners-false convention and are
    clamped to the first/last coarse sample at the edges.
    """
    n_fine = n_coarse * factor
    src = (np.arange(n_fine) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_coarse - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_coarse - 1)
    frac = src - lo
    mat = np.zeros((n_fine, n_coarse))
    rows = np.arange(n_fine)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def _factor(coarse_shape, fine_shape) -> list[int]:
    if len(coarse_shape) != 3 or len(fine_shape) != 3:
        raise ShapeError("upsampling works on 3D grids")
    factors = []
    for c, f in zip(coarse_shape, fine_shape):
        if c < 1 or f % c:
            raise ShapeError(f"fine shape {tuple(fine_shape)} is not a multiple of {tuple(coarse_shape)}")
        factors.append(f // c)
    return factors


def _apply(mats, x):
    mz, my, mx = mats
    x = np.einsum("ij,cjkl->cikl", mz, x)
    x = np.einsum("ij,ckjl->ckil", my, x)
    return np.einsum("ij,cklj->ckli", mx, x)


def upsample_trilinear(coarse, fine_shape) -> np.ndarray:
    """Trilinear upsampling of a ``(C, z, y, x)`` stack onto ``fine_shape``."""
    coarse = np.asarray(coarse, dtype=np.float64)
    factors = _factor(coarse.shape[1:], fine_shape)
    mats = [interpolation_matrix(n, f) for n, f in zip(coarse.shape[1:], factors)]
    return _apply(mats, coarse)


def upsample_adjoint(fine, coarse_shape) -> np.ndarray:
    """Transpose of :func:`upsample_trilinear` (maps fine gradients to coarse)."""
    fine = np.asarray(fine, dtype=np.float64)
    factors = _factor(coarse_shape, fine.shape[1:])
    mats = [interpolation_matrix(n, f).T for n, f in zip(coarse_shape, factors)]
    return _apply(mats, fine)


class Adam:
    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    scene: SceneSpec = field(default_factory=reference_scene)
    coarse_factor: int = 4
    region_kind: str = "dice-ce"
    boundary_kind: str | None = None
    schedule: str = "linear"
    step_length: int = 1
    epochs: int = 300
    lr: float = 3e-4
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_p: float = 1.0
    init_std: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.coarse_factor < 1 or any(n % self.coarse_factor for n in self.scene.grid.shape):
            raise ShapeError(
                f"coarse_factor {self.coarse_factor} must divide grid shape {self.scene.grid.shape}"
            )
        if self.region_kind not in REGION_KINDS:
            raise ValueError(f"region_kind must be one of {REGION_KINDS}")
        if self.boundary_kind is not None and self.boundary_kind not in BOUNDARY_KINDS:
            raise ValueError(f"boundary_kind must be one of {BOUNDARY_KINDS} or null")
        self.alpha_schedule()

    def alpha_schedule(self) -> Schedule | None:
        """Schedule over ``epochs - 1`` so the last epoch gets alpha = 0."""
        if self.boundary_kind is None or self.epochs == 1:
            return None
        return Schedule(self.schedule, self.epochs - 1, self.step_length)

    @property
    def label(self) -> str:
        if self.boundary_kind is None:
            return self.region_kind
        return f"{self.region_kind}+{self.boundary_kind}/{self.schedule}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "scene" in d:
            d["scene"] = SceneSpec.from_dict(d["scene"])
        return cls(**d)


@dataclass
class TrainReport:
    config: dict
    epochs: list[dict]
    final: dict
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        # wall time is left out so identical runs serialize identically
        return {"config": self.config, "epochs": self.epochs, "final": self.final}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


class Problem:
    """Everything about a training run that stays fixed across epochs."""

    def __init__(self, config: TrainConfig):
        self.config = config
        scene = make_scene(config.scene)
        self.labels = scene.labels
        self.grid = scene.grid
        c = config.scene.num_classes
        self.truth = one_hot_array(self.labels, c)
        self.dtm = None
        self.weights = None
        if config.boundary_kind is not None:
            self.dtm = class_dtms(self.truth, self.grid.spacing)
            counts = self.truth.reshape(c, -1).sum(axis=1)
            self.weights = dataset_class_weights(counts, config.weight_p)
        f = config.coarse_factor
        self.coarse_shape = tuple(n // f for n in self.grid.shape)
        self.mats = [interpolation_matrix(n, f) for n in self.coarse_shape]
        self.mats_t = [m.T for m in self.mats]

    def initial_logits(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        shape = (self.config.scene.num_classes,) + self.coarse_shape
        return rng.normal(0.0, self.config.init_std, size=shape)

    def probabilities(self, coarse: np.ndarray) -> np.ndarray:
        return softmax_array(_apply(self.mats, coarse))

    def objective(self, coarse: np.ndarray, alpha: float) -> tuple[float, np.ndarray, np.ndarray]:
        """Loss, gradient w.r.t. the coarse logits, and the fine probabilities."""
        cfg = self.config
        prob = self.probabilities(coarse)
        inputs = LossInputs(prob, self.truth, self.dtm, self.weights)
        if cfg.boundary_kind is None:
            kw = {"kind": cfg.region_kind}
        else:
            kw = {
                "kind": "composite",
                "alpha": alpha,
                "region_kind": cfg.region_kind,
                "boundary_kind": cfg.boundary_kind,
            }
        value = evaluate_loss(inputs=inputs, **kw).value
        g = loss_gradient(inputs=inputs, **kw)
        # softmax Jacobian-vector product
        g_logits = prob * (g - (prob * g).sum(axis=0, keepdims=True))
        return value, _apply(self.mats_t, g_logits), prob


def _metrics_dict(reports) -> dict:
    return {str(k): r.to_dict() for k, r in reports.items()}


def optimize(config: TrainConfig) -> TrainReport:
    start = time.perf_counter()
    problem = Problem(config)
    schedule = config.alpha_schedule()
    classes = range(1, config.scene.num_classes)
    spacing = problem.grid.spacing
    logits = problem.initial_logits(config.seed)
    adam = Adam(config.lr, config.beta1, config.beta2, config.eps)
    history = []
    for epoch in range(config.epochs):
        alpha = 1.0 if schedule is None else schedule(epoch)
        value, grad, prob = problem.objective(logits, alpha)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NonFiniteGradient("non-finite loss or gradient", epoch)
        pred = np.argmax(prob, axis=0)
        reports = evaluate_labels(pred, problem.labels, spacing, classes)
        history.append(
            {"epoch": epoch, "alpha": alpha, "loss": value, "metrics": _metrics_dict(reports)}
        )
        logits = adam.step(logits, grad)
    pred = np.argmax(problem.probabilities(logits), axis=0)
    final = _metrics_dict(evaluate_labels(pred, problem.labels, spacing, classes))
    elapsed = time.perf_counter() - start
    log.info("%s seed=%d finished %d epochs in %.2fs", config.label, config.seed, config.epochs, elapsed)
    return TrainReport(config.to_dict(), history, final, elapsed)


def _summary(final: dict) -> dict:
    """Average each metric over foreground classes; None if any class is undefined."""
    out = {}
    for key in ("dice", "hd95", "asd"):
        vals = [r[key] for r in final.values()]
        out[key] = None if not vals or any(v is None for v in vals) else float(np.mean(vals))
    return out


def _median(values, missing=np.inf) -> float | None:
    # an undefined distance (empty prediction) ranks as the worst outcome
    vals = [missing if v is None else v for v in values]
    if not vals:
        return None
    med = float(np.median(vals))
    return None if not np.isfinite(med) else med


def run_experiment(
    configs: Sequence[TrainConfig],
    seeds: Sequence[int],
    names: Sequence[str] | None = None,
) -> dict:
    """Train every config with every seed and tabulate the final metrics.

    A failing cell is recorded with its error message and the sweep goes on.
    """
    if names is None:
        names = [c.label for c in configs]
    names = list(names)
    if len(names) != len(configs):
        raise ValueError("need one name per config")
    seen: dict[str, int] = {}
    for i, n in enumerate(names):
        if n in seen:
            names[i] = f"{n}#{i}"
        seen[n] = i
    scenes = {json.dumps(c.scene.to_dict(), sort_keys=True) for c in configs}
    if len(scenes) > 1:
        raise ValueError("all configs in an experiment must share the scene")

    rows = []
    for name, cfg in zip(names, configs):
        for seed in seeds:
            row = {"name": name, "seed": int(seed)}
            try:
                report = optimize(replace(cfg, seed=int(seed)))
            except Exception as exc:  # keep the sweep going
                log.warning("cell %s seed=%s failed: %s", name, seed, exc)
                row.update(dice=None, hd95=None, asd=None, error=f"{type(exc).__name__}: {exc}")
            else:
                row.update(_summary(report.final), error=None)
            rows.append(row)

    summary = {}
    for name in names:
        cell = [r for r in rows if r["name"] == name]
        summary[name] = {
            "median_dice": _median([r["dice"] for r in cell], missing=0.0),
            "median_hd95": _median([r["hd95"] for r in cell]),
            "median_asd": _median([r["asd"] for r in cell]),
        }

    gsl = [n for n, c in zip(names, configs) if c.boundary_kind == "gsl"]
    base = [n for n, c in zip(names, configs) if c.boundary_kind is None]
    flag = None
    if gsl and base:
        g, b = summary[gsl[0]]["median_hd95"], summary[base[0]]["median_hd95"]
        if g is not None and b is not None:
            flag = g <= b
    return {
        "seeds": [int(s) for s in seeds],
        "rows": rows,
        "summary": summary,
        "gsl_hd95_le_baseline": flag,
    }
