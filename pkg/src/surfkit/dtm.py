"""Exact Euclidean distance transforms and signed distance maps.

The EDT is separable: one pass per axis computes the lower envelope of the
parabolas ``(x - x_p)**2 + f(p)`` along every scanline (Felzenszwalb and
Huttenlocher). Positions are in mm, so anisotropic spacing is exact.

Signed maps follow the convention: positive on background, zero on the
boundary voxels of the mask, negative on the interior.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numba
import numpy as np

from surfkit.errors import EmptySources, ShapeError

BRUTE_CHUNK = 4096


@dataclass(frozen=True)
class SignedDtm:
    values: np.ndarray
    source_mask_hash: str


def mask_digest(mask: np.ndarray) -> str:
    mask = np.ascontiguousarray(mask, dtype=bool)
    h = hashlib.sha256(repr(mask.shape).encode())
    h.update(mask.tobytes())
    return h.hexdigest()


def _as_mask3(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ShapeError(f"masks are 3D (z, y, x), got shape {mask.shape}")
    return mask


def _spacing_for(ndim: int, spacing) -> np.ndarray:
    if spacing is None:
        return np.ones(ndim)
    spacing = np.asarray(spacing, dtype=np.float64).reshape(-1)
    if spacing.size != ndim:
        raise ShapeError(f"spacing has {spacing.size} entries for a {ndim}D array")
    if not np.all(np.isfinite(spacing) & (spacing > 0)):
        raise ShapeError(f"spacing must be finite and positive, got {spacing}")
    return spacing


def boundary_set(mask) -> np.ndarray:
    """Foreground voxels with at least one background face-neighbour.

    Voxels outside the grid count as background, so a mask that touches the
    grid edge has its edge voxels on the boundary.
    """
    mask = _as_mask3(mask)
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    core = (slice(1, -1),) * 3
    interior = mask.copy()
    for axis in range(3):
        for shift in (-1, 1):
            sl = list(core)
            sl[axis] = slice(1 + shift, padded.shape[axis] - 1 + shift)
            interior &= padded[tuple(sl)]
    return mask & ~interior


@numba.njit(cache=True)
def _envelope_lines(f, step, out):
    # f, out: (lines, n) squared distances; inf marks "no source yet"
    lines, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for line in range(lines):
        k = -1
        for q in range(n):
            fq = f[line, q]
            if fq == np.inf:
                continue
            xq = q * step
            s = -np.inf
            while k >= 0:
                p = v[k]
                xp = p * step
                s = ((fq + xq * xq) - (f[line, p] + xp * xp)) / (2.0 * (xq - xp))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s if k > 0 else -np.inf
            z[k + 1] = np.inf
        if k < 0:
            for q in range(n):
                out[line, q] = np.inf
            continue
        j = 0
        for q in range(n):
            x = q * step
            while z[j + 1] < x:
                j += 1
            d = x - v[j] * step
            out[line, q] = d * d + f[line, v[j]]


def squared_edt(sources, spacing=None, axis_order=None) -> np.ndarray:
    """Squared distance (mm^2) from every voxel to the nearest source voxel."""
    sources = np.asarray(sources, dtype=bool)
    spacing = _spacing_for(sources.ndim, spacing)
    if not sources.any():
        raise EmptySources("distance transform needs at least one source voxel")
    order = range(sources.ndim) if axis_order is None else axis_order
    if sorted(order) != list(range(sources.ndim)):
        raise ValueError(f"axis_order must permute the axes, got {axis_order}")
    dist = np.where(sources, 0.0, np.inf)
    for axis in order:
        moved = np.moveaxis(dist, axis, -1)
        lines = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
        out = np.empty_like(lines)
        _envelope_lines(lines, float(spacing[axis]), out)
        dist = np.moveaxis(out.reshape(moved.shape), -1, axis)
    return np.ascontiguousarray(dist)


def edt(sources, spacing=None, axis_order=None) -> np.ndarray:
    """Exact Euclidean distance (mm, between voxel centres) to the nearest source."""
    return np.sqrt(squared_edt(sources, spacing, axis_order))


def signed_dtm(mask, spacing=None, axis_order=None) -> SignedDtm:
    mask = _as_mask3(mask)
    spacing = _spacing_for(3, spacing)
    boundary = boundary_set(mask)
    if not boundary.any():
        # only reachable for an empty mask
        return SignedDtm(np.zeros(mask.shape), mask_digest(mask))
    dist = edt(boundary, spacing, axis_order)
    sign = np.where(mask, -1.0, 1.0)
    values = np.where(boundary, 0.0, sign * dist)
    return SignedDtm(values, mask_digest(mask))


def _voxel_coords(shape, spacing) -> np.ndarray:
    idx = np.indices(shape).reshape(len(shape), -1).T
    return idx * spacing


def brute_force_dtm(mask, spacing=None) -> SignedDtm:
    """Reference signed DTM by exhaustive search over boundary voxels."""
    mask = _as_mask3(mask)
    spacing = _spacing_for(3, spacing)
    boundary = boundary_set(mask)
    if not boundary.any():
        return SignedDtm(np.zeros(mask.shape), mask_digest(mask))
    coords = _voxel_coords(mask.shape, spacing)
    bcoords = coords[boundary.reshape(-1)]
    best = np.empty(len(coords))
    for start in range(0, len(coords), BRUTE_CHUNK):
        block = coords[start : start + BRUTE_CHUNK]
        diff = block[:, None, :] - bcoords[None, :, :]
        best[start : start + BRUTE_CHUNK] = np.sqrt((diff**2).sum(axis=-1).min(axis=1))
    dist = best.reshape(mask.shape)
    values = np.where(boundary, 0.0, np.where(mask, -dist, dist))
    return SignedDtm(values, mask_digest(mask))


def class_dtms(onehot: np.ndarray, spacing=None, brute_force: bool = False) -> np.ndarray:
    """Signed DTM of every class channel of a ``(C, z, y, x)`` one-hot array."""
    fn = brute_force_dtm if brute_force else signed_dtm
    return np.stack([fn(channel > 0.5, spacing).values for channel in np.asarray(onehot)])
