"""Sigmoid volume transform, its implicit-differentiation Jacobian, and the
cone density filter used by the modified-filtering baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logit

from .errors import InvalidVolume


@dataclass(frozen=True)
class DensityTransform:
    """Result of ``y = sigmoid(x + b)`` with ``b`` chosen so ``sum(y) = V0``.

    ``sdot`` holds the sigmoid derivatives at ``x + b``; it defines the
    Jacobian ``D_X = Diag(sdot) - sdot sdot^T / |sdot|_1``.
    """

    x: np.ndarray
    bias: float
    y: np.ndarray
    sdot: np.ndarray
    V0: float

    @property
    def volume_error(self) -> float:
        return abs(float(self.y.sum()) - self.V0)


DensityField = DensityTransform


def find_bias(x, V0: float, newton_steps: int = 5) -> float:
    """Unique ``b`` with ``sum(sigmoid(x + b)) == V0``.

    Bisection on a bracket guaranteed by sigmoid saturation, then a few
    safeguarded Newton steps.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if not 0.0 < V0 < n:
        raise InvalidVolume(f"V0 must satisfy 0 < V0 < N={n}, got {V0}")
    centre = logit(V0 / n)
    spread = np.abs(x).max() + 40.0
    lo, hi = centre - spread, centre + spread

    def excess(b):
        return expit(x + b).sum() - V0

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * max(1.0, abs(mid)):
            break
    b = 0.5 * (lo + hi)
    for _ in range(newton_steps):
        s = expit(x + b)
        slope = np.sum(s * (1 - s))
        if slope <= 0:
            break
        cand = b - (s.sum() - V0) / slope
        if not lo <= cand <= hi:
            break
        b = cand
    return float(b)


def sigma_transform(x, V0: float) -> DensityTransform:
    x = np.asarray(x, dtype=float)
    b = find_bias(x, V0)
    y = expit(x + b)
    return DensityTransform(x=x, bias=b, y=y, sdot=y * (1 - y), V0=float(V0))


def apply_DX(t: DensityTransform, g) -> np.ndarray:
    """Matrix-free ``D_X g``; symmetric PSD, kills constants."""
    a = t.sdot
    return a * (g - (a @ g) / a.sum())


def grad_x_from_grad_y(t: DensityTransform, grad_y) -> np.ndarray:
    """Chain rule through the volume-preserving sigmoid."""
    return apply_DX(t, np.asarray(grad_y, dtype=float))


def dense_DX(t: DensityTransform) -> np.ndarray:
    a = t.sdot
    return np.diag(a) - np.outer(a, a) / a.sum()


@dataclass(frozen=True)
class ConeFilter:
    """Normalised linear-hat convolution on an ``nx`` x ``ny`` element grid.

    Stencil weights are ``max(0, rmin - dist)``; near the boundary the stencil
    is truncated and each row renormalised, so constants are preserved.
    """

    nx: int
    ny: int
    rmin: float
    matrix: sp.csr_matrix

    @classmethod
    def build(cls, nx: int, ny: int, rmin: float) -> "ConeFilter":
        if rmin < 1.0:
            raise ValueError("rmin must be >= 1")
        reach = int(np.ceil(rmin)) - 1
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        rows, cols, vals = [], [], []
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                w = rmin - np.hypot(dx, dy)
                if w <= 0:
                    continue
                jx, jy = ix + dx, iy + dy
                ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
                rows.append((ix * ny + iy)[ok])
                cols.append((jx * ny + jy)[ok])
                vals.append(np.full(ok.sum(), w))
        n = nx * ny
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
        T = sp.diags(1.0 / np.asarray(H.sum(axis=1)).ravel()) @ H
        return cls(nx, ny, float(rmin), T.tocsr())

    @property
    def weights(self) -> sp.csr_matrix:
        return self.matrix


def cone_filter_apply(f: ConeFilter, xbar) -> np.ndarray:
    return f.matrix @ np.asarray(xbar, dtype=float)


def cone_filter_transpose_apply(f: ConeFilter, g) -> np.ndarray:
    return f.matrix.T @ np.asarray(g, dtype=float)
