"""Coordinate embeddings feeding the density network.

Grid coordinates are element centres ``(ix + 0.5, iy + 0.5)`` in element
units, listed in flat element order ``e = ix * ny + iy``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def element_centers(nx: int, ny: int, factor: int = 1) -> np.ndarray:
    """(nx*ny*factor**2, 2) centres of a grid refined ``factor`` times,
    expressed in the coarse grid's coordinate frame."""
    if nx < 1 or ny < 1 or factor < 1:
        raise ValueError("grid must be nonempty")
    ix, iy = np.meshgrid(np.arange(nx * factor), np.arange(ny * factor), indexing="ij")
    return np.column_stack([ix.ravel() + 0.5, iy.ravel() + 0.5]) / factor


class IdentityEmbedding:
    """Raw coordinates; the translation-variant control."""

    kind = "none"
    dim = 2

    def __call__(self, p) -> np.ndarray:
        return np.atleast_2d(np.asarray(p, dtype=float))


@dataclass(frozen=True)
class TorusEmbedding:
    r: float = np.sqrt(2.0)
    delta: float = np.pi / 40

    kind = "torus"
    dim = 4

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("torus radius must be positive")
        if not 0 < self.delta <= np.pi:
            raise ValueError("delta must lie in (0, pi]")

    @classmethod
    def for_grid(cls, nx: int, ny: int, r: float = np.sqrt(2.0)) -> "TorusEmbedding":
        """Default angle pi / (2 max(nx, ny)): the grid covers half the torus."""
        return cls(r=r, delta=np.pi / (2 * max(nx, ny)))

    def __call__(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        a, b = self.delta * p[:, 0], self.delta * p[:, 1]
        return self.r * np.column_stack([np.cos(a), np.sin(a), np.cos(b), np.sin(b)])


@dataclass(frozen=True, eq=False)
class GaussianEmbedding:
    """Random Fourier features for the kernel ``exp(-d^2 / (2 ell^2))``.

    ``phi(p)_i = sqrt(2) sin(w_i . p + pi/4 + b_i)`` with ``w_i ~ N(0, I / ell^2)``.
    Phases are zero by default; ``phase="uniform"`` draws them on [0, 2 pi].
    """

    n0: int = 1000
    ell: float = 4.0
    seed: int = 0
    phase: str = "zero"
    w: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)

    kind = "gaussian"

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.ell <= 0:
            raise ValueError("ell must be positive")
        if self.phase not in ("zero", "uniform"):
            raise ValueError("phase must be 'zero' or 'uniform'")
        rng = np.random.default_rng(self.seed)
        w = rng.normal(0.0, 1.0 / self.ell, size=(self.n0, 2))
        if self.phase == "uniform":
            b = rng.uniform(0.0, 2 * np.pi, self.n0)
        else:
            b = np.zeros(self.n0)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.n0

    def __call__(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.sqrt(2.0) * np.sin(p @ self.w.T + np.pi / 4 + self.b)


def torus_embed(p, r: float = np.sqrt(2.0), delta: float = np.pi / 40) -> np.ndarray:
    return TorusEmbedding(r, delta)(p)[0]


def gaussian_embed(e: GaussianEmbedding, p) -> np.ndarray:
    return e(p)[0]


def embed_grid(embedding, nx: int, ny: int, factor: int = 1) -> np.ndarray:
    return embedding(element_centers(nx, ny, factor))


def make_embedding(kind: str, nx: int, ny: int, **kw):
    """Build an embedding by name with grid-dependent defaults."""
    if kind == "none":
        return IdentityEmbedding()
    if kind == "torus":
        r = kw.get("r", np.sqrt(2.0))
        delta = kw.get("delta")
        return TorusEmbedding(r, delta) if delta is not None else TorusEmbedding.for_grid(nx, ny, r)
    if kind == "gaussian":
        return GaussianEmbedding(
            n0=kw.get("n0", 1000), ell=kw.get("ell", 4.0),
            seed=kw.get("seed", 0), phase=kw.get("phase", "zero"),
        )
    raise ValueError(f"unknown embedding {kind!r}")
