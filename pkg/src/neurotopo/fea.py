"""Plane-stress finite elements for SIMP compliance minimisation.

Grid conventions (fixed so that exported artifacts are stable):

* ``nx`` x ``ny`` unit-square bilinear quads. Element ``(ix, iy)`` has flat
  index ``e = ix * ny + iy``; ``iy = 0`` is the top row.
* Node ``(ix, iy)`` with ``0 <= ix <= nx``, ``0 <= iy <= ny`` has index
  ``n = (ny + 1) * ix + iy`` (column-major node numbering).
* Degrees of freedom are node-major and interleaved: ``2n`` is the horizontal
  displacement, ``2n + 1`` the vertical one. Positive vertical displacement
  points *up*, so a downward load is negative.
* Local element dofs follow the nodes bottom-left, bottom-right, top-right,
  top-left (counter-clockwise).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidDensity, InvalidProblem, SingularSystem

RESIDUAL_TOL = 1e-8
REFINE_STEPS = 3


@dataclass(frozen=True)
class ProblemSpec:
    """Grid, boundary conditions, loads and SIMP constants."""

    nx: int
    ny: int
    fixed_dofs: np.ndarray
    loads: dict
    V0: float
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    penal: float = 3.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise InvalidProblem("grid must have at least one element (nx, ny >= 1)")
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "loads", {int(k): float(v) for k, v in self.loads.items()})
        n = self.n_elem
        if not 0 < self.V0 < n:
            raise InvalidProblem(f"V0 must satisfy 0 < V0 < N={n}, got V0={self.V0}")
        if not self.Emin < self.E0:
            raise InvalidProblem("Emin must be smaller than E0")
        if not -1.0 < self.nu < 0.5:
            raise InvalidProblem("nu must lie in (-1, 0.5)")
        if self.penal < 1.0:
            raise InvalidProblem("penal must be >= 1")
        if fixed.size == 0:
            raise InvalidProblem("fixed_dofs must be nonempty")
        if fixed.min() < 0 or fixed.max() >= self.ndof:
            raise InvalidProblem("fixed_dofs out of range")
        for dof in self.loads:
            if not 0 <= dof < self.ndof:
                raise InvalidProblem(f"load dof {dof} out of range")
            if dof in set(fixed.tolist()):
                raise InvalidProblem(f"load dof {dof} is also a fixed dof")

    @property
    def n_elem(self) -> int:
        return self.nx * self.ny

    @property
    def ndof(self) -> int:
        return 2 * (self.nx + 1) * (self.ny + 1)

    @property
    def volfrac(self) -> float:
        return self.V0 / self.n_elem

    def force(self) -> np.ndarray:
        f = np.zeros(self.ndof)
        for dof, value in self.loads.items():
            f[dof] = value
        return f

    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.ndof), self.fixed_dofs)


@dataclass
class DisplacementField:
    U: np.ndarray
    residual: float = 0.0


@dataclass
class ComplianceResult:
    C: float
    grad_y: np.ndarray
    U: np.ndarray


def node_index(nx: int, ny: int, ix, iy):
    return (ny + 1) * np.asarray(ix) + np.asarray(iy)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def mbb_beam(nx: int = 60, ny: int = 20, volfrac: float = 0.5, **kw) -> ProblemSpec:
    """Half MBB beam: symmetry rollers on the left edge, roller at the
    bottom-right corner, unit downward load at the top-left node."""
    left = node_index(nx, ny, 0, np.arange(ny + 1))
    fixed = np.union1d(2 * left, [2 * node_index(nx, ny, nx, ny) + 1])
    loads = {2 * int(node_index(nx, ny, 0, 0)) + 1: -1.0}
    return ProblemSpec(nx, ny, fixed, loads, volfrac * nx * ny, name="mbb", **kw)


def cantilever(nx: int = 60, ny: int = 30, volfrac: float = 0.4, **kw) -> ProblemSpec:
    """Clamped left edge, unit downward load at the middle of the right edge
    (bottom-right node when ``ny`` is odd)."""
    left = node_index(nx, ny, 0, np.arange(ny + 1))
    fixed = np.union1d(2 * left, 2 * left + 1)
    load_node = int(node_index(nx, ny, nx, (ny + 1) // 2 if ny % 2 else ny // 2))
    loads = {2 * load_node + 1: -1.0}
    return ProblemSpec(nx, ny, fixed, loads, volfrac * nx * ny, name="cantilever", **kw)


def bridge(nx: int = 48, ny: int = 24, volfrac: float = 0.4, **kw) -> ProblemSpec:
    """Symmetric two-support case: both bottom corner nodes pinned, unit
    downward load at the bottom mid-span node. ``nx`` must be even so the
    load sits on the mirror axis."""
    if nx % 2:
        raise InvalidProblem("bridge preset needs an even nx")
    corners = node_index(nx, ny, np.array([0, nx]), ny)
    fixed = np.union1d(2 * corners, 2 * corners + 1)
    loads = {2 * int(node_index(nx, ny, nx // 2, ny)) + 1: -1.0}
    return ProblemSpec(nx, ny, fixed, loads, volfrac * nx * ny, name="bridge", **kw)


PRESETS = {"mbb": mbb_beam, "cantilever": cantilever, "bridge": bridge}


# ---------------------------------------------------------------------------
# Element and assembly
# ---------------------------------------------------------------------------

def element_stiffness(nu: float = 0.3) -> np.ndarray:
    """8x8 stiffness of a unit-square bilinear quad for unit Young's modulus."""
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return k[idx] / (1 - nu**2)


@functools.lru_cache(maxsize=16)
def element_dofs(nx: int, ny: int) -> np.ndarray:
    """(N, 8) array of global dofs per element, in flat element order."""
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    n1 = node_index(nx, ny, ix.ravel(), iy.ravel())      # top-left
    n2 = node_index(nx, ny, ix.ravel() + 1, iy.ravel())  # top-right
    edof = np.stack([
        2 * n1 + 2, 2 * n1 + 3,   # bottom-left
        2 * n2 + 2, 2 * n2 + 3,   # bottom-right
        2 * n2, 2 * n2 + 1,       # top-right
        2 * n1, 2 * n1 + 1,       # top-left
    ], axis=1)
    edof.setflags(write=False)
    return edof


def _youngs(spec: ProblemSpec, y: np.ndarray) -> np.ndarray:
    return spec.Emin + y**spec.penal * (spec.E0 - spec.Emin)


def _check_density(spec: ProblemSpec, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.n_elem,):
        raise InvalidDensity(f"expected {spec.n_elem} densities, got shape {y.shape}")
    if not np.all(np.isfinite(y)) or y.min() < 0.0 or y.max() > 1.0:
        raise InvalidDensity("densities must lie in [0, 1]")
    return y


def stiffness_matrix(spec: ProblemSpec, y) -> sp.csr_matrix:
    y = _check_density(spec, y)
    ke = element_stiffness(spec.nu)
    edof = element_dofs(spec.nx, spec.ny)
    vals = (_youngs(spec, y)[:, None, None] * ke[None]).ravel()
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(spec.ndof, spec.ndof)).tocsr()


def pcg(A, b, tol=RESIDUAL_TOL, maxiter=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns ``(x, converged)``; convergence means ``|b - Ax| <= tol |b|``.
    """
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, True
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            return x, False
        step = rz / pAp
        x += step * p
        r -= step * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    # true residual, the recursive one drifts
    return x, np.linalg.norm(b - A @ x) <= tol * bnorm


def assemble_and_solve(spec: ProblemSpec, y, solver: str = "direct",
                       tol: float = RESIDUAL_TOL) -> DisplacementField:
    """Solve ``K(y) U = F`` on the free dofs.

    ``solver`` is ``"direct"`` (sparse LU) or ``"pcg"``. Both paths verify the
    relative residual against ``tol`` and raise :class:`SingularSystem`
    otherwise.
    """
    K = stiffness_matrix(spec, y)
    f = spec.force()
    U = np.zeros(spec.ndof)
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        return DisplacementField(U, 0.0)
    free = spec.free_dofs()
    Kff = K[free][:, free].tocsc()
    ff = f[free]
    if solver == "direct":
        try:
            with np.errstate(all="ignore"):
                lu = spla.splu(Kff)
                uf = lu.solve(ff)
                # iterative refinement; the 1e9 stiffness contrast costs LU accuracy
                for _ in range(REFINE_STEPS):
                    r = ff - Kff @ uf
                    if not np.linalg.norm(r) > tol * fnorm:
                        break
                    uf = uf + lu.solve(r)
        except RuntimeError as exc:
            raise SingularSystem(f"stiffness matrix is singular: {exc}") from exc
    elif solver == "pcg":
        uf, ok = pcg(Kff.tocsr(), ff, tol=tol)
        if not ok:
            raise SingularSystem("PCG did not reach tolerance within the iteration cap")
    else:
        raise ValueError(f"unknown solver {solver!r}")
    if not np.all(np.isfinite(uf)):
        raise SingularSystem("non-finite displacements; check supports")
    U[free] = uf
    # fixed dofs carry reactions; the contract is on the reduced system
    res = np.linalg.norm((K @ U - f)[free]) / fnorm
    if res > tol:
        raise SingularSystem(f"relative residual {res:.2e} exceeds {tol:.0e}")
    return DisplacementField(U, res)


def element_energies(spec: ProblemSpec, U: np.ndarray) -> np.ndarray:
    """``u_e^T KE u_e`` per element, for unit modulus."""
    ue = U[element_dofs(spec.nx, spec.ny)]
    return np.einsum("ni,ij,nj->n", ue, element_stiffness(spec.nu), ue)


def compliance_and_grad(spec: ProblemSpec, y, solver: str = "direct") -> ComplianceResult:
    y = _check_density(spec, y)
    U = assemble_and_solve(spec, y, solver=solver).U
    ce = element_energies(spec, U)
    C = float(np.sum(_youngs(spec, y) * ce))
    grad = -spec.penal * y ** (spec.penal - 1) * (spec.E0 - spec.Emin) * ce
    return ComplianceResult(C, grad, U)


def compliance(spec: ProblemSpec, y, solver: str = "direct") -> float:
    return compliance_and_grad(spec, y, solver=solver).C
