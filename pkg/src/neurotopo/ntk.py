"""Neural tangent kernels: empirical Gram matrices, the infinite-width limit,
radial kernel profiles and their half-maximum radius, spectra, and the
convolutional square root of the full-torus kernel.

The limiting kernel follows the layer recursion

    Sigma^1     = beta^2 + alpha^2 / n0 * z . z'
    Sigma^{l+1} = beta^2 + alpha^2 E[mu(X) mu(Y)]
    Sdot^{l+1}  = alpha^2 E[mu'(X) mu'(Y)]
    Theta^{l+1} = Sdot^{l+1} Theta^l + Sigma^{l+1}

with ``(X, Y)`` centred Gaussian of covariance given by ``Sigma^l``. The
expectations are evaluated in closed form for every supported activation,
tracking the diagonal variances so inputs need not be normalised. For unit
variances they reduce to the dual activations ``mu_hat(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import net
from .errors import DegenerateProfile, NegativeSpectrum, SizeExceeded, UnknownDual

_RHO_TOL = 1e-12


@dataclass
class KernelMatrix:
    G: np.ndarray
    kind: str  # "empirical", "limiting" or "squared-filter"

    def validate(self, sym_tol: float = 1e-10, psd_floor: float = -1e-8) -> "KernelMatrix":
        scale = max(1.0, np.abs(self.G).max())
        if np.abs(self.G - self.G.T).max() > sym_tol * scale:
            raise ValueError("kernel matrix is not symmetric")
        if np.linalg.eigvalsh(self.G).min() < psd_floor * scale:
            raise ValueError("kernel matrix is not positive semi-definite")
        return self

    @property
    def n(self) -> int:
        return self.G.shape[0]


def relative_frobenius(A, B) -> float:
    """``|A - B|_F / |B|_F``."""
    return float(np.linalg.norm(A - B) / np.linalg.norm(B))


# ---------------------------------------------------------------------------
# Dual activations
# ---------------------------------------------------------------------------

def relu_dual(rho):
    rho = np.clip(rho, -1.0, 1.0)
    return rho - (rho * np.arccos(rho) - np.sqrt(1.0 - rho**2)) / np.pi


def relu_dual_deriv(rho):
    return 1.0 - np.arccos(np.clip(rho, -1.0, 1.0)) / np.pi


def cosine_dual(rho, omega):
    """``cosh(omega^2 rho) / cosh(omega^2)``, written overflow-free."""
    w2 = omega**2
    return (np.exp(-w2 * (1 - rho)) + np.exp(-w2 * (1 + rho))) / (1 + np.exp(-2 * w2))


def cosine_dual_deriv(rho, omega):
    w2 = omega**2
    return w2 * (np.exp(-w2 * (1 - rho)) - np.exp(-w2 * (1 + rho))) / (1 + np.exp(-2 * w2))


@dataclass(frozen=True)
class DualActivation:
    name: str
    dual: Callable
    dual_deriv: Callable


def dual_activation(name: str, omega: float = 5.0) -> DualActivation:
    if name == "relu":
        return DualActivation(name, relu_dual, relu_dual_deriv)
    if name == "cosine":
        return DualActivation(name, lambda r: cosine_dual(r, omega),
                              lambda r: cosine_dual_deriv(r, omega))
    if name == "identity":
        return DualActivation(name, lambda r: np.asarray(r, dtype=float),
                              lambda r: np.ones_like(np.asarray(r, dtype=float)))
    raise UnknownDual(f"no analytic dual registered for activation {name!r}")


def monte_carlo_dual(activation: str, rho: float, samples: int = 10**6, omega: float = 5.0,
                     seed: int = 0, derivative: bool = False, return_stderr: bool = False):
    """Sample estimate of ``E[mu(X) mu(Y)]`` (or of ``mu'``) for standard
    normal ``X, Y`` with correlation ``rho``."""
    if abs(rho) > 1:
        raise ValueError("rho must lie in [-1, 1]")
    fn = net.activation_fns(activation, omega)[1 if derivative else 0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(samples)
    y = rho * x + np.sqrt(1.0 - rho**2) * rng.standard_normal(samples)
    prod = fn(x) * fn(y)
    est = float(prod.mean())
    if return_stderr:
        return est, float(prod.std(ddof=1) / np.sqrt(samples))
    return est


def _moments(activation: str, omega: float, s1, s2, c):
    """``E[mu(X) mu(Y)]`` and ``E[mu'(X) mu'(Y)]`` for ``Var X = s1``,
    ``Var Y = s2``, ``Cov = c``; correlations are clamped to [-1, 1]."""
    s = np.sqrt(s1 * s2)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(s > 0, c / np.where(s > 0, s, 1.0), 0.0)
    rho = np.clip(rho, -1.0, 1.0)
    if activation == "relu":
        return s * relu_dual(rho), relu_dual_deriv(rho)
    if activation == "cosine":
        c = rho * s
        w2 = omega**2
        lam2 = 2.0 / (1.0 + np.exp(-2.0 * w2))
        em = np.exp(-0.5 * w2 * (s1 + s2 - 2 * c))
        ep = np.exp(-0.5 * w2 * (s1 + s2 + 2 * c))
        return 0.5 * lam2 * (em + ep), 0.5 * lam2 * w2 * (em - ep)
    if activation == "identity":
        return rho * s, np.ones_like(rho)
    raise UnknownDual(f"no analytic dual registered for activation {activation!r}")


def _recursion(config: net.NetworkConfig, Za, Zb):
    Za = np.atleast_2d(np.asarray(Za, dtype=float))
    Zb = np.atleast_2d(np.asarray(Zb, dtype=float))
    n0 = config.layer_sizes[0]
    if Za.shape[1] != n0 or Zb.shape[1] != n0:
        raise ValueError(f"inputs must have {n0} columns")
    a2, b2 = config.alpha**2, config.beta**2
    act, w = config.activation, config.omega
    sig = b2 + a2 / n0 * (Za @ Zb.T)
    da = b2 + a2 / n0 * np.einsum("ij,ij->i", Za, Za)
    db = b2 + a2 / n0 * np.einsum("ij,ij->i", Zb, Zb)
    theta = sig.copy()
    for _ in range(config.depth - 1):
        T, Tdot = _moments(act, w, da[:, None], db[None, :], sig)
        sig = b2 + a2 * T
        theta = a2 * Tdot * theta + sig
        da = b2 + a2 * _moments(act, w, da, da, da)[0]
        db = b2 + a2 * _moments(act, w, db, db, db)[0]
    return sig, theta


def limiting_ntk_cross(config: net.NetworkConfig, Za, Zb) -> np.ndarray:
    return _recursion(config, Za, Zb)[1]


def limiting_ntk(config: net.NetworkConfig, Z) -> KernelMatrix:
    G = limiting_ntk_cross(config, Z, Z)
    return KernelMatrix(0.5 * (G + G.T), "limiting")


def nngp_kernel(config: net.NetworkConfig, Z) -> np.ndarray:
    """Output covariance ``Sigma^L`` of the network at initialisation."""
    return _recursion(config, Z, Z)[0]


def empirical_ntk(J) -> KernelMatrix:
    J = np.asarray(J, dtype=float)
    G = J @ J.T
    return KernelMatrix(0.5 * (G + G.T), "empirical")


def empirical_ntk_network(params: net.NetworkParams, config: net.NetworkConfig, Z) -> KernelMatrix:
    """Same Gram matrix as ``empirical_ntk(jacobian_rows(...))`` without
    materialising the Jacobian: per layer, the weight block contributes
    ``(delta delta^T) * alpha^2 / n_l (a a^T)`` and the bias block
    ``beta^2 (delta delta^T)``."""
    _, cache = net.forward(params, config, Z)
    n = cache.inputs[0].shape[0]
    a2, b2 = config.alpha**2, config.beta**2
    G = np.zeros((n, n))
    for l, delta in enumerate(net.layer_sensitivities(params, config, cache, np.ones(n))):
        a = cache.inputs[l]
        G += (delta @ delta.T) * (a2 / a.shape[1] * (a @ a.T) + b2)
    return KernelMatrix(0.5 * (G + G.T), "empirical")


def ntk_drift(G_t, G_0) -> float:
    return relative_frobenius(G_t, G_0)


# ---------------------------------------------------------------------------
# Radial profiles and filter radius
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelProfile:
    fn: Callable
    meta: dict = field(default_factory=dict)

    def __call__(self, r):
        return self.fn(np.asarray(r, dtype=float))


def _unit_diagonal_recursion(sigma1, dual: DualActivation, beta: float, n_hidden: int):
    b2, a2 = beta**2, 1.0 - beta**2
    sig = np.asarray(sigma1, dtype=float)
    theta = sig.copy()
    for _ in range(n_hidden):
        rho = np.clip(sig, -1.0, 1.0)
        sdot = a2 * dual.dual_deriv(rho)
        sig = b2 + a2 * dual.dual(rho)
        theta = sdot * theta + sig
    return theta


def profile_gaussian(beta: float, ell: float, L: int = 2) -> KernelProfile:
    """Limiting kernel versus distance for the Gaussian embedding followed by
    ``L - 1`` ReLU hidden layers, in the infinite-embedding limit.

    Returned as ``(Theta^L - beta^2) / alpha^2``; for ``L = 2`` this is
    ``r(G) + G r'(G)`` with ``G(d) = beta^2 + alpha^2 exp(-d^2 / 2 ell^2)``.
    The positive affine rescaling leaves the half-maximum radius unchanged.
    """
    if not 0.0 <= beta < 1.0 or ell <= 0 or L < 2:
        raise ValueError("need 0 <= beta < 1, ell > 0 and L >= 2")
    dual = dual_activation("relu")
    b2 = beta**2

    def phi(d):
        g = b2 + (1 - b2) * np.exp(-(d**2) / (2 * ell**2))
        return (_unit_diagonal_recursion(g, dual, beta, L - 1) - b2) / (1 - b2)

    return KernelProfile(phi, dict(embedding="gaussian", beta=beta, ell=ell, L=L,
                                   scan_max=12 * ell))


def profile_torus(beta: float, omega: float, delta: float, L: int = 3) -> KernelProfile:
    """Limiting kernel along the grid diagonal for the torus embedding
    (radius sqrt 2) followed by ``L - 1`` standardised-cosine hidden layers.

    ``r`` is the per-axis offset, so the first layer reads
    ``beta^2 + alpha^2 cos(delta r)``. Valid on ``[0, pi / delta]``.
    """
    if not 0.0 <= beta < 1.0 or omega <= 0 or delta <= 0 or L < 1:
        raise ValueError("need 0 <= beta < 1, omega > 0, delta > 0, L >= 1")
    dual = dual_activation("cosine", omega)

    def phi(r):
        s1 = beta**2 + (1 - beta**2) * np.cos(delta * r)
        return _unit_diagonal_recursion(s1, dual, beta, L - 1)

    return KernelProfile(phi, dict(embedding="torus", beta=beta, omega=omega, delta=delta,
                                   L=L, scan_max=np.pi / delta))


def half_max_radius(profile, scan_max: float | None = None, n_scan: int = 1000,
                    tol: float = 1e-10) -> float:
    """Smallest ``r`` with ``profile(r) <= (profile(0) + inf profile) / 2``.

    The infimum is taken over the scan window ``[0, scan_max]``; the crossing
    is located on a dense grid and refined by bisection.
    """
    if scan_max is None:
        scan_max = getattr(profile, "meta", {}).get("scan_max")
        if scan_max is None:
            raise ValueError("scan_max is required for this profile")
    r = np.linspace(0.0, scan_max, n_scan)
    vals = np.asarray(profile(r), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("profile is not finite on the scan window")
    if vals.max() - vals.min() <= 1e-12:
        raise DegenerateProfile("profile is constant; the radius is undefined")
    level = 0.5 * (vals[0] + vals.min())
    k = int(np.argmax(vals <= level))
    if k == 0:
        return 0.0
    lo, hi = r[k - 1], r[k]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(profile(mid)) <= level:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

MAX_DENSE_EIG = 4096


def spectrum(G, k: int, shape: tuple[int, int] | None = None):
    """Top-``k`` eigenpairs of a symmetric Gram matrix, eigenvalues
    descending, eigenvectors reshaped to ``shape`` (row-major, i.e. indexed
    ``[ix, iy]`` in flat element order)."""
    G = G.G if isinstance(G, KernelMatrix) else np.asarray(G, dtype=float)
    n = G.shape[0]
    if n > MAX_DENSE_EIG:
        raise SizeExceeded(f"N={n} exceeds the dense eigensolver limit {MAX_DENSE_EIG}")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    vals, vecs = np.linalg.eigh(0.5 * (G + G.T))
    order = np.argsort(vals)[::-1][:k]
    vals, vecs = vals[order], vecs[:, order]
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(k)])
    if shape is not None:
        return vals, vecs.T.reshape(k, *shape)
    return vals, vecs.T


def dirichlet_energy(img) -> float:
    """Sum of squared forward differences along both grid axes."""
    img = np.asarray(img, dtype=float)
    return float(np.sum(np.diff(img, axis=0) ** 2) + np.sum(np.diff(img, axis=1) ** 2))


# ---------------------------------------------------------------------------
# Full-torus convolution structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusFilter:
    """Stencils on the ``n`` x ``n`` torus, origin at index ``[0, 0]``.

    ``kernel[dx, dy]`` is the limiting NTK between elements offset by
    ``(dx, dy)``; ``sqrt_stencil`` is its convolutional square root.
    """

    n: int
    delta: float
    kernel: np.ndarray
    spectrum: np.ndarray
    sqrt_stencil: np.ndarray


def torus_grid(n: int):
    from .embed import TorusEmbedding, element_centers
    emb = TorusEmbedding(np.sqrt(2.0), 2 * np.pi / n)
    return emb, emb(element_centers(n, n))


def circulant_apply(stencil, img) -> np.ndarray:
    """``(C x)[i] = sum_j stencil[j - i] x[j]`` on the periodic grid."""
    s = np.asarray(stencil, dtype=float)
    return np.real(np.fft.ifft2(np.conj(np.fft.fft2(s)) * np.fft.fft2(img)))


def circulant_matrix(stencil) -> np.ndarray:
    """Dense ``(n*n, n*n)`` matrix ``M[i, j] = stencil[j - i]`` (small n only)."""
    s = np.asarray(stencil, dtype=float)
    n1, n2 = s.shape
    ix, iy = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    return s[(ix[None, :] - ix[:, None]) % n1, (iy[None, :] - iy[:, None]) % n2]


def sqrt_stencil(kernel) -> tuple[np.ndarray, np.ndarray]:
    """Square root of a symmetric circulant kernel via its 2D DFT.

    Returns ``(spectrum, g)``; small negative eigenvalues from rounding are
    clipped, larger ones raise :class:`NegativeSpectrum`.
    """
    K = np.asarray(kernel, dtype=float)
    khat = np.fft.fft2(K)
    scale = np.abs(khat).max()
    if np.abs(khat.imag).max() > 1e-8 * scale:
        raise ValueError("kernel stencil is not symmetric")
    khat = khat.real
    if khat.min() < -1e-6 * scale:
        raise NegativeSpectrum(f"min eigenvalue {khat.min():.3e} (max {scale:.3e})")
    g = np.real(np.fft.ifft2(np.sqrt(np.clip(khat, 0.0, None))))
    return khat, g


def torus_sqrt_filter(config: net.NetworkConfig, nx: int, ny: int) -> TorusFilter:
    """Limiting-NTK stencil on the torus covering an ``n = 4 max(nx, ny)``
    square extension of the grid, and its square-root filter."""
    if config.layer_sizes[0] != 4:
        raise ValueError("torus filter needs a network with 4 inputs")
    n = 4 * max(nx, ny)
    emb, Z = torus_grid(n)
    K = limiting_ntk_cross(config, Z[:1], Z)[0].reshape(n, n)
    khat, g = sqrt_stencil(K)
    return TorusFilter(n, emb.delta, K, khat, g)
