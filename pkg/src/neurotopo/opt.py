"""Training loops for the network-parameterised (NN) and filtered (MF) methods.

Both loops share one iteration: pre-densities ``x`` go through the sigmoid
volume transform, FEA gives ``dC/dy``, the projection ``D_X`` gives ``dC/dx``
and the chain rule carries it back to the design variables (network weights
or filtered variables). The run length is a fixed iteration count.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import density, embed, fea, io, net, ntk
from .errors import NonFinite

OPTIMIZERS = ("gd", "adam", "rprop")


def lr_ramp(base: float, it: int, iters: int) -> float:
    """``base`` for the first two thirds, then linear up to ``10 * base`` at ``iters - 1``."""
    start = 2 * iters / 3
    if it < start or iters <= 1:
        return base
    span = max(iters - 1 - start, 1e-12)
    return base * (1.0 + 9.0 * min((it - start) / span, 1.0))


@dataclass
class Optimizer:
    """First-order update rule acting in place on a flat parameter vector.

    ``lr`` is the step size for GD and Adam and the initial step ``Delta_0`` for RPROP.
    """

    kind: str = "rprop"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta_min: float = 1e-9
    delta_max: float = 1.0
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    delta: np.ndarray | None = None
    prev_grad: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def step(self, theta: np.ndarray, grad: np.ndarray, scale: float = 1.0) -> None:
        """Update ``theta`` in place; ``scale`` multiplies the step size (GD and Adam only)."""
        self.t += 1
        if self.kind == "gd":
            theta -= self.lr * scale * grad
        elif self.kind == "adam":
            if self.m is None:
                self.m, self.v = np.zeros_like(theta), np.zeros_like(theta)
            self.m = self.beta1 * self.m + (1 - self.beta1) * grad
            self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
            mhat = self.m / (1 - self.beta1**self.t)
            vhat = self.v / (1 - self.beta2**self.t)
            theta -= self.lr * scale * mhat / (np.sqrt(vhat) + self.eps)
        else:
            if self.delta is None:
                self.delta = np.full_like(theta, self.lr)
                self.prev_grad = np.zeros_like(theta)
            sign = np.sign(grad * self.prev_grad)
            self.delta = np.clip(
                np.where(sign > 0, self.delta * self.eta_plus,
                         np.where(sign < 0, self.delta * self.eta_minus, self.delta)),
                self.delta_min, self.delta_max,
            )
            grad = np.where(sign < 0, 0.0, grad)
            theta -= np.sign(grad) * self.delta
            self.prev_grad = grad


def gray_fraction(y) -> float:
    y = np.asarray(y)
    return float(np.mean((y > 0.1) & (y < 0.9)))


def checkerboard_index(y, nx: int, ny: int) -> float:
    """Share of mean-removed DFT energy above half the Nyquist radius (0.25 cycles/element)."""
    if nx < 4 or ny < 4:
        raise ValueError("checkerboard index needs at least a 4x4 grid")
    img = np.asarray(y, dtype=float).reshape(nx, ny)
    power = np.abs(np.fft.fft2(img - img.mean())) ** 2
    total = power.sum()
    if total <= 1e-30 * img.size:
        return 0.0
    fx = np.fft.fftfreq(nx)[:, None]
    fy = np.fft.fftfreq(ny)[None, :]
    return float(power[np.hypot(fx, fy) > 0.25].sum() / total)


def mirror_asymmetry(y, nx: int, ny: int) -> float:
    """``|Y - mirror(Y)|_1 / |Y|_1`` for the left-right reflection."""
    img = np.asarray(y).reshape(nx, ny)
    return float(np.abs(img - img[::-1]).sum() / np.abs(img).sum())


def block_average(y_fine, nx: int, ny: int, factor: int) -> np.ndarray:
    img = np.asarray(y_fine).reshape(nx, factor, ny, factor)
    return img.mean(axis=(1, 3)).ravel()


@dataclass
class RunRecord:
    compliance: list = field(default_factory=list)
    volume_error: list = field(default_factory=list)
    gray: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    ntk_drift: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    HEADER = ("iter", "compliance", "volume_error", "gray_fraction", "grad_norm", "ntk_drift")

    def append(self, C, verr, gray, gnorm, drift=np.nan, wall=0.0):
        self.compliance.append(float(C))
        self.volume_error.append(float(verr))
        self.gray.append(float(gray))
        self.grad_norm.append(float(gnorm))
        self.ntk_drift.append(float(drift))
        self.wall_time.append(float(wall))

    def __len__(self):
        return len(self.compliance)

    def rows(self):
        """Table rows without wall time, so equal runs give identical files."""
        return [(i, self.compliance[i], self.volume_error[i], self.gray[i],
                 self.grad_norm[i], self.ntk_drift[i]) for i in range(len(self))]

    def write_csv(self, path) -> None:
        io.write_csv(path, self.HEADER, self.rows())


@dataclass
class NNResult:
    params: net.NetworkParams
    field: density.DensityTransform
    record: RunRecord
    shift: net.ShiftedField
    config: net.NetworkConfig
    Z: np.ndarray


@dataclass
class MFResult:
    xbar: np.ndarray
    field: density.DensityTransform
    record: RunRecord


def _evaluate(spec: fea.ProblemSpec, x: np.ndarray, solver: str, it: int):
    t = density.sigma_transform(x, spec.V0)
    res = fea.compliance_and_grad(spec, t.y, solver=solver)
    if not np.isfinite(res.C) or not np.all(np.isfinite(res.grad_y)):
        raise NonFinite(f"non-finite compliance or gradient at iteration {it} (C = {res.C})")
    return t, res.C, density.apply_DX(t, res.grad_y)


def train_nn(spec: fea.ProblemSpec, embedding, config: net.NetworkConfig, optimizer: Optimizer,
             iters: int = 300, ramp: bool = True, solver: str = "direct",
             drift_every: int = 0, drift_max_points: int = 4096) -> NNResult:
    """Optimise the network weights; the record has ``iters + 1`` rows (initial state included).

    With ``drift_every > 0`` the relative change of the empirical NTK is logged every
    ``drift_every`` iterations on at most ``drift_max_points`` elements.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    Z = embed.embed_grid(embedding, spec.nx, spec.ny)
    params = net.init_params(config)
    shift = net.make_shift(params, config, Z, spec.V0)
    record = RunRecord()
    sub = np.arange(min(spec.n_elem, drift_max_points))
    G0 = ntk.empirical_ntk_network(params, config, Z[sub]).G if drift_every else None
    t0 = time.perf_counter()
    for it in range(iters + 1):
        x, cache = net.shifted_forward(params, config, shift, Z)
        t, C, gx = _evaluate(spec, x, solver, it)
        grad = net.backward(params, config, cache, gx).flat
        if not np.all(np.isfinite(grad)):
            raise NonFinite(f"non-finite parameter gradient at iteration {it}")
        drift = np.nan
        if drift_every and it % drift_every == 0:
            drift = ntk.ntk_drift(G0, ntk.empirical_ntk_network(params, config, Z[sub]).G)
        record.append(C, t.volume_error, gray_fraction(t.y), np.linalg.norm(grad), drift,
                      time.perf_counter() - t0)
        if it == iters:
            break
        optimizer.step(params.flat, grad, lr_ramp(1.0, it, iters) if ramp else 1.0)
    return NNResult(params, t, record, shift, config, Z)


def train_mf(spec: fea.ProblemSpec, filt: density.ConeFilter, optimizer: Optimizer,
             iters: int = 300, ramp: bool = True, solver: str = "direct") -> MFResult:
    """Optimise filtered variables ``xbar`` (``x = T xbar``), starting from ``xbar = 0``."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if (filt.nx, filt.ny) != (spec.nx, spec.ny):
        raise ValueError("filter grid does not match the problem grid")
    xbar = np.zeros(spec.n_elem)
    record = RunRecord()
    t0 = time.perf_counter()
    for it in range(iters + 1):
        x = density.cone_filter_apply(filt, xbar)
        t, C, gx = _evaluate(spec, x, solver, it)
        grad = density.cone_filter_transpose_apply(filt, gx)
        record.append(C, t.volume_error, gray_fraction(t.y), np.linalg.norm(grad),
                      wall=time.perf_counter() - t0)
        if it == iters:
            break
        optimizer.step(xbar, grad, lr_ramp(1.0, it, iters) if ramp else 1.0)
    return MFResult(xbar, t, record)


def upsample(params: net.NetworkParams, config: net.NetworkConfig, embedding, nx: int, ny: int,
             factor: int, V0: float, f0: str = "bilinear") -> density.DensityTransform:
    """Evaluate a trained network on a ``factor``-times finer grid of the same domain.

    The bias is recomputed for the target fraction ``V0 / (nx ny)``. The frozen initial
    output ``f0`` at fine points is either evaluated exactly from the seeded
    initialisation (``"exact"``) or interpolated bilinearly from the coarse
    element values (``"bilinear"``).
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if f0 not in ("exact", "bilinear"):
        raise ValueError("f0 must be 'exact' or 'bilinear'")
    Zc = embed.embed_grid(embedding, nx, ny)
    Zf = embed.embed_grid(embedding, nx, ny, factor)
    init = net.init_params(config)
    out = net.predict(params, config, Zf)
    if f0 == "exact":
        base = net.predict(init, config, Zf)
    else:
        base = bilinear(net.predict(init, config, Zc), nx, ny, factor)
    N = nx * ny
    x = out - base + np.log(V0 / (N - V0))
    return density.sigma_transform(x, V0 * factor**2)


def bilinear(values, nx: int, ny: int, factor: int) -> np.ndarray:
    """Bilinear interpolation of element-centre values onto fine element centres.

    Values are held constant beyond the outermost centres.
    """
    img = np.asarray(values, dtype=float).reshape(nx, ny)
    cx = (np.arange(nx * factor) + 0.5) / factor - 0.5
    cy = (np.arange(ny * factor) + 0.5) / factor - 0.5
    tmp = np.stack([np.interp(cx, np.arange(nx), img[:, j]) for j in range(ny)], axis=1)
    fine = np.stack([np.interp(cy, np.arange(ny), tmp[i]) for i in range(nx * factor)])
    return fine.ravel()
