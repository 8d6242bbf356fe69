"""Fully-connected network in NTK parameterisation.

Layer ``l`` maps ``a^l`` to the preactivation
``(alpha / sqrt(n_l)) W^l a^l + beta b^l`` with ``alpha^2 + beta^2 = 1`` and
all parameters initialised i.i.d. standard normal. Activations are
standardised so that ``E[mu(X)^2] = 1`` for ``X ~ N(0, 1)``.

Parameters live in one flat float64 vector, ordered
``W^0 (row-major), b^0, W^1, b^1, ...``; the per-layer arrays are views.

Checkpoint byte layout (little-endian)::

    offset   size      field
    0        8         magic b"NTOPOCK1"
    8        4         uint32  number of layer sizes K (= L + 1)
    12       8K        uint64  layer sizes n_0 .. n_L
    12+8K    8         float64 alpha
    +8       8         float64 beta
    +8       4         uint32  activation tag (0 identity, 1 relu, 2 cosine)
    +4       8         float64 omega (cosine frequency, 0 otherwise)
    +8       8         uint64  seed
    +8       8         uint64  parameter count P
    +8       8P        float64 flat parameters
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BudgetExceeded, ShapeMismatch

ACTIVATIONS = ("identity", "relu", "cosine")
_MAGIC = b"NTOPOCK1"


def cosine_scale(omega: float) -> float:
    """``lambda(omega)`` making ``lambda cos(omega X)`` unit-variance."""
    return float(np.sqrt(2.0 / (1.0 + np.exp(-2.0 * omega**2))))


@dataclass(frozen=True)
class NetworkConfig:
    layer_sizes: tuple
    beta: float = 0.5
    activation: str = "relu"
    omega: float = 5.0
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("layer_sizes needs an input and an output size, all >= 1")
        if sizes[-1] != 1:
            raise ValueError("the output layer must have size 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.activation == "cosine" and self.omega <= 0:
            raise ValueError("omega must be positive for the cosine activation")

    @property
    def alpha(self) -> float:
        return float(np.sqrt(1.0 - self.beta**2))

    @property
    def depth(self) -> int:
        """Number of weight layers ``L``."""
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[l + 1] * s[l] + s[l + 1] for l in range(self.depth))

    @classmethod
    def mlp(cls, n0: int, hidden, **kw) -> "NetworkConfig":
        return cls(layer_sizes=(n0, *hidden, 1), **kw)


def activation_fns(name: str, omega: float = 5.0):
    """``(mu, mu_dot)`` for a standardised activation given by name."""
    if name == "relu":
        return (lambda x: np.sqrt(2.0) * np.maximum(x, 0.0),
                lambda x: np.sqrt(2.0) * (x > 0))
    if name == "cosine":
        lam = cosine_scale(omega)
        return (lambda x: lam * np.cos(omega * x),
                lambda x: -lam * omega * np.sin(omega * x))
    if name == "identity":
        return (lambda x: x, np.ones_like)
    raise ValueError(f"unknown activation {name!r}")


def activation(config: NetworkConfig, x: np.ndarray) -> np.ndarray:
    return activation_fns(config.activation, config.omega)[0](x)


def activation_deriv(config: NetworkConfig, x: np.ndarray) -> np.ndarray:
    return activation_fns(config.activation, config.omega)[1](x)


class NetworkParams:
    """Flat parameter vector with per-layer weight and bias views."""

    def __init__(self, layer_sizes, flat: np.ndarray | None = None):
        self.layer_sizes = tuple(layer_sizes)
        n = sum(b * a + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        if flat is None:
            flat = np.zeros(n)
        if flat.shape != (n,):
            raise ShapeMismatch(f"expected {n} parameters, got {flat.shape}")
        self.flat = flat
        self.weights, self.biases = [], []
        pos = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(flat[pos:pos + a * b].reshape(b, a))
            pos += a * b
            self.biases.append(flat[pos:pos + b])
            pos += b

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.layer_sizes, self.flat.copy())

    def __len__(self):
        return self.flat.size


def init_params(config: NetworkConfig) -> NetworkParams:
    rng = np.random.default_rng(config.seed)
    return NetworkParams(config.layer_sizes, rng.standard_normal(config.n_params))


@dataclass
class ForwardCache:
    inputs: list        # a^l fed into layer l, l = 0..L-1
    preacts: list       # preactivations of hidden layers 1..L-1


def forward(params: NetworkParams, config: NetworkConfig, Z) -> tuple[np.ndarray, ForwardCache]:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != config.layer_sizes[0]:
        raise ShapeMismatch(f"inputs have {Z.shape[1]} columns, network expects {config.layer_sizes[0]}")
    if params.layer_sizes != config.layer_sizes:
        raise ShapeMismatch("parameters do not match the configured layer sizes")
    alpha, beta = config.alpha, config.beta
    a = Z
    inputs, preacts = [], []
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        pre = (alpha / np.sqrt(W.shape[1])) * (a @ W.T) + beta * b
        if l == config.depth - 1:
            return pre[:, 0], ForwardCache(inputs, preacts)
        preacts.append(pre)
        a = activation(config, pre)


def predict(params: NetworkParams, config: NetworkConfig, Z, chunk: int = 4096) -> np.ndarray:
    """Outputs only, evaluated in row chunks to bound memory."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return np.concatenate([forward(params, config, Z[i:i + chunk])[0]
                           for i in range(0, Z.shape[0], chunk)])


def layer_sensitivities(params: NetworkParams, config: NetworkConfig, cache: ForwardCache,
                        grad_out) -> list:
    """``delta^{l+1}_i = grad_out_i * d f(z_i) / d preact^{l+1}`` for each layer l."""
    alpha = config.alpha
    delta = np.asarray(grad_out, dtype=float)[:, None]
    deltas = [delta]
    for l in range(config.depth - 1, 0, -1):
        W = params.weights[l]
        delta = (alpha / np.sqrt(W.shape[1])) * (delta @ W) * activation_deriv(config, cache.preacts[l - 1])
        deltas.append(delta)
    return deltas[::-1]


def backward(params: NetworkParams, config: NetworkConfig, cache: ForwardCache,
             grad_out) -> NetworkParams:
    """Gradient of ``sum_i grad_out_i f(z_i)`` with respect to every parameter."""
    grad_out = np.asarray(grad_out, dtype=float)
    if grad_out.shape != (cache.inputs[0].shape[0],):
        raise ShapeMismatch("grad_out must have one entry per input")
    alpha, beta = config.alpha, config.beta
    grads = NetworkParams(config.layer_sizes)
    for l, delta in enumerate(layer_sensitivities(params, config, cache, grad_out)):
        a = cache.inputs[l]
        grads.weights[l][...] = (alpha / np.sqrt(a.shape[1])) * (delta.T @ a)
        grads.biases[l][...] = beta * delta.sum(axis=0)
    return grads


@dataclass(frozen=True)
class ShiftedField:
    """Frozen initial outputs ``f0`` and the constant ``log(V0 / (N - V0))``."""

    f0: np.ndarray
    c: float


def make_shift(params: NetworkParams, config: NetworkConfig, Z, V0: float) -> ShiftedField:
    f0, _ = forward(params, config, Z)
    n = f0.size
    return ShiftedField(f0=f0, c=float(np.log(V0 / (n - V0))))


def shifted_forward(params: NetworkParams, config: NetworkConfig, shift: ShiftedField, Z):
    """Pre-densities ``f(z) - f0 + c``; returns ``(x, cache)``."""
    out, cache = forward(params, config, Z)
    if out.shape != shift.f0.shape:
        raise ShapeMismatch("shift was built on a different input set")
    return out - shift.f0 + shift.c, cache


def jacobian_rows(params: NetworkParams, config: NetworkConfig, Z,
                  max_bytes: int = 512 * 2**20) -> np.ndarray:
    """(N, P) matrix whose row i is the parameter gradient of ``f(z_i)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, P = Z.shape[0], config.n_params
    if 8 * n * P > max_bytes:
        raise BudgetExceeded(
            f"Jacobian needs {8 * n * P / 2**20:.0f} MiB (> {max_bytes / 2**20:.0f} MiB); "
            "subsample the inputs or use the layerwise empirical NTK"
        )
    _, cache = forward(params, config, Z)
    alpha, beta = config.alpha, config.beta
    blocks = []
    for l, delta in enumerate(layer_sensitivities(params, config, cache, np.ones(n))):
        a = cache.inputs[l]
        blocks.append(((alpha / np.sqrt(a.shape[1])) * delta[:, :, None] * a[:, None, :]).reshape(n, -1))
        blocks.append(beta * delta)
    return np.concatenate(blocks, axis=1)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_ACT_TAGS = {"identity": 0, "relu": 1, "cosine": 2}


def save_checkpoint(path, params: NetworkParams, config: NetworkConfig) -> None:
    sizes = config.layer_sizes
    omega = config.omega if config.activation == "cosine" else 0.0
    header = _MAGIC + struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}Q", *sizes)
    header += struct.pack("<ddIdQQ", config.alpha, config.beta, _ACT_TAGS[config.activation],
                          omega, config.seed, params.flat.size)
    Path(path).write_bytes(header + params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkParams, NetworkConfig]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    (k,) = struct.unpack_from("<I", data, 8)
    sizes = struct.unpack_from(f"<{k}Q", data, 12)
    pos = 12 + 8 * k
    _alpha, beta, tag, omega, seed, count = struct.unpack_from("<ddIdQQ", data, pos)
    pos += struct.calcsize("<ddIdQQ")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
    act = {v: name for name, v in _ACT_TAGS.items()}[tag]
    config = NetworkConfig(sizes, beta=beta, activation=act,
                           omega=omega if act == "cosine" else 5.0, seed=seed)
    return NetworkParams(sizes, flat), config
