"""INI run configuration.

Every key is optional; missing keys take the defaults below. Example::

    [problem]
    preset = mbb          ; mbb | cantilever | bridge
    nx = 60
    ny = 20
    volfrac = 0.5         ; or give the material volume directly: V0 = 600

    [method]
    method = nn           ; nn | mf
    rmin = 2.4            ; cone filter radius for mf

    [embedding]
    kind = gaussian       ; gaussian | torus | none
    n0 = 1000
    ell = 4.0
    phase = zero          ; zero | uniform
    r = 1.4142135623730951
    ; delta defaults to pi / (2 max(nx, ny))

    [network]
    hidden = 1000         ; comma separated widths
    activation = relu     ; relu | cosine | identity
    beta = 0.5
    omega = 5.0

    [optimizer]
    kind = rprop          ; rprop | adam | gd
    lr = 1e-3
    ramp = true

    [run]
    iters = 300
    seed = 0
    out = out
    solver = direct       ; direct | pcg

    [ntk]
    mode = limiting       ; limiting | empirical | compare
    seeds = 10

    [spectrum]
    k = 10
    kernel = limiting     ; limiting | empirical

    [radius]
    kind = torus          ; torus | gaussian
    betas = 0.1, 0.3, 0.5
    omegas = 2, 3, 5, 8
    ells = 0.5, 1, 1.4, 2, 4
    delta = 0.039269908169872414

    [upsample]
    checkpoint =          ; defaults to <out>/model.bin
    factor = 6
    f0 = bilinear         ; bilinear | exact
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import density, embed, fea, net, opt
from .errors import ConfigError, InvalidProblem


@dataclass(frozen=True)
class RunConfig:
    preset: str = "mbb"
    nx: int | None = None
    ny: int | None = None
    volfrac: float | None = None
    V0: float | None = None
    method: str = "nn"
    rmin: float = 2.4
    embedding: str = "gaussian"
    n0: int = 1000
    ell: float = 4.0
    phase: str = "zero"
    r: float = float(np.sqrt(2.0))
    delta: float | None = None
    hidden: tuple = (1000,)
    activation: str = "relu"
    beta: float = 0.5
    omega: float = 5.0
    optimizer: str = "rprop"
    lr: float = 1e-3
    ramp: bool = True
    iters: int = 300
    seed: int = 0
    out: str = "out"
    solver: str = "direct"
    ntk_mode: str = "limiting"
    ntk_seeds: int = 10
    k: int = 10
    spectrum_kernel: str = "limiting"
    radius_kind: str = "torus"
    betas: tuple = (0.1, 0.3, 0.5)
    omegas: tuple = (2.0, 3.0, 5.0, 8.0)
    ells: tuple = (0.5, 1.0, 1.4, 2.0, 4.0)
    radius_delta: float = float(np.pi / 80)
    checkpoint: str | None = None
    factor: int = 6
    f0: str = "bilinear"

    def validate(self) -> "RunConfig":
        choices = {
            "preset": fea.PRESETS, "method": ("nn", "mf"),
            "embedding": ("gaussian", "torus", "none"), "phase": ("zero", "uniform"),
            "activation": net.ACTIVATIONS, "optimizer": opt.OPTIMIZERS,
            "solver": ("direct", "pcg"), "ntk_mode": ("limiting", "empirical", "compare"),
            "spectrum_kernel": ("limiting", "empirical"), "radius_kind": ("torus", "gaussian"),
            "f0": ("exact", "bilinear"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"must be one of {sorted(allowed)}, got {getattr(self, name)!r}")
        positive = ["rmin", "ell", "r", "lr", "n0", "ntk_seeds", "k", "factor", "radius_delta"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        for name in ("nx", "ny", "delta"):
            if getattr(self, name) is not None and not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if self.volfrac is not None and not 0 < self.volfrac < 1:
            raise ConfigError("volfrac", "must lie in (0, 1)")
        if self.method == "mf" and self.rmin < 1:
            raise ConfigError("rmin", "must be >= 1")
        if not 0 <= self.beta < 1:
            raise ConfigError("beta", "must lie in [0, 1)")
        if self.activation == "cosine" and not self.omega > 0:
            raise ConfigError("omega", "must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden", "needs at least one positive width")
        if self.iters < 0:
            raise ConfigError("iters", "must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        for name in ("betas", "omegas", "ells"):
            if any(not v >= 0 for v in getattr(self, name)):
                raise ConfigError(name, "values must be nonnegative")
        if any(b >= 1 for b in self.betas):
            raise ConfigError("betas", "values must be < 1")
        self.problem()
        return self

    def problem(self) -> fea.ProblemSpec:
        kw = {}
        if self.nx is not None:
            kw["nx"] = self.nx
        if self.ny is not None:
            kw["ny"] = self.ny
        if self.volfrac is not None:
            kw["volfrac"] = self.volfrac
        try:
            spec = fea.PRESETS[self.preset](**kw)
            if self.V0 is not None:
                spec = replace(spec, V0=float(self.V0))
        except InvalidProblem as exc:
            field = "V0" if "V0" in str(exc) else "preset"
            raise ConfigError(field, str(exc)) from exc
        return spec

    def make_embedding(self, nx: int | None = None, ny: int | None = None):
        spec = self.problem()
        return embed.make_embedding(
            self.embedding, nx or spec.nx, ny or spec.ny, n0=self.n0, ell=self.ell,
            seed=self.seed, phase=self.phase, r=self.r, delta=self.delta,
        )

    def network(self, n0: int) -> net.NetworkConfig:
        return net.NetworkConfig((n0, *self.hidden, 1), beta=self.beta,
                                 activation=self.activation, omega=self.omega, seed=self.seed)

    def make_optimizer(self) -> opt.Optimizer:
        return opt.Optimizer(self.optimizer, self.lr)

    def make_filter(self) -> density.ConeFilter:
        spec = self.problem()
        return density.ConeFilter.build(spec.nx, spec.ny, self.rmin)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def echo(self) -> dict:
        """Settings that define the experiment (the output location is left out)."""
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items() if k != "out"}


# (section, key) -> (field, parser)
def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_KEYS = {
    ("problem", "preset"): ("preset", str), ("problem", "nx"): ("nx", int),
    ("problem", "ny"): ("ny", int), ("problem", "volfrac"): ("volfrac", float),
    ("problem", "v0"): ("V0", float),
    ("method", "method"): ("method", str), ("method", "rmin"): ("rmin", float),
    ("embedding", "kind"): ("embedding", str), ("embedding", "n0"): ("n0", int),
    ("embedding", "ell"): ("ell", float), ("embedding", "phase"): ("phase", str),
    ("embedding", "r"): ("r", float), ("embedding", "delta"): ("delta", float),
    ("network", "hidden"): ("hidden", _ints), ("network", "activation"): ("activation", str),
    ("network", "beta"): ("beta", float), ("network", "omega"): ("omega", float),
    ("optimizer", "kind"): ("optimizer", str), ("optimizer", "lr"): ("lr", float),
    ("optimizer", "ramp"): ("ramp", _bool),
    ("run", "iters"): ("iters", int), ("run", "seed"): ("seed", int),
    ("run", "out"): ("out", str), ("run", "solver"): ("solver", str),
    ("ntk", "mode"): ("ntk_mode", str), ("ntk", "seeds"): ("ntk_seeds", int),
    ("spectrum", "k"): ("k", int), ("spectrum", "kernel"): ("spectrum_kernel", str),
    ("radius", "kind"): ("radius_kind", str), ("radius", "betas"): ("betas", _floats),
    ("radius", "omegas"): ("omegas", _floats), ("radius", "ells"): ("ells", _floats),
    ("radius", "delta"): ("radius_delta", float),
    ("upsample", "checkpoint"): ("checkpoint", str), ("upsample", "factor"): ("factor", int),
    ("upsample", "f0"): ("f0", str),
}


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse INI text into a validated ``RunConfig``; unknown keys are errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", f"unparseable: {exc}") from exc
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if (section, key) not in _KEYS:
                raise ConfigError(f"{section}.{key}", "unknown key")
            name, parse = _KEYS[(section, key)]
            if raw.strip() == "" and parse not in (_floats, _ints):
                continue
            try:
                values[name] = parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(name, f"cannot parse {raw!r}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return parse_config(text, **overrides)
