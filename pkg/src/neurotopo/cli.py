"""``topopt`` command-line front end.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 solver
failure, 4 non-finite values during training.
"""
from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import embed, io, net, ntk, opt
from .config import RunConfig, load_config
from .errors import (ConfigError, InvalidProblem, NonFinite, SingularSystem, SizeExceeded)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NONFINITE = 0, 2, 3, 4


def _thread_limit():
    n = os.environ.get("TOPOPT_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _kernel_inputs(cfg: RunConfig):
    spec = cfg.problem()
    e = cfg.make_embedding()
    Z = embed.embed_grid(e, spec.nx, spec.ny)
    return spec, Z, cfg.network(Z.shape[1])


def cmd_optimize(cfg: RunConfig) -> int:
    spec = cfg.problem()
    out = _outdir(cfg)
    summary = {"config": cfg.echo(), "seed": cfg.seed, "method": cfg.method}
    if cfg.method == "nn":
        e = cfg.make_embedding()
        netcfg = cfg.network(e.dim)
        res = opt.train_nn(spec, e, netcfg, cfg.make_optimizer(), cfg.iters,
                           ramp=cfg.ramp, solver=cfg.solver)
        net.save_checkpoint(out / "model.bin", res.params, netcfg)
    else:
        res = opt.train_mf(spec, cfg.make_filter(), cfg.make_optimizer(), cfg.iters,
                           ramp=cfg.ramp, solver=cfg.solver)
    y = res.field.y
    io.write_density_pgm(out / "density.pgm", y, spec.nx, spec.ny)
    res.record.write_csv(out / "record.csv")
    summary.update(
        compliance=res.record.compliance[-1],
        initial_compliance=res.record.compliance[0],
        gray_fraction=opt.gray_fraction(y),
        checkerboard_index=opt.checkerboard_index(y, spec.nx, spec.ny) if min(spec.nx, spec.ny) >= 4 else None,
        mirror_asymmetry=opt.mirror_asymmetry(y, spec.nx, spec.ny),
        max_volume_error=max(res.record.volume_error),
    )
    io.write_json(out / "summary.json", summary)
    print(f"compliance {summary['compliance']:.6g} gray {summary['gray_fraction']:.3f} -> {out}")
    return EXIT_OK


def cmd_ntk(cfg: RunConfig) -> int:
    spec, Z, netcfg = _kernel_inputs(cfg)
    out = _outdir(cfg)
    center = (spec.nx // 2) * spec.ny + spec.ny // 2
    summary = {"mode": cfg.ntk_mode, "center": center, "config": cfg.echo()}
    if cfg.ntk_mode in ("limiting", "compare"):
        G = ntk.limiting_ntk(netcfg, Z).G
    else:
        G = ntk.empirical_ntk_network(net.init_params(netcfg), netcfg, Z).G
    if cfg.ntk_mode == "compare":
        errs = []
        for s in range(cfg.ntk_seeds):
            c = net.NetworkConfig(netcfg.layer_sizes, netcfg.beta, netcfg.activation,
                                  netcfg.omega, seed=cfg.seed + s)
            errs.append(ntk.relative_frobenius(ntk.empirical_ntk_network(net.init_params(c), c, Z).G, G))
        summary["relative_frobenius"] = errs
        summary["mean_relative_frobenius"] = float(np.mean(errs))
        print(f"mean relative Frobenius error {np.mean(errs):.4g} over {len(errs)} seeds")
    row = G[center]
    io.write_pgm(out / "ntk_row.pgm", io.to_gray(io.grid_image(row, spec.nx, spec.ny)))
    ix, iy = np.divmod(np.arange(spec.n_elem), spec.ny)
    io.write_csv(out / "ntk_row.csv", ("ix", "iy", "value"), zip(ix, iy, row))
    io.write_json(out / "ntk_summary.json", summary)
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig) -> int:
    spec, Z, netcfg = _kernel_inputs(cfg)
    if cfg.k > spec.n_elem:
        raise ConfigError("k", f"must not exceed the number of elements ({spec.n_elem})")
    if spec.n_elem > ntk.MAX_DENSE_EIG:
        raise ConfigError("problem", f"grid too large for a dense spectrum (N > {ntk.MAX_DENSE_EIG})")
    if cfg.spectrum_kernel == "limiting":
        G = ntk.limiting_ntk(netcfg, Z).G
    else:
        G = ntk.empirical_ntk_network(net.init_params(netcfg), netcfg, Z).G
    vals, imgs = ntk.spectrum(G, cfg.k, (spec.nx, spec.ny))
    out = _outdir(cfg)
    io.write_csv(out / "eigenvalues.csv", ("rank", "eigenvalue", "dirichlet_energy"),
                 [(i, v, ntk.dirichlet_energy(im)) for i, (v, im) in enumerate(zip(vals, imgs))])
    for i, im in enumerate(imgs):
        io.write_pgm(out / f"eig_{i:03d}.pgm", io.to_gray(im.T))
    return EXIT_OK


def cmd_radius(cfg: RunConfig) -> int:
    second = cfg.omegas if cfg.radius_kind == "torus" else cfg.ells
    if not cfg.betas or not second:
        raise ConfigError("radius", "sweep ranges must be nonempty")
    rows = []
    for b in cfg.betas:
        for v in second:
            if cfg.radius_kind == "torus":
                prof = ntk.profile_torus(b, v, cfg.radius_delta)
            else:
                prof = ntk.profile_gaussian(b, v)
            rows.append((b, v, ntk.half_max_radius(prof)))
    out = _outdir(cfg)
    name = "omega" if cfg.radius_kind == "torus" else "ell"
    io.write_csv(out / "radius.csv", ("beta", name, "radius"), rows)
    return EXIT_OK


def cmd_upsample(cfg: RunConfig) -> int:
    spec = cfg.problem()
    path = Path(cfg.checkpoint) if cfg.checkpoint else cfg.out_dir / "model.bin"
    if not path.is_file():
        raise ConfigError("checkpoint", f"no checkpoint at {path}")
    params, netcfg = net.load_checkpoint(path)
    e = cfg.make_embedding()
    if netcfg.layer_sizes[0] != e.dim:
        raise ConfigError("checkpoint", "network input size does not match the embedding")
    coarse = opt.upsample(params, netcfg, e, spec.nx, spec.ny, 1, spec.V0)
    fine = opt.upsample(params, netcfg, e, spec.nx, spec.ny, cfg.factor, spec.V0, f0=cfg.f0)
    out = _outdir(cfg)
    f = cfg.factor
    io.write_density_pgm(out / f"upsampled_x{f}.pgm", fine.y, spec.nx * f, spec.ny * f)
    mad = float(np.mean(np.abs(opt.block_average(fine.y, spec.nx, spec.ny, f) - coarse.y)))
    io.write_json(out / f"upsample_x{f}.json",
                  {"factor": f, "f0": cfg.f0, "block_average_mad": mad, "checkpoint": str(path)})
    print(f"factor {f}: block-average mean abs difference {mad:.4g}")
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "ntk": cmd_ntk, "spectrum": cmd_spectrum,
            "radius": cmd_radius, "upsample": cmd_upsample}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topopt", description="Neural-reparameterised topology optimisation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", help="output directory (overrides [run] out)")
    p.add_argument("--seed", type=int, help="seed (overrides [run] seed)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        with _thread_limit():
            return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidProblem, SizeExceeded) as exc:
        print(f"topopt: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularSystem as exc:
        print(f"topopt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NonFinite as exc:
        print(f"topopt: training aborted: {exc}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
