"""Command-line entry point: ``trmfit {synth,estimate,gradcheck,edie}``.

Exit codes: 0 ok, 1 check failure, 2 usage or configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, MissingColumn, ParseError, TrmError, UnsupportedScheme

log = logging.getLogger("trmfit")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


# ------------------------------------------------------------------ commands


def cmd_synth(cfg: cfgmod.SynthConfig, out: Path):
    """Generate ground truth and a coarse density matrix."""
    from .grid import DensityMatrix, SubdivisionSpec, restrict, save_matrix_csv, save_matrix_json
    from .rollout import RolloutPlan, run
    from .schemes import ControlField, SchemeKind
    from .synthetic import ReferenceConfig, ground_truth, sample, two_regime

    if cfg.generator == "two_regime":
        data, control = two_regime(cfg.n_t, cfg.n_x, seed=cfg.seed)
        (out / "true_control.json").write_text(json.dumps(
            {"mode": control.mode.value, "c": control.coeffs.tolist()}))
    else:
        ref_cfg = ReferenceConfig(cfg.x_start, cfg.x_end, cfg.dx, cfg.cfl, cfg.t_end, cfg.v_m,
                                  tuple(cfg.crop))
        t0 = time.perf_counter()
        ref = ground_truth(ref_cfg)
        log.info("reference solve %s in %.1fs", ref.shape, time.perf_counter() - t0)
        stride = cfg.write_every
        rows = np.arange(0, ref.grid.n_t, stride)
        if rows[-1] != ref.grid.n_t - 1:
            rows = np.append(rows, ref.grid.n_t - 1)
        with open(out / "reference_solution.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [repr(float(x)) for x in ref.grid.centers])
            for i in rows:
                w.writerow([repr(float(ref.grid.times[i]))] + [repr(float(v)) for v in ref.values[i]])
        data = sample(ref, cfg.n_t, cfg.n_x, tuple(cfg.crop), cfg.t_end)
        if cfg.generator == "trm":
            # noiseless data produced by the TRM itself, with the Godunov IC and boundaries
            spec = SubdivisionSpec(cfg.p_t, cfg.p_x)
            control = ControlField.constant(cfg.c_true)
            fine = run(RolloutPlan(data.grid, spec, SchemeKind.TRM, data), control)
            data = DensityMatrix(data.grid, restrict(fine, spec))
            (out / "true_control.json").write_text(json.dumps(
                {"mode": "constant", "c": cfg.c_true, "p_t": cfg.p_t, "p_x": cfg.p_x}))
    save_matrix_csv(out / "density_matrix.csv", data.grid, data.values)
    save_matrix_json(out / "density_matrix.json", data.grid, data.values)
    print(f"synth: generator={cfg.generator} density matrix {data.shape[0]}x{data.shape[1]} -> {out}")
    return EXIT_OK


def _observed(spec, n_x):
    from .gradients import observation_pattern

    if isinstance(spec, str):
        return observation_pattern({"all": "full", "center": "single"}.get(spec, spec), n_x)
    return [int(c) for c in spec]


def cmd_estimate(cfg: cfgmod.EstimateConfig, out: Path, threads=1, effective=None):
    """Fit flux parameters to a density matrix."""
    from .estimation import EstimationProblem, OptimizerSettings, fundamental_diagram, minimize
    from .grid import DensityMatrix, SubdivisionSpec, load_matrix, minimal_p_t, save_matrix_csv

    grid, values = load_matrix(cfg.data)
    data = DensityMatrix(grid, values)
    p_t = cfg.p_t or minimal_p_t(grid, cfg.p_x, cfg.v_max)
    spec = SubdivisionSpec(p_t, cfg.p_x)
    opt = OptimizerSettings(cfg.max_iters, cfg.grad_tol, cfg.initial_theta, cfg.line_search,
                            method=cfg.method)
    problem = EstimationProblem(data, cfg.rho_max, cfg.scheme, cfg.mode, spec,
                                _observed(cfg.observed, grid.n_x), cfg.lam, opt)
    t0 = time.perf_counter()
    result = minimize(problem, workers=threads)
    elapsed = time.perf_counter() - t0

    (out / "result.json").write_text(result.dumps(config=effective, runtime_s=elapsed))
    save_matrix_csv(out / "fitted_density.csv", grid, result.fitted_density.values)

    flow = None
    if cfg.flow:
        fgrid, flow = load_matrix(cfg.flow)
        if fgrid.shape != grid.shape:
            raise ConfigError("flow matrix shape differs from the density matrix")
    fd = fundamental_diagram(result, values * cfg.rho_max if flow is not None else None, flow)
    with open(out / "fd_points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "t", "x", "density", "flow", "speed"])
        tt, xx = np.meshgrid(grid.times, grid.centers, indexing="ij")
        for (rho, phi), v, t, x in zip(fd["fit"], fd["fit_speed"], tt.ravel(), xx.ravel()):
            w.writerow(["fit", repr(float(t)), repr(float(x)), repr(float(rho)), repr(float(phi)),
                        repr(float(v))])
        if fd["data"] is not None:
            for (rho, phi), t, x in zip(fd["data"], tt.ravel(), xx.ravel()):
                w.writerow(["data", repr(float(t)), repr(float(x)), repr(float(rho)),
                            repr(float(phi)), ""])
    print(result.summary())
    return EXIT_OK


def cmd_gradcheck(cfg: cfgmod.GradcheckConfig, out: Path):
    """Compare forward, backward and finite-difference gradients."""
    from .gradients import gradcheck_report

    report = gradcheck_report(cfg.schemes, cfg.modes, [tuple(s) for s in cfg.subdivisions],
                              cfg.observed, cfg.repeats, cfg.seed, cfg.h, cfg.threshold)
    (out / "gradcheck.json").write_text(json.dumps(report, indent=2))
    for mode, errs in report["per_mode"].items():
        print(f"{mode:10s} fp_vs_fd={errs['fp_vs_fd']:.2e} bp_vs_fd={errs['bp_vs_fd']:.2e} "
              f"fp_vs_bp={errs['fp_vs_bp']:.2e}")
    print(f"gradcheck: {report['n_cases']} cases, {'PASS' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_edie(cfg: cfgmod.EdieConfig, out: Path):
    """Build Edie density and flow matrices from trajectories."""
    from .edie import edie_matrices, estimate_rho_max, parse_trajectories
    from .grid import Grid, save_matrix_csv

    path = cfg.trajectories
    if path.startswith(cfgmod.BUILTIN_PREFIX):
        path = cfgmod.builtin_path(path)
    trajs = parse_trajectories(path, cfg.column_mapping())
    g = cfg.grid
    grid = Grid.cell_centred(g.x_start, g.x_end, g.n_x, g.t_start, g.t_end, g.n_t)
    em = edie_matrices(trajs, grid, cfg.direction)
    rho_max = cfg.rho_max if cfg.rho_max is not None else estimate_rho_max(trajs, cfg.lanes)

    save_matrix_csv(out / "density.csv", grid, em.density)
    save_matrix_csv(out / "flow.csv", grid, em.flow)
    save_matrix_csv(out / "normalized_density.csv", grid, em.normalized(rho_max).values)
    with open(out / "fd_points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "density", "flow"])
        for i, t in enumerate(grid.times):
            for j, x in enumerate(grid.centers):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(em.density[i, j])),
                            repr(float(em.flow[i, j]))])
    (out / "edie.json").write_text(json.dumps(
        {"rho_max": rho_max, "vehicles": len(trajs), "grid": grid.to_dict()}, indent=2))
    print(f"edie: {len(trajs)} vehicles, {g.n_t}x{g.n_x} matrices, rho_max={rho_max:.4f} /m -> {out}")
    return EXIT_OK


COMMAND_FUNCS = {"synth": cmd_synth, "estimate": cmd_estimate, "gradcheck": cmd_gradcheck,
                 "edie": cmd_edie}


# -------------------------------------------------------------------- parser


def _override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), cfgmod.parse_value(value.strip())


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="TOML or JSON config file")
    parser.add_argument("--out", type=Path, default=default, help="output directory (default .)")
    parser.add_argument("--threads", type=int, default=default, help="worker threads cap")
    parser.add_argument("--verbose", "-v", action="store_true", default=default)
    parser.add_argument("--set", dest="overrides", action="append", type=_override,
                        default=default, metavar="KEY=VALUE",
                        help="override a config key (dotted for nested tables)")


# named flags mapped onto config keys: (flag, key, type, help)
NAMED = {
    "synth": [("--n-t", "n_t", int, "data rows"), ("--n-x", "n_x", int, "data columns"),
              ("--dx", "dx", float, "reference cell size"),
              ("--v-m", "v_m", float, "reference maximal speed"),
              ("--generator", "generator", str, "godunov | trm | two_regime")],
    "estimate": [("--data", "data", str, "density matrix (CSV or JSON)"),
                 ("--flow", "flow", str, "measured flow matrix for the diagram"),
                 ("--scheme", "scheme", str, "trm | lxf"),
                 ("--mode", "mode", str, "constant | time | space | spacetime"),
                 ("--p-x", "p_x", int, "space subdivisions"),
                 ("--p-t", "p_t", int, "time subdivisions (default: minimal for CFL)"),
                 ("--v-max", "v_max", float, "speed bound used to size p_t"),
                 ("--rho-max", "rho_max", float, "maximal density"),
                 ("--observed", "observed", str, "all | half | center | comma-separated columns"),
                 ("--lam", "lam", str, "regularization weight or comma-separated candidates"),
                 ("--max-iters", "max_iters", int, "iteration budget")],
    "gradcheck": [("--schemes", "schemes", str, "comma-separated schemes"),
                  ("--modes", "modes", str, "comma-separated modes"),
                  ("--repeats", "repeats", int, "instances per lattice point"),
                  ("--seed", "seed", int, "random seed")],
    "edie": [("--trajectories", "trajectories", str, "trajectory CSV or builtin:NAME"),
             ("--lanes", "lanes", float, "lane count for rho_max"),
             ("--rho-max", "rho_max", float, "maximal density (skips estimation)")],
}

LIST_KEYS = {"schemes", "modes"}


def _named_value(key, raw):
    if key in LIST_KEYS:
        return [s.strip() for s in raw.split(",") if s.strip()]
    if key == "observed" and raw not in ("all", "half", "center"):
        return [int(s) for s in raw.split(",")]
    if key == "lam":
        parts = [float(s) for s in raw.split(",")]
        return parts[0] if len(parts) == 1 else parts
    return raw


def build_parser():
    parser = argparse.ArgumentParser(prog="trmfit", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMAND_FUNCS.items():
        sp = sub.add_parser(name, help=(func.__doc__ or name).splitlines()[0])
        _global_flags(sp, suppress=True)
        for flag, key, typ, help_ in NAMED[name]:
            sp.add_argument(flag, dest=f"named_{key}", metavar=key.upper(), type=typ, help=help_)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides or [])
    try:
        for key, value in vars(args).items():
            if key.startswith("named_") and value is not None:
                overrides.append((key[len("named_"):], _named_value(key[len("named_"):], value)))
        cfg = cfgmod.load(args.command, args.config, overrides)
    except (ConfigError, UnsupportedScheme, ValueError) as exc:
        print(f"trmfit {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = args.out or Path(".")
    threads = max(1, args.threads or 1)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "estimate":
            return cmd_estimate(cfg, out, threads, effective=dataclasses.asdict(cfg))
        return COMMAND_FUNCS[args.command](cfg, out)
    except (ConfigError, UnsupportedScheme) as exc:
        print(f"trmfit {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingColumn, ParseError) as exc:
        print(f"trmfit {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (TrmError, OSError, ValueError) as exc:
        print(f"trmfit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
