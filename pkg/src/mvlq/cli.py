"""Command-line experiment runner.

Every subcommand reads a configuration (the shipped scalar default unless
``--config`` is given), writes CSV artifacts to the output directory and a
``manifest-<command>.json`` that records the resolved configuration, seeds, package
versions and a timestamp.  The timestamp lives only in the manifest, so the
CSVs of two identical runs are byte-identical.

Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import verify
from .bsde import Driver, g_expectation_girsanov, solve_bsde_lsmc, stream_lq_costs
from .config import ConfigError, ExperimentConfig, load_config, resolved_dict
from .lq import FeedbackPolicy, QuadraticValue, value_function, value_sweep, write_sweep_csv
from .measures import EmpiricalMeasure, read_csv
from .mkvsde import SimulationError, generate_common_path, simulate_lq_closed_loop
from .riccati import RiccatiError, solve_riccati

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
SUBCOMMANDS = ("riccati", "value", "simulate", "cost", "gexp", "dpp", "verify-all", "hjb-residual")
HJB_TOL = 1e-6

EPILOG = """\
precedence (lowest to highest): config file, --set overrides, dedicated flags
(--seed, --out, --particles, --paths, --steps).

exit codes: 0 success, 1 failed check, 2 parse or validation error, 3 numerical failure.
"""


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, str)) else _fmt(v) for v in row])


def _initial(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.initial_file:
        try:
            mu = read_csv(cfg.initial_file)
        except OSError as exc:
            raise ConfigError(f"initial.file: {exc.strerror}: {cfg.initial_file}") from None
        except ValueError as exc:
            raise ConfigError(f"initial.file: {exc}") from None
        if mu.dim != cfg.model.n:
            raise ConfigError(f"initial.file has dimension {mu.dim}, model has n = {cfg.model.n}")
        return np.array(mu.samples)
    return verify.default_initial(cfg.model.n, cfg.sizes, cfg.seed, cfg.initial_loc, cfg.initial_scale)


# -- subcommands -------------------------------------------------------------

def cmd_riccati(cfg, out):
    ric = solve_riccati(cfg.model, cfg.riccati_steps)
    ric.to_csv(out / "riccati.csv")
    print(f"riccati: {ric.steps} RK4 steps, wrote riccati.csv")
    return EXIT_OK, ["riccati.csv"]


def _times(cfg) -> np.ndarray:
    return np.linspace(0.0, cfg.model.T, 11)


def cmd_value(cfg, out):
    qv = QuadraticValue(solve_riccati(cfg.model, cfg.riccati_steps))
    rows = value_sweep(qv, _times(cfg), EmpiricalMeasure(_initial(cfg)))
    write_sweep_csv(rows, out / "value.csv")
    print(f"value: V(0, mu) = {rows[0][1]:.10g}")
    return EXIT_OK, ["value.csv"]


def cmd_hjb(cfg, out):
    qv = QuadraticValue(solve_riccati(cfg.model, cfg.riccati_steps))
    rows = value_sweep(qv, _times(cfg), EmpiricalMeasure(_initial(cfg)))
    write_sweep_csv(rows, out / "hjb_residual.csv")
    worst = max(abs(r) / (1 + abs(v)) for t, v, r, _ in rows if np.isfinite(r))
    ok = worst <= HJB_TOL
    print(f"hjb-residual: max |residual| / (1 + |V|) = {worst:.3g} ({'ok' if ok else 'FAIL'})")
    return (EXIT_OK if ok else EXIT_CHECK), ["hjb_residual.csv"]


def cmd_simulate(cfg, out):
    ric = solve_riccati(cfg.model, cfg.riccati_steps)
    path = generate_common_path(0.0, cfg.model.T, cfg.sizes.steps, cfg.seed)
    ens = simulate_lq_closed_loop(cfg.model, ric, _initial(cfg), path)
    ens.to_csv(out / "ensemble.csv")
    path.to_csv(out / "path.csv")
    print(f"simulate: {ens.n_particles} particles, {path.steps} steps, wrote ensemble.csv and path.csv")
    return EXIT_OK, ["ensemble.csv", "path.csv"]


def cmd_cost(cfg, out):
    model = cfg.model
    qv = QuadraticValue(solve_riccati(model, cfg.riccati_steps))
    x0 = _initial(cfg)
    path = generate_common_path(0.0, model.T, cfg.sizes.steps, cfg.seed, n_paths=cfg.sizes.paths)
    costs = stream_lq_costs(model, FeedbackPolicy(qv), x0, path, halve=True).costs
    J, se = costs.mean(), costs.std(ddof=1) / np.sqrt(costs.size)
    V = value_function(qv, 0.0, EmpiricalMeasure(x0))
    _write_rows(out / "cost.csv", ["J", "stderr", "half_V", "N", "paths", "steps"],
                [(J, se, 0.5 * V, x0.shape[0], cfg.sizes.paths, cfg.sizes.steps)])
    print(f"cost: J = {J:.8g} +- {se:.3g} (V/2 = {0.5 * V:.8g})")
    return EXIT_OK, ["cost.csv"]


def cmd_gexp(cfg, out):
    beta, T = cfg.model.beta, cfg.model.T
    path = generate_common_path(0.0, T, cfg.sizes.comparison_steps, cfg.seed, n_paths=cfg.sizes.paths)
    W = path.brownian()
    est, se = g_expectation_girsanov(beta, W[:, -1], W[:, -1], T)
    sol = solve_bsde_lsmc(Driver.linear(beta), W[:, -1], W, path.grid, path.increments)
    sol.to_csv(out / "bsde.csv")
    _write_rows(out / "gexp.csv",
                ["beta", "T", "paths", "girsanov", "girsanov_stderr", "lsmc", "lsmc_stderr", "exact"],
                [(beta, T, path.n_paths, est, se, sol.y0, sol.y0_stderr, beta * T)])
    print(f"gexp: E_g[W_T] girsanov {est:.6g} +- {se:.2g}, lsmc {sol.y0:.6g} +- {sol.y0_stderr:.2g}, "
          f"exact {beta * T:.6g}")
    return EXIT_OK, ["gexp.csv", "bsde.csv"]


def _report(reports, out, stem):
    verify.write_reports_csv(reports, out / f"{stem}.csv")
    text = verify.summary_text(reports)
    (out / f"{stem}.txt").write_text(text)
    sys.stdout.write(text)
    return (EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK), [f"{stem}.csv", f"{stem}.txt"]


def cmd_dpp(cfg, out):
    model = cfg.model
    ric = solve_riccati(model, cfg.riccati_steps)
    x0 = _initial(cfg)
    reports = [verify.dpp_residual_check(model, ric, 0.0, model.T * f, x0, cfg.sizes,
                                         verify._subseed(cfg.seed, 3 + i))
               for i, f in enumerate((0.1, 0.25))]
    return _report(reports, out, "dpp")


def cmd_verify_all(cfg, out):
    initial = _initial(cfg) if cfg.initial_file else None
    reports = verify.run_all(cfg.model, cfg.sizes, cfg.seed, initial=initial, select=cfg.checks,
                             loc=cfg.initial_loc, scale=cfg.initial_scale)
    return _report(reports, out, "verify")


COMMANDS = {"riccati": cmd_riccati, "value": cmd_value, "simulate": cmd_simulate, "cost": cmd_cost,
            "gexp": cmd_gexp, "dpp": cmd_dpp, "verify-all": cmd_verify_all, "hjb-residual": cmd_hjb}


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (default: the shipped scalar model)")
    common.add_argument("--seed", type=int, help="base seed (overrides seeds.base)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--particles", type=int, help="particles per cloud (grids.particles)")
    common.add_argument("--paths", type=int, help="common-noise paths (grids.paths)")
    common.add_argument("--steps", type=int, help="SDE time steps (grids.sde_steps)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration entry; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log solver diagnostics")
    parser = argparse.ArgumentParser(prog="mvlq", description=__doc__.split("\n\n")[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {"riccati": "solve the Riccati system and export it",
             "value": "value function over a time sweep on the initial cloud",
             "simulate": "export one closed-loop particle ensemble",
             "cost": "recursive cost of the optimal feedback with stderr",
             "gexp": "g-expectation of W_T: Girsanov against least squares",
             "dpp": "dynamic programming residuals at delta = T/10 and T/4",
             "verify-all": "run the full check suite",
             "hjb-residual": "HJB residual sweep"}
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def _overrides(args) -> list[str]:
    items = list(args.set)
    flag_keys = (("seed", "seeds.base"), ("out", "output.dir"), ("particles", "grids.particles"),
                 ("paths", "grids.paths"), ("steps", "grids.sde_steps"))
    for attr, key in flag_keys:
        v = getattr(args, attr)
        if v is not None:
            items.append(f"{key}={json.dumps(v)}")
    return items


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("mvlq", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"mvlq: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        with np.errstate(over="raise", invalid="raise"):
            code, files = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"mvlq: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RiccatiError, SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"mvlq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                "config": resolved_dict(cfg), "seed": cfg.seed, "versions": _versions(),
                "outputs": files, "exit_code": code,
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    (out / f"manifest-{args.command}.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
