"""Command-line surface: TOML configs in, CSV tables and a JSON run
manifest out.

Subcommands:

* ``simulate`` -- one trajectory, sampled observables as CSV;
* ``convergence`` -- weak-error sweep over dt levels with fitted slopes;
* ``virial`` -- mean-pressure identity errors E1/E2 over a list of target
  pressures;
* ``histogram`` -- empirical volume density of one trajectory, optionally
  next to the exact free-gas marginal;
* ``ti`` -- constant-volume runs on a volume grid, thermodynamic
  integration to a free-energy profile and reference density;
* ``exact-density`` -- tabulated free-gas volume marginal.

Floats are serialized with 17 significant digits so every CSV re-parses to
bit-identical doubles. Each run writes ``manifest.json`` with the fully
resolved config, the seed actually used, package version, failure counters
and wall time.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .harness import (ExperimentConfig, convergence_study,
                      exact_free_gas_density, histogram, nvt_pressure_scan,
                      run_trajectory, thermodynamic_integration)
from .observables import virial_errors

try:
    from importlib.metadata import version as _pkg_version
    VERSION = _pkg_version("nptlangevin")
except Exception:
    VERSION = "0.1.0"

_CONFIG_KEYS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


class ConfigError(ValueError):
    pass


def _flatten(table, prefix=""):
    out = {}
    for key, value in table.items():
        if isinstance(value, dict):
            out.update(_flatten(value))
        else:
            out[key] = value
    return out


def parse_config(path=None, overrides=None, env=None) -> ExperimentConfig:
    """Resolve a config from file, flag overrides and the environment.

    Precedence: flag > config file > NPT_SEED (seed only) > defaults.
    Unknown keys are rejected.
    """
    env = os.environ if env is None else env
    values = {}
    if "NPT_SEED" in env:
        try:
            values["seed"] = int(env["NPT_SEED"])
        except ValueError:
            raise ConfigError("NPT_SEED must be an integer")
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}")
        values.update(_flatten(raw))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in values.items():
        want = _CONFIG_KEYS[key].type
        if want in ("int", int) and isinstance(value, bool):
            raise ConfigError(f"type mismatch for '{key}'")
        if want in ("int", int) and not isinstance(value, int):
            raise ConfigError(f"type mismatch for '{key}': expected integer")
        if want in ("float", float) and not isinstance(value, (int, float)):
            raise ConfigError(f"type mismatch for '{key}': expected number")
        if want == "str" and not isinstance(value, str):
            raise ConfigError(f"type mismatch for '{key}': expected string")
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{x:.17g}"
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _write_manifest(out_dir, config, failures, wall_ms, outputs):
    manifest = {
        "config": dataclasses.asdict(config),
        "seed": config.seed,
        "version": VERSION,
        "failures": failures,
        "wall_ms": wall_ms,
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_manifest_config(path) -> ExperimentConfig:
    """Re-parse a manifest's resolved config (round-trip identity)."""
    with open(path) as fh:
        manifest = json.load(fh)
    return ExperimentConfig(**manifest["config"])


# ---------------------------------------------------------------------------
# subcommand bodies; each returns (exit_status, failures dict, output paths)

def _cmd_simulate(config, args, out_dir):
    series = run_trajectory(config)
    rows = zip(series.step_index, series.time, series.volume, series.density,
               series.pressure, series.kinetic, series.potential,
               series.enthalpy, series.pv)
    path = os.path.join(out_dir, "simulate.csv")
    _write_csv(path, ["step", "time", "V", "rho", "P", "K", "U", "H", "PV"],
               rows)
    failures = {"failed_step": series.failed_step, "n_failed_replicas": 0}
    return (2 if series.failed_step is not None else 0), failures, [path]


def _cmd_convergence(config, args, out_dir):
    levels = [int(x) for x in args.levels.split(",")]
    phis = args.phis.split(",")
    report = convergence_study(config, levels, args.ref_level, phis,
                               t_end=args.t_end)
    header = ["level", "dt"] + [f"err_{name}" for name in phis]
    rows = [[lvl, report.dts[i]] + [report.errors[name][i] for name in phis]
            for i, lvl in enumerate(levels)]
    rows.append(["slope", float("nan")] + [report.slopes[name] for name in phis])
    path = os.path.join(out_dir, "convergence.csv")
    _write_csv(path, header, rows)
    failures = {"failed_step": None,
                "n_failed_replicas": int(sum(report.failed.values()))}
    return 0, failures, [path]


def _cmd_virial(config, args, out_dir):
    p0_list = [float(x) for x in args.p0.split(",")]
    rows = []
    failed_step = None
    for p0 in p0_list:
        cfg = dataclasses.replace(config, pressure=p0)
        series = run_trajectory(cfg)
        if series.failed_step is not None:
            failed_step = series.failed_step
        e1, e2 = virial_errors(series.pressure.mean(), series.pv.mean(),
                               series.volume.mean(), cfg.build_params())
        rows.append([p0, e1, e2, series.pressure.mean(), series.volume.mean(),
                     series.pv.mean()])
    path = os.path.join(out_dir, "virial.csv")
    _write_csv(path, ["P0", "E1", "E2", "mean_P", "mean_V", "mean_PV"], rows)
    failures = {"failed_step": failed_step, "n_failed_replicas": 0}
    return (2 if failed_step is not None else 0), failures, [path]


def _cmd_histogram(config, args, out_dir):
    series = run_trajectory(config)
    edges, density = histogram(series.volume, bins=args.bins)
    mids = 0.5 * (edges[:-1] + edges[1:])
    header = ["bin_left", "bin_right", "density"]
    cols = [edges[:-1], edges[1:], density]
    if config.field == "free" and args.exact:
        header.append("exact")
        cols.append(exact_free_gas_density(mids, config.n_particles,
                                           config.beta, config.pressure))
    path = os.path.join(out_dir, "histogram.csv")
    _write_csv(path, header, zip(*cols))
    failures = {"failed_step": series.failed_step, "n_failed_replicas": 0}
    return (2 if series.failed_step is not None else 0), failures, [path]


def _volume_grid(args):
    if args.vmax <= args.vmin or args.vmin <= 0 or args.points < 2:
        raise ConfigError("need 0 < vmin < vmax and at least two grid points")
    return np.linspace(args.vmin, args.vmax, args.points)


def _cmd_ti(config, args, out_dir):
    v_grid = _volume_grid(args)
    p_hat = nvt_pressure_scan(config, v_grid)
    f_hat, density = thermodynamic_integration(v_grid, p_hat, config.pressure,
                                               config.beta)
    path = os.path.join(out_dir, "ti.csv")
    _write_csv(path, ["V", "P_hat", "F_hat", "density"],
               zip(v_grid, p_hat, f_hat, density))
    return 0, {"failed_step": None, "n_failed_replicas": 0}, [path]


def _cmd_exact_density(config, args, out_dir):
    v_grid = _volume_grid(args)
    dens = exact_free_gas_density(v_grid, config.n_particles, config.beta,
                                  config.pressure)
    path = os.path.join(out_dir, "exact_density.csv")
    _write_csv(path, ["V", "density"], zip(v_grid, dens))
    return 0, {"failed_step": None, "n_failed_replicas": 0}, [path]


_COMMANDS = {
    "simulate": _cmd_simulate,
    "convergence": _cmd_convergence,
    "virial": _cmd_virial,
    "histogram": _cmd_histogram,
    "ti": _cmd_ti,
    "exact-density": _cmd_exact_density,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nptlangevin",
        description="NPT Langevin samplers for periodic particle systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="RNG seed (overrides file)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--scheme",
                       choices=["em", "trotter", "thirds", "splitting2"],
                       help="integration scheme (default splitting2)")
        p.add_argument("--field", choices=["free", "quartic", "lj"],
                       help="force field (default free)")
        p.add_argument("--threads", type=int, help="replica worker threads")
        if name == "convergence":
            p.add_argument("--levels", default="5,6,7,8,9",
                           help="comma list of dt levels (dt = 2^-level)")
            p.add_argument("--ref-level", type=int, default=12)
            p.add_argument("--t-end", type=float, default=1.0)
            p.add_argument("--phis", default="V,V2,exp_neg_sqrt_V")
        if name == "virial":
            p.add_argument("--p0", default="0.25,0.5,1.0,2.0,4.0,8.0",
                           help="comma list of target pressures")
        if name == "histogram":
            p.add_argument("--bins", type=int, default=100)
            p.add_argument("--exact", action="store_true",
                           help="add the exact free-gas density column")
        if name in ("ti", "exact-density"):
            p.add_argument("--vmin", type=float, default=0.05)
            p.add_argument("--vmax", type=float, default=10.0)
            p.add_argument("--points", type=int, default=100)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "scheme": args.scheme,
                 "field": args.field, "threads": args.threads}
    start = time.perf_counter()
    try:
        config = parse_config(args.config, overrides)
        out_dir = args.out
        os.makedirs(out_dir, exist_ok=True)
        status, failures, outputs = _COMMANDS[args.command](config, args,
                                                           out_dir)
    except (ConfigError, ValueError) as exc:
        json.dump({"error": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    wall_ms = (time.perf_counter() - start) * 1e3
    manifest_path = _write_manifest(out_dir, config, failures, wall_ms,
                                    outputs)
    if status != 0:
        json.dump({"error": "step failure",
                   "failed_step": failures.get("failed_step")}, sys.stderr)
        sys.stderr.write("\n")
    else:
        sys.stdout.write(manifest_path + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
