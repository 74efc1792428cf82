#!/usr/bin/env python3
"""Build a thermodynamic-integration reference for the volume marginal of
the Lennard-Jones fluid and compare it to a sampled histogram.

Mean pressures from constant-volume runs on a volume grid are integrated
into a free-energy profile, exponentiated into a density, and compared
against the empirical volume histogram of a constant-pressure run."""

import argparse

import numpy as np

from nptlangevin.harness import (ExperimentConfig, distribution_distance,
                                 histogram, nvt_pressure_scan,
                                 run_trajectory, thermodynamic_integration)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--beta", type=float, default=0.5)
    ap.add_argument("--p0", type=float, default=1.0)
    ap.add_argument("--vmin", type=float, default=10.0)
    ap.add_argument("--vmax", type=float, default=60.0)
    ap.add_argument("--points", type=int, default=26)
    ap.add_argument("--nvt-dt", type=float, default=2e-3)
    ap.add_argument("--nvt-steps", type=int, default=400_000)
    ap.add_argument("--npt-dt", type=float, default=1e-4)
    ap.add_argument("--npt-steps", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV of both densities")
    args = ap.parse_args()

    grid = np.linspace(args.vmin, args.vmax, args.points)
    nvt = ExperimentConfig(field="lj", n_particles=args.n, beta=args.beta,
                           pressure=args.p0, dt=args.nvt_dt,
                           n_steps=args.nvt_steps,
                           burn_in=args.nvt_steps // 10, gamma=5.0,
                           seed=args.seed)
    p_hat = nvt_pressure_scan(nvt, grid)
    _, ti_dens = thermodynamic_integration(grid, p_hat,
                                           pressure_p0=args.p0,
                                           beta=args.beta)

    npt = ExperimentConfig(scheme="splitting2", field="lj",
                           n_particles=args.n, beta=args.beta,
                           pressure=args.p0, dt=args.npt_dt,
                           n_steps=args.npt_steps,
                           burn_in=args.npt_steps // 10, gamma=50.0,
                           lam=5.0, seed=args.seed)
    series = run_trajectory(npt)
    if series.failed_step is not None:
        print(f"step failure at step {series.failed_step}")
        return 2
    edges, dens = histogram(series.volume, bins=100)
    mids = 0.5 * (edges[:-1] + edges[1:])
    hist_on_grid = np.interp(grid, mids, dens, left=0.0, right=0.0)
    hist_on_grid = hist_on_grid / np.trapezoid(hist_on_grid, grid)

    l1 = distribution_distance(ti_dens, hist_on_grid, grid)
    print(f"{'V':>8} {'P_hat':>10} {'ti_density':>12} {'histogram':>12}")
    for v, p, a, b in zip(grid, p_hat, ti_dens, hist_on_grid):
        print(f"{v:8.2f} {p:10.4f} {a:12.5f} {b:12.5f}")
    print(f"L1 distance: {l1:.4f}")

    if args.out:
        np.savetxt(args.out,
                   np.column_stack([grid, p_hat, ti_dens, hist_on_grid]),
                   delimiter=",", header="V,P_hat,ti_density,histogram",
                   comments="")
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
