#!/usr/bin/env python3
"""Measure the weak order of a scheme on terminal-time observables.

Runs coupled replica ensembles at a ladder of step sizes dt = 2^-level
against a fine reference level and fits log2(error) vs log2(dt)."""

import argparse

from nptlangevin.harness import ExperimentConfig, convergence_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scheme", default="splitting2")
    ap.add_argument("--field", default="free")
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--p0", type=float, default=1.0)
    ap.add_argument("--replicas", type=int, default=10_000)
    ap.add_argument("--levels", default="5,6,7,8,9")
    ap.add_argument("--ref-level", type=int, default=11)
    ap.add_argument("--t-end", type=float, default=1.0)
    ap.add_argument("--phis", default="V,V2,exp_neg_sqrt_V")
    ap.add_argument("--gamma", type=float, default=2.5)
    ap.add_argument("--lam", type=float, default=3.5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig(scheme=args.scheme, field=args.field,
                           n_particles=args.n, beta=args.beta,
                           pressure=args.p0, n_replicas=args.replicas,
                           gamma=args.gamma, lam=args.lam, seed=args.seed,
                           threads=args.threads)
    levels = [int(s) for s in args.levels.split(",")]
    phis = args.phis.split(",")
    report = convergence_study(cfg, levels, ref_level=args.ref_level,
                               phis=phis, t_end=args.t_end)

    header = "level      dt  " + "".join(f"{p:>16}" for p in phis)
    print(header)
    for i, (lev, dt) in enumerate(zip(report.levels, report.dts)):
        row = "".join(f"{report.errors[p][i]:16.3e}" for p in phis)
        print(f"{lev:5d}  {dt:.2e}{row}")
    slopes = "".join(f"{report.slopes[p]:16.3f}" for p in phis)
    print(f"slope          {slopes}")
    print(f"failed replicas: {report.failed}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
