#!/usr/bin/env python3
"""Virial-theorem residuals for the Lennard-Jones fluid at several target
pressures: E1 = |<P> - P0| / P0 and E2 = beta |<PV> - P0 <V> + 1/beta|."""

import argparse

from nptlangevin.harness import ExperimentConfig, run_trajectory
from nptlangevin.observables import virial_errors


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--beta", type=float, default=0.5)
    ap.add_argument("--p0", default="1.0", help="comma-separated list")
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--steps", type=int, default=1_000_000)
    ap.add_argument("--burn", type=int, default=100_000)
    ap.add_argument("--gamma", type=float, default=50.0)
    ap.add_argument("--lam", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'P0':>6} {'E1':>10} {'E2':>10} {'<P>':>10} {'<V>':>10} "
          f"{'<PV>':>10}")
    for p0 in [float(s) for s in args.p0.split(",")]:
        cfg = ExperimentConfig(scheme="splitting2", field="lj",
                               n_particles=args.n, beta=args.beta,
                               pressure=p0, dt=args.dt,
                               n_steps=args.burn + args.steps,
                               burn_in=args.burn, gamma=args.gamma,
                               lam=args.lam, seed=args.seed)
        s = run_trajectory(cfg)
        if s.failed_step is not None:
            print(f"{p0:6.2f}  step failure at {s.failed_step}")
            continue
        e1, e2 = virial_errors(s.pressure.mean(), s.pv.mean(),
                               s.volume.mean(), cfg.build_params())
        print(f"{p0:6.2f} {e1:10.4f} {e2:10.4f} {s.pressure.mean():10.4f} "
              f"{s.volume.mean():10.4f} {s.pv.mean():10.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
