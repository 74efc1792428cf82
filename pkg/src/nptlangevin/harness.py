"""Experiment drivers: trajectory runs, replica ensembles for weak-order
measurement, exact/empirical density comparison and thermodynamic
integration references.

Replica ensembles are propagated in vectorized chunks; each chunk owns one
counter-based noise substream, so results are deterministic for a given
(config, seed) independent of thread count.
"""

from __future__ import annotations

import concurrent.futures
import math
import warnings
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np
from scipy.special import gammaln

from .core import (CellRescaling, LambdaForm, NoiseStream, PhysicalParams,
                   wrap_array)
from .forcefields import (FreeGas, LennardJones, QuarticBump, kinetic_energy,
                          pressure_arrays)
from .integrators import SchemeKind, make_stepper
from .observables import from_eval

__all__ = [
    "ExperimentConfig",
    "ObservableSeries",
    "TerminalEnsemble",
    "ConvergenceReport",
    "run_trajectory",
    "replicate_terminal",
    "convergence_study",
    "weak_order_fit",
    "exact_free_gas_density",
    "histogram",
    "thermodynamic_integration",
    "distribution_distance",
    "nvt_pressure_scan",
    "TEST_FUNCTIONS",
]

_CHUNK = 4096  # replicas per vectorized chunk; fixed so results are stable


@dataclass
class ExperimentConfig:
    """Declarative description of one run; defaults materialize on build."""

    scheme: str = "splitting2"
    field: str = "free"            # free | quartic | lj
    n_particles: int = 1
    beta: float = 1.0
    pressure: float = 1.0
    dt: float = 1e-3
    n_steps: int = 1000
    burn_in: int = 0
    sample_stride: int = 1
    n_replicas: int = 1
    seed: int = 0
    gamma: float = 1.0
    friction: str = "lambda"       # lambda | cell
    lam: float = 1.0
    tau_p: float = 1.0
    beta_t: float = 1.0
    mass: float = 1.0
    quartic_weight: float = 1.0
    rho0: float = 0.5
    initial_volume: float | None = None
    initial_momenta: str = "maxwell"   # maxwell | zero
    threads: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be at least 1")
        if self.burn_in < 0 or self.sample_stride < 1:
            raise ValueError("bad sampling spec")
        if self.start_volume() <= 0:
            raise ValueError("initial volume must be positive")
        if self.initial_momenta not in ("maxwell", "zero"):
            raise ValueError("initial_momenta must be 'maxwell' or 'zero'")
        if self.field not in ("free", "quartic", "lj"):
            raise ValueError(f"unknown field '{self.field}'")
        SchemeKind(self.scheme)

    def start_volume(self) -> float:
        if self.initial_volume is not None:
            return float(self.initial_volume)
        return self.n_particles / self.rho0

    def build_field(self):
        if self.field == "free":
            return FreeGas()
        if self.field == "quartic":
            return QuarticBump(self.quartic_weight)
        return LennardJones()

    def build_params(self) -> PhysicalParams:
        if self.friction == "lambda":
            vc = LambdaForm(self.lam)
        elif self.friction == "cell":
            vc = CellRescaling(self.tau_p, self.beta_t)
        else:
            raise ValueError(f"unknown friction form '{self.friction}'")
        return PhysicalParams.uniform(self.n_particles, self.beta,
                                      self.pressure, mass=self.mass,
                                      gamma=self.gamma, volume_coupling=vc)


def lattice_positions(n, length):
    """First n sites of a uniform cubic lattice filling the box."""
    per_side = math.ceil(n ** (1.0 / 3.0))
    spacing = length / per_side
    idx = np.arange(per_side)
    grid = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"),
                    axis=-1).reshape(-1, 3)
    return (grid[:n] + 0.5) * spacing


def initial_arrays(config: ExperimentConfig, noise: NoiseStream, batch=()):
    """Lattice positions plus Maxwell-Boltzmann (or zero) momenta."""
    vol = config.start_volume()
    eps = np.full(batch, math.log(vol))
    r = np.broadcast_to(lattice_positions(config.n_particles, vol ** (1.0 / 3.0)),
                        batch + (config.n_particles, 3)).copy()
    if config.initial_momenta == "maxwell":
        p = np.sqrt(config.mass / config.beta) * noise.normal(r.shape)
    else:
        p = np.zeros_like(r)
    return r, p, eps


@dataclass
class ObservableSeries:
    """Sampled observable columns of one trajectory."""

    time: np.ndarray
    volume: np.ndarray
    density: np.ndarray
    pressure: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    enthalpy: np.ndarray
    pv: np.ndarray
    step_index: np.ndarray
    failed_step: int | None = None

    COLUMNS = ("step_index", "time", "volume", "density", "pressure",
               "kinetic", "potential", "enthalpy", "pv")

    def __len__(self):
        return len(self.time)


def run_trajectory(config: ExperimentConfig) -> ObservableSeries:
    """Advance one trajectory, sampling every stride after burn-in.

    A nonpositive-volume step of a first-order scheme stops the run; the
    failing step index is reported on the returned series rather than
    raised, so partial statistics stay available.
    """
    field = config.build_field()
    params = config.build_params()
    stepfn = make_stepper(config.scheme)
    noise = NoiseStream(config.seed, stream_id=0)
    r, p, eps = initial_arrays(config, noise)
    eps = np.float64(eps)
    n = config.n_particles
    cols = {name: [] for name in
            ("time", "volume", "pressure", "kinetic", "potential", "pv")}
    steps_sampled = []
    cache = None
    failed_step = None
    for i in range(1, config.n_steps + 1):
        r, p, eps, ok, cache = stepfn(r, p, eps, field, params, config.dt,
                                      noise, cache)
        if not bool(np.all(ok)):
            failed_step = i
            break
        if i > config.burn_in and (i - config.burn_in) % config.sample_stride == 0:
            if cache is None:
                energy, _, virial = field.evaluate_arrays(r, eps)
            else:
                energy, _, virial = cache
            rec = from_eval(i * config.dt, float(np.exp(eps)), float(energy),
                            float(virial),
                            float(kinetic_energy(p, params.masses_col)),
                            n, params)
            steps_sampled.append(i)
            cols["time"].append(rec.time)
            cols["volume"].append(rec.volume)
            cols["pressure"].append(rec.pressure)
            cols["kinetic"].append(rec.kinetic)
            cols["potential"].append(rec.potential)
            cols["pv"].append(rec.pv)
    vol = np.array(cols["volume"])
    pres = np.array(cols["pressure"])
    kin = np.array(cols["kinetic"])
    pot = np.array(cols["potential"])
    return ObservableSeries(
        time=np.array(cols["time"]), volume=vol, density=n / vol,
        pressure=pres, kinetic=kin, potential=pot,
        enthalpy=pot + kin + params.pressure_p0 * vol, pv=np.array(cols["pv"]),
        step_index=np.array(steps_sampled, dtype=int), failed_step=failed_step)


# ---------------------------------------------------------------------------
# terminal-time replica ensembles

def _phi_volume(r, p, eps, field, params):
    return np.exp(eps)


def _phi_volume_sq(r, p, eps, field, params):
    return np.exp(2.0 * eps)


def _phi_exp_neg_sqrt_v(r, p, eps, field, params):
    return np.exp(-np.sqrt(np.exp(eps)))


def _phi_pressure(r, p, eps, field, params):
    return pressure_arrays(field, r, p, eps, params)


def _phi_density(r, p, eps, field, params):
    return r.shape[-2] / np.exp(eps)


def _phi_sqrt_v_exp(r, p, eps, field, params):
    sq = np.sqrt(np.exp(eps))
    return sq * np.exp(-sq)


TEST_FUNCTIONS = {
    "V": _phi_volume,
    "V2": _phi_volume_sq,
    "exp_neg_sqrt_V": _phi_exp_neg_sqrt_v,
    "P": _phi_pressure,
    "rho": _phi_density,
    "sqrt_V_exp_neg_sqrt_V": _phi_sqrt_v_exp,
}


@dataclass
class TerminalEnsemble:
    """Ensemble means of test functions at the terminal time."""

    means: dict
    std_errors: dict
    n_replicas: int
    n_failed: int


def _draw_pattern(scheme, batch, n):
    """Shapes of the Gaussian draws one step consumes, in draw order."""
    pq = batch + (n, 3)
    return {
        SchemeKind.EULER_MARUYAMA: [batch, pq],
        SchemeKind.TROTTER: [pq, batch, pq],
        SchemeKind.THIRDS_CONSISTENT: [batch + (3,), pq],
        SchemeKind.SECOND_ORDER_SPLITTING: [pq, batch, pq],
        SchemeKind.CONSTANT_VOLUME_NVT: [pq, pq],
    }[SchemeKind(scheme)]


class _BlockSumNoise:
    """Serves one scheme-step of Gaussians as normalized block sums of
    `block` fine steps drawn from the wrapped stream.

    Each served draw is exactly N(0, 1), so coarse-step trajectories keep
    their distribution, while sharing the underlying fine-resolution draw
    sequence with a reference run couples the two paths (common random
    numbers) and shrinks the variance of weak-error differences.
    """

    def __init__(self, inner, block, pattern):
        self.inner = inner
        self.block = int(block)
        self.pattern = [tuple(s) for s in pattern]
        self._queue = []

    def normal(self, shape=()):
        shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
        if not self._queue:
            sums = [np.zeros(s) for s in self.pattern]
            for _ in range(self.block):
                for acc, s in zip(sums, self.pattern):
                    acc += self.inner.normal(s)
            scale = 1.0 / np.sqrt(self.block)
            self._queue = [acc * scale for acc in sums]
        out = self._queue.pop(0)
        if out.shape != shape:
            raise RuntimeError("draw request does not match scheme pattern")
        return out


def _run_chunk(config, field, params, stepfn, phi_fns, stream_id, size,
               block=1):
    """Propagate one chunk; returns full-size value arrays (NaN where the
    replica died) and the survivor mask."""
    init_noise = NoiseStream(config.seed, stream_id=stream_id)
    r, p, eps = initial_arrays(config, init_noise, batch=(size,))
    if block > 1:
        pattern = _draw_pattern(config.scheme, (size,), config.n_particles)
        noise = _BlockSumNoise(init_noise, block, pattern)
    else:
        noise = init_noise
    alive = np.ones(size, dtype=bool)
    cache = None
    for _ in range(config.n_steps):
        r, p, eps, ok, cache = stepfn(r, p, eps, field, params, config.dt,
                                      noise, cache)
        alive &= np.asarray(ok)
    values = {}
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for name, fn in phi_fns.items():
            vals = np.asarray(fn(r, p, eps, field, params), dtype=float)
            values[name] = np.where(alive, vals, np.nan)
    return values, alive


def replicate_terminal(config: ExperimentConfig, phis,
                       stream_offset=1) -> TerminalEnsemble:
    """Propagate n_replicas independent replicas to T = n_steps * dt and
    average the named test functions over the survivors.

    Replicas run in fixed-size chunks; chunk c uses substream
    ``stream_offset + c``. Failed replicas (nonpositive volume under the
    first-order schemes) are excluded and counted.
    """
    phi_fns = {name: TEST_FUNCTIONS[name] if isinstance(name, str) else name
               for name in phis}
    field = config.build_field()
    params = config.build_params()
    stepfn = make_stepper(config.scheme)
    k = config.n_replicas
    sizes = [_CHUNK] * (k // _CHUNK)
    if k % _CHUNK:
        sizes.append(k % _CHUNK)
    jobs = [(stream_offset + c, size) for c, size in enumerate(sizes)]

    def run(job):
        sid, size = job
        return _run_chunk(config, field, params, stepfn, phi_fns, sid, size)

    if config.threads > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    alive = np.concatenate([r[1] for r in results])
    n_failed = int(k - alive.sum())
    means, errs = {}, {}
    for name in phi_fns:
        vals = np.concatenate([r[0][name] for r in results])[alive]
        means[name] = float(vals.mean()) if vals.size else float("nan")
        errs[name] = (float(vals.std(ddof=1) / np.sqrt(vals.size))
                      if vals.size > 1 else float("nan"))
    return TerminalEnsemble(means=means, std_errors=errs, n_replicas=k,
                            n_failed=n_failed)


@dataclass
class ConvergenceReport:
    """Relative weak errors by time-step level plus fitted slopes."""

    levels: list
    dts: np.ndarray
    errors: dict          # phi name -> error per level
    slopes: dict          # phi name -> fitted slope
    residuals: dict
    ref_level: int
    ref_means: dict
    failed: dict          # level -> replica failure count


def convergence_study(config: ExperimentConfig, levels, ref_level, phis,
                      t_end=1.0, stream_offset=1) -> ConvergenceReport:
    """Weak-error sweep over dt = 2^-level against a fine-step reference of
    the same scheme with the same replica count.

    Every level is driven by the reference's fine-resolution Gaussian
    sequence through normalized block sums (common random numbers), so the
    weak-error differences are estimated with strongly coupled paths;
    per-level marginals, and hence the measured errors, are unchanged in
    expectation. Replicas whose path failed at either resolution are
    dropped from that level's difference."""
    levels = list(levels)
    if ref_level <= max(levels):
        raise ValueError("reference level must be finer than all test levels")
    phi_fns = {name: TEST_FUNCTIONS[name] if isinstance(name, str) else name
               for name in phis}
    field = config.build_field()
    params = config.build_params()
    stepfn = make_stepper(config.scheme)
    k = config.n_replicas
    sizes = [_CHUNK] * (k // _CHUNK)
    if k % _CHUNK:
        sizes.append(k % _CHUNK)

    def level_cfg(level):
        dt = 2.0 ** (-level)
        return replace(config, dt=dt, n_steps=round(t_end * 2.0 ** level))

    def run_chunk_set(chunk_index, size):
        sid = stream_offset + chunk_index
        ref_cfg = level_cfg(ref_level)
        out = {"ref": _run_chunk(ref_cfg, field, params, stepfn, phi_fns,
                                 sid, size)}
        for level in levels:
            block = 2 ** (ref_level - level)
            out[level] = _run_chunk(level_cfg(level), field, params, stepfn,
                                    phi_fns, sid, size, block=block)
        return out

    jobs = list(enumerate(sizes))
    if config.threads > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(config.threads) as pool:
            chunk_sets = list(pool.map(lambda j: run_chunk_set(*j), jobs))
    else:
        chunk_sets = [run_chunk_set(*j) for j in jobs]

    def gather(key, name):
        return np.concatenate([cs[key][0][name] for cs in chunk_sets])

    ref_alive = np.concatenate([cs["ref"][1] for cs in chunk_sets])
    ref_means = {name: float(np.nanmean(gather("ref", name)))
                 for name in phi_fns}
    errors = {name: [] for name in phi_fns}
    failed = {}
    for level in levels:
        alive = np.concatenate([cs[level][1] for cs in chunk_sets])
        failed[level] = int(k - alive.sum())
        both = alive & ref_alive
        for name in phi_fns:
            diff = gather(level, name)[both] - gather("ref", name)[both]
            errors[name].append(abs(float(diff.mean()))
                                / abs(ref_means[name]))
    slopes, residuals = {}, {}
    dts = 2.0 ** (-np.array(levels, dtype=float))
    for name in phi_fns:
        slopes[name], residuals[name] = weak_order_fit(dts, errors[name])
        errors[name] = np.array(errors[name])
    return ConvergenceReport(levels=list(levels), dts=dts, errors=errors,
                             slopes=slopes, residuals=residuals,
                             ref_level=ref_level, ref_means=ref_means,
                             failed=failed)


def weak_order_fit(dts, errors):
    """Least-squares slope of log2(error) against log2(dt).

    Nonpositive or non-finite error levels are excluded with a warning;
    at least two usable levels are required.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    good = np.isfinite(errors) & (errors > 0)
    if not good.all():
        warnings.warn("excluding levels with nonpositive error from slope fit")
    if good.sum() < 2:
        raise ValueError("need at least two positive error levels")
    x = np.log2(dts[good])
    y = np.log2(errors[good])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), resid


# ---------------------------------------------------------------------------
# densities, histograms and thermodynamic integration

def exact_free_gas_density(v, n_particles, beta, pressure_p0):
    """Stationary volume marginal of the free gas:
    (beta P0)^(N+1) / N! * V^N exp(-beta P0 V), evaluated in log space."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("volume must be positive")
    n = n_particles
    bp = beta * pressure_p0
    logpdf = (n + 1) * np.log(bp) - gammaln(n + 1) + n * np.log(v) - bp * v
    return np.exp(logpdf)


def histogram(samples, bins=100, value_range=None):
    """Normalized empirical density; returns (bin_edges, density)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("no samples to bin")
    density, edges = np.histogram(samples, bins=bins, range=value_range,
                                  density=True)
    return edges, density


def histogram_l1_distance(samples, density_fn, bins=100):
    """L1 distance between a histogram of samples and an exact density,
    comparing bin masses (exact mass via fine midpoint quadrature)."""
    edges, emp = histogram(samples, bins=bins)
    widths = np.diff(edges)
    exact_mass = np.empty(len(widths))
    for i in range(len(widths)):
        xs = np.linspace(edges[i], edges[i + 1], 33)
        exact_mass[i] = np.trapezoid(density_fn(xs), xs)
    return float(np.sum(np.abs(emp * widths - exact_mass)) + (1.0 - exact_mass.sum()))


def thermodynamic_integration(v_grid, p_hat, pressure_p0, beta):
    """Free-energy profile from mean NVT pressures and the induced reference
    volume density.

    F(V + dV) = F(V) - 0.5 [P(V) + P(V + dV) - 2 P0] dV with F(V0) = 0;
    the density is proportional to exp(-beta F), trapezoid-normalized on
    the grid.
    """
    v_grid = np.asarray(v_grid, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if v_grid.ndim != 1 or np.any(np.diff(v_grid) <= 0):
        raise ValueError("volume grid must be strictly increasing")
    if p_hat.shape != v_grid.shape:
        raise ValueError("one pressure estimate per grid point required")
    dv = np.diff(v_grid)
    increments = -0.5 * (p_hat[:-1] + p_hat[1:] - 2.0 * pressure_p0) * dv
    f_hat = np.concatenate([[0.0], np.cumsum(increments)])
    log_density = -beta * f_hat
    log_density -= log_density.max()
    density = np.exp(log_density)
    density /= np.trapezoid(density, v_grid)
    return f_hat, density


def distribution_distance(density_a, density_b, grid):
    """L1 distance between two densities on a common grid (trapezoid rule)."""
    a = np.asarray(density_a, dtype=float)
    b = np.asarray(density_b, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if a.shape != grid.shape or b.shape != grid.shape:
        raise ValueError("grid mismatch")
    return float(np.trapezoid(np.abs(a - b), grid))


def nvt_pressure_scan(config: ExperimentConfig, v_grid, stream_offset=500_000):
    """Mean instantaneous pressure from one constant-volume Langevin run per
    grid volume; all volumes are propagated as one vectorized batch."""
    v_grid = np.asarray(v_grid, dtype=float)
    cfg = replace(config, scheme="nvt")
    field = cfg.build_field()
    params = cfg.build_params()
    stepfn = make_stepper("nvt")
    noise = NoiseStream(cfg.seed, stream_id=stream_offset)
    n_vol = len(v_grid)
    eps = np.log(v_grid)
    r = np.stack([np.broadcast_to(
        lattice_positions(cfg.n_particles, v ** (1.0 / 3.0)),
        (cfg.n_particles, 3)) for v in v_grid])
    if cfg.initial_momenta == "maxwell":
        p = np.sqrt(cfg.mass / cfg.beta) * noise.normal(r.shape)
    else:
        p = np.zeros_like(r)
    sums = np.zeros(n_vol)
    count = 0
    cache = None
    for i in range(1, cfg.n_steps + 1):
        r, p, eps, ok, cache = stepfn(r, p, eps, field, params, cfg.dt,
                                      noise, cache)
        if i > cfg.burn_in and (i - cfg.burn_in) % cfg.sample_stride == 0:
            _, _, virial = cache
            kin = kinetic_energy(p, params.masses_col)
            sums += (2.0 * kin / 3.0 - virial / 3.0) / np.exp(eps)
            count += 1
    return sums / count
