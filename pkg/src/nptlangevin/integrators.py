"""Time-stepping schemes for the log-volume Langevin NPT dynamics.

Four NPT schemes plus a constant-volume Langevin stepper:

* ``em`` -- Euler-Maruyama on (V, r, p); first order, may lose positivity;
* ``trotter`` -- exact OU thermostat + velocity-Verlet around an EM volume
  step with cell rescaling; first order;
* ``thirds`` -- EM with the volume-rescaling ratios evaluated at the
  one-third and two-thirds sub-volumes sharing refined Brownian increments;
  first order, consistent for finite and zero piston mass;
* ``splitting2`` -- symmetric splitting T F D B D F T with an exact OU
  thermostat and a predictor-corrector barostat in the log-volume; second
  order weak, volume positive by construction.

Every scheme consumes a fixed number of Gaussian draws per step, in a fixed
order, so trajectories are reproducible from the noise stream alone:

=============  =====================================================
em             1 (volume), then 3N (momenta)
trotter        3N (thermostat), 1 (volume), 3N (thermostat)
thirds         3 (volume sub-increments), then 3N (momenta)
splitting2     3N (thermostat), 1 (barostat), 3N (thermostat)
nvt            3N (thermostat), 3N (thermostat)
=============  =====================================================

Kernels are batched: positions/momenta (..., N, 3), log-volume (...).
First-order schemes return an ``ok`` mask; replicas whose volume went
nonpositive carry NaN state from that step on and must be excluded.
"""

from __future__ import annotations

import enum

import numpy as np

from .core import LambdaForm, NoiseStream, PhysicalParams, SystemState, wrap_array
from .forcefields import kinetic_energy, v_dh_dv_arrays, v_dh_dv_from

__all__ = [
    "SchemeKind",
    "StepFailure",
    "StepKernel",
    "thermostat_half",
    "kick_half",
    "drift_half",
    "barostat_full",
    "step_second_order",
    "step_em",
    "step_trotter",
    "step_thirds",
    "step_nvt",
    "make_stepper",
]


class SchemeKind(enum.Enum):
    EULER_MARUYAMA = "em"
    TROTTER = "trotter"
    THIRDS_CONSISTENT = "thirds"
    SECOND_ORDER_SPLITTING = "splitting2"
    CONSTANT_VOLUME_NVT = "nvt"


class StepFailure(RuntimeError):
    """A step produced a nonpositive volume or a non-finite state."""


# ---------------------------------------------------------------------------
# substep kernels (array form)

def _ou_coeffs(params: PhysicalParams, dt):
    """Decay and noise amplitude of the exact OU half step, memoized on the
    params instance per time step."""
    cache = getattr(params, "_ou_cache", None)
    if cache is not None and cache[0] == dt:
        return cache[1], cache[2]
    g = params.frictions_col
    decay = np.exp(-0.5 * dt * g)
    amp = np.sqrt((1.0 - np.exp(-dt * g)) * params.masses_col / params.beta)
    object.__setattr__(params, "_ou_cache", (dt, decay, amp))
    return decay, amp


def _ou_half(p, dt, params: PhysicalParams, z):
    """Exact OU thermostat over dt/2: decay exp(-dt*gamma/2), stationary
    variance reached as dt -> inf."""
    decay, amp = _ou_coeffs(params, dt)
    return decay * p + amp * z


def _barostat(r, p, eps, field, params, dt, z):
    """Predictor-corrector step of the additive-noise log-volume SDE plus
    the exact cell rescaling; reduced coordinates are unchanged."""
    eps = np.asarray(eps, dtype=float)
    lam = params.volume_coupling.lam
    inv_beta = 1.0 / params.beta
    amp = np.sqrt(2.0 * dt * lam * inv_beta)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        g0 = v_dh_dv_arrays(field, r, p, eps, params)
        drift0 = -lam * (g0 - inv_beta)
        eps_em = eps + drift0 * dt + amp * z
        scale_em = np.exp((eps_em - eps) / 3.0)[..., None, None]
        g1 = v_dh_dv_arrays(field, r * scale_em, p / scale_em, eps_em, params)
        drift1 = -lam * (g1 - inv_beta)
        eps1 = eps + 0.5 * (drift0 + drift1) * dt + amp * z
        scale = np.exp((eps1 - eps) / 3.0)[..., None, None]
        return r * scale, p / scale, eps1


def _volume_em(eps, vdhdv, params, dt, dW):
    """Euler-Maruyama update of V itself under a general friction model;
    dW is the Brownian increment (already scaled by sqrt(time))."""
    vol = np.exp(eps)
    model = params.volume_coupling
    gam = model.gamma(vol)
    dgdv = model.dgamma_dv(vol)
    dhdv = vdhdv / vol
    drift = -(dhdv + dgdv / (params.beta * gam)) / gam
    sigma = np.sqrt(2.0 / (params.beta * gam))
    return vol + drift * dt + sigma * dW, vol


# ---------------------------------------------------------------------------
# whole-step kernels; uniform signature, return (r, p, eps, ok, cache) where
# cache is (energy, forces, virial) at the returned positions or None

def _eval(field, r, eps):
    return field.evaluate_arrays(r, eps)


def _step_splitting2(r, p, eps, field, params, dt, noise, cache=None):
    eps = np.asarray(eps, dtype=float)
    m = params.masses_col
    zt0 = noise.normal(p.shape)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        p = _ou_half(p, dt, params, zt0)
        if cache is None:
            cache = _eval(field, r, eps)
        p = p + 0.5 * dt * cache[1]
        length = np.exp(np.asarray(eps) / 3.0)[..., None, None]
        r = wrap_array(r + 0.5 * dt * p / m, length)
        zb = noise.normal(np.shape(eps))
        r, p, eps = _barostat(r, p, eps, field, params, dt, zb)
        length = np.exp(np.asarray(eps) / 3.0)[..., None, None]
        r = wrap_array(r + 0.5 * dt * p / m, length)
        out = _eval(field, r, eps)
        p = p + 0.5 * dt * out[1]
        zt1 = noise.normal(p.shape)
        p = _ou_half(p, dt, params, zt1)
        ok = np.isfinite(eps) & np.isfinite(p.sum(axis=(-1, -2))) \
            & np.isfinite(r.sum(axis=(-1, -2)))
    return r, p, eps, ok, out


def _step_em(r, p, eps, field, params, dt, noise, cache=None):
    eps = np.asarray(eps, dtype=float)
    m = params.masses_col
    g = params.frictions_col
    if cache is None:
        cache = _eval(field, r, eps)
    vdhdv = v_dh_dv_from(cache[2], kinetic_energy(p, m), np.exp(eps), params)
    zv = noise.normal(np.shape(eps))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        v1, vol0 = _volume_em(eps, vdhdv, params, dt, np.sqrt(dt) * zv)
        ok = np.isfinite(v1) & (v1 > 0)
        v1 = np.where(ok, v1, np.nan)
        ratio = np.cbrt(v1 / vol0)[..., None, None]
        forces = cache[1]
        zp = noise.normal(p.shape)
        r1 = wrap_array(m**-1 * p * dt + r * ratio, np.cbrt(v1)[..., None, None])
        p1 = (forces * dt + p / ratio - g * p * dt
              + np.sqrt(2.0 * dt * g * m / params.beta) * zp)
        eps1 = np.log(v1)
    return r1, p1, eps1, ok, None


def _step_trotter(r, p, eps, field, params, dt, noise, cache=None):
    eps = np.asarray(eps, dtype=float)
    m = params.masses_col
    if cache is None:
        cache = _eval(field, r, eps)
    # dH/dV is taken at the step start, before the thermostat half
    vdhdv = v_dh_dv_from(cache[2], kinetic_energy(p, m), np.exp(eps), params)
    p = _ou_half(p, dt, params, noise.normal(p.shape))
    p = p + 0.5 * dt * cache[1]
    zv = noise.normal(np.shape(eps))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        v1, vol0 = _volume_em(eps, vdhdv, params, dt, np.sqrt(dt) * zv)
        ok = np.isfinite(v1) & (v1 > 0)
        v1 = np.where(ok, v1, np.nan)
        ratio = np.cbrt(v1 / vol0)[..., None, None]
        r = r + 0.5 * dt * p / m
        r = r * ratio
        p = p / ratio
        eps1 = np.log(v1)
        length = np.cbrt(v1)[..., None, None]
        r = wrap_array(r + 0.5 * dt * p / m, length)
        out = _eval(field, r, eps1)
        p = p + 0.5 * dt * out[1]
    p = _ou_half(p, dt, params, noise.normal(p.shape))
    return r, p, eps1, ok, out


def _step_thirds(r, p, eps, field, params, dt, noise, cache=None):
    eps = np.asarray(eps, dtype=float)
    m = params.masses_col
    g = params.frictions_col
    model = params.volume_coupling
    if cache is None:
        cache = _eval(field, r, eps)
    vdhdv = v_dh_dv_from(cache[2], kinetic_energy(p, m), np.exp(eps), params)
    z3 = noise.normal(np.shape(eps) + (3,))
    dw = np.sqrt(dt / 3.0) * z3
    w1 = dw[..., 0]
    w2 = w1 + dw[..., 1]
    w3 = w2 + dw[..., 2]
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        vol0 = np.exp(eps)
        gam = model.gamma(vol0)
        dgdv = model.dgamma_dv(vol0)
        drift = -(vdhdv / vol0 + dgdv / (params.beta * gam)) / gam
        sigma = np.sqrt(2.0 / (params.beta * gam))
        v_r = vol0 + drift * dt / 3.0 + sigma * w1
        v_p = vol0 + drift * 2.0 * dt / 3.0 + sigma * w2
        v1 = vol0 + drift * dt + sigma * w3
        ok = (np.isfinite(v1) & (v1 > 0) & (v_r > 0) & (v_p > 0))
        v1 = np.where(ok, v1, np.nan)
        dv = (v1 - vol0)[..., None, None]
        if cache is None:
            cache = _eval(field, r, eps)
        forces = cache[1]
        zp = noise.normal(p.shape)
        r1 = wrap_array(r + m**-1 * p * dt + r * dv / (3.0 * v_r[..., None, None]),
                        np.cbrt(v1)[..., None, None])
        p1 = (p + forces * dt - p * dv / (3.0 * v_p[..., None, None])
              - g * p * dt + np.sqrt(2.0 * dt * g * m / params.beta) * zp)
        eps1 = np.log(v1)
    return r1, p1, eps1, ok, None


def _step_nvt(r, p, eps, field, params, dt, noise, cache=None):
    eps = np.asarray(eps, dtype=float)
    m = params.masses_col
    p = _ou_half(p, dt, params, noise.normal(p.shape))
    if cache is None:
        cache = _eval(field, r, eps)
    p = p + 0.5 * dt * cache[1]
    length = np.exp(np.asarray(eps) / 3.0)[..., None, None]
    r = wrap_array(r + dt * p / m, length)
    out = _eval(field, r, eps)
    p = p + 0.5 * dt * out[1]
    p = _ou_half(p, dt, params, noise.normal(p.shape))
    ok = np.isfinite(np.sum(p, axis=(-1, -2)))
    return r, p, eps, ok, out


_STEPPERS = {
    SchemeKind.EULER_MARUYAMA: _step_em,
    SchemeKind.TROTTER: _step_trotter,
    SchemeKind.THIRDS_CONSISTENT: _step_thirds,
    SchemeKind.SECOND_ORDER_SPLITTING: _step_splitting2,
    SchemeKind.CONSTANT_VOLUME_NVT: _step_nvt,
}


def make_stepper(scheme: SchemeKind):
    """Array-form step function for one scheme."""
    scheme = SchemeKind(scheme)
    if scheme is SchemeKind.SECOND_ORDER_SPLITTING:
        # additive log-volume noise requires the lambda-form friction
        def checked(r, p, eps, field, params, dt, noise, cache=None):
            _require_lambda(params)
            return _step_splitting2(r, p, eps, field, params, dt, noise, cache)
        return checked
    return _STEPPERS[scheme]


def _require_lambda(params):
    if not isinstance(params.volume_coupling, LambdaForm):
        raise ValueError("this scheme requires the lambda-form volume friction")


# ---------------------------------------------------------------------------
# single-state operations

def thermostat_half(p, dt, gammas, masses, beta, noise: NoiseStream):
    """Exact OU half step on momenta; draws one Gaussian per component."""
    p = np.asarray(p, dtype=float)
    g = np.broadcast_to(np.atleast_1d(gammas)[:, None], p.shape) \
        if np.ndim(gammas) <= 1 else np.asarray(gammas)
    m = np.broadcast_to(np.atleast_1d(masses)[:, None], p.shape) \
        if np.ndim(masses) <= 1 else np.asarray(masses)
    z = noise.normal(p.shape)
    decay = np.exp(-0.5 * dt * g)
    amp = np.sqrt((1.0 - np.exp(-dt * g)) * m / beta)
    return decay * p + amp * z


def kick_half(state: SystemState, field, dt) -> SystemState:
    """p <- p + F(r) dt/2 at fixed positions and volume."""
    _, forces, _ = field.evaluate_arrays(state.positions, state.log_volume)
    if not np.isfinite(forces).all():
        raise StepFailure("non-finite forces")
    return SystemState(state.positions.copy(), state.momenta + 0.5 * dt * forces,
                       state.log_volume, state.time)


def drift_half(state: SystemState, dt, masses) -> SystemState:
    """r <- wrap(r + m^-1 p dt/2) at fixed momenta and volume."""
    m = np.atleast_1d(np.asarray(masses, dtype=float))[:, None]
    r = wrap_array(state.positions + 0.5 * dt * state.momenta / m,
                   state.box_length)
    return SystemState(r, state.momenta.copy(), state.log_volume, state.time)


def barostat_full(state: SystemState, field, params: PhysicalParams, dt,
                  noise: NoiseStream) -> SystemState:
    """Full barostat step: predictor-corrector in the log-volume sharing one
    Gaussian, then rescale r by L1/L0 and p by L0/L1."""
    _require_lambda(params)
    z = noise.normal(())
    r, p, eps = _barostat(state.positions, state.momenta,
                          np.float64(state.log_volume), field, params, dt, z)
    if not (np.isfinite(eps) and np.isfinite(r).all()):
        raise StepFailure(
            f"non-finite barostat drift at t={state.time} (V={state.volume})")
    return SystemState(r, p, float(eps), state.time)


def _run_single(stepfn, state, field, params, dt, noise):
    r, p, eps, ok, _ = stepfn(state.positions, state.momenta,
                              np.float64(state.log_volume), field, params,
                              dt, noise)
    if not bool(np.all(ok)):
        raise StepFailure(
            f"volume went nonpositive at t={state.time} (V={state.volume})")
    return SystemState(r, p, float(eps), state.time + dt)


def step_second_order(state, field, params, dt, noise) -> SystemState:
    """One step of the second-order splitting sampler (T F D B D F T)."""
    return _run_single(make_stepper(SchemeKind.SECOND_ORDER_SPLITTING),
                       state, field, params, dt, noise)


def step_em(state, field, params, dt, noise) -> SystemState:
    """One Euler-Maruyama step; raises StepFailure if V goes nonpositive."""
    return _run_single(_step_em, state, field, params, dt, noise)


def step_trotter(state, field, params, dt, noise) -> SystemState:
    return _run_single(_step_trotter, state, field, params, dt, noise)


def step_thirds(state, field, params, dt, noise) -> SystemState:
    return _run_single(_step_thirds, state, field, params, dt, noise)


def step_nvt(state, field, params, dt, noise) -> SystemState:
    """Constant-volume Langevin step (T F D F T); log-volume untouched."""
    return _run_single(_step_nvt, state, field, params, dt, noise)


class StepKernel:
    """One scheme bound to its parameters; owns one trajectory's noise."""

    def __init__(self, scheme, dt, params: PhysicalParams, field,
                 noise: NoiseStream):
        if not (np.isfinite(dt) and dt > 0):
            raise ValueError("dt must be positive and finite")
        self.scheme = SchemeKind(scheme)
        self.dt = float(dt)
        self.params = params
        self.field = field
        self.noise = noise
        self._step = make_stepper(self.scheme)

    def step(self, state: SystemState) -> SystemState:
        return _run_single(self._step, state, self.field, self.params,
                           self.dt, self.noise)
