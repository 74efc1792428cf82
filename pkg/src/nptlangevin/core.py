"""State containers, physical parameters, periodic geometry and noise streams.

Conventions used throughout the package:

* the simulation box is cubic with side ``L = exp(eps/3)`` where ``eps`` is
  the log-volume; positions are stored wrapped into ``[0, L)``;
* arrays carry an optional leading batch shape, i.e. positions/momenta have
  shape ``(..., N, 3)`` and the log-volume has shape ``(...)``, so the same
  kernels drive both single trajectories and vectorized replica ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SystemState",
    "PhysicalParams",
    "LambdaForm",
    "CellRescaling",
    "CustomFriction",
    "NoiseStream",
    "minimum_image",
    "wrap_positions",
    "reduced_coordinates",
    "check_friction_derivative",
]


class GeometryError(ValueError):
    """Raised for non-finite positions, momenta or log-volume."""


@dataclass
class SystemState:
    """One replica: positions, momenta, log-volume and time.

    ``positions`` and ``momenta`` are (N, 3) float arrays. The box volume is
    ``exp(log_volume)`` and is positive by construction.
    """

    positions: np.ndarray
    momenta: np.ndarray
    log_volume: float
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.momenta = np.asarray(self.momenta, dtype=float)
        if self.positions.shape != self.momenta.shape:
            raise ValueError("positions and momenta must have the same shape")
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("expected (N, 3) arrays")
        if self.positions.shape[0] < 1:
            raise ValueError("need at least one particle")
        if not (np.isfinite(self.positions).all()
                and np.isfinite(self.momenta).all()
                and np.isfinite(self.log_volume)):
            raise GeometryError("non-finite geometry")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def volume(self) -> float:
        return float(np.exp(self.log_volume))

    @property
    def box_length(self) -> float:
        return float(np.exp(self.log_volume / 3.0))

    def copy(self) -> "SystemState":
        return SystemState(self.positions.copy(), self.momenta.copy(),
                           self.log_volume, self.time)


@dataclass
class LambdaForm:
    """Volume friction gamma(V) = 1 / (lam * V^2); gives additive log-volume noise.

    lam = 0 freezes the barostat (infinite friction) and is only meaningful
    for the splitting scheme, which uses lam directly rather than gamma(V).
    """

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    def gamma(self, volume):
        return 1.0 / (self.lam * volume**2)

    def dgamma_dv(self, volume):
        return -2.0 / (self.lam * volume**3)


@dataclass
class CellRescaling:
    """Volume friction gamma(V) = tau_p / (beta_T * V) (stochastic cell rescaling)."""

    tau_p: float
    beta_t: float

    def __post_init__(self):
        if self.tau_p <= 0 or self.beta_t <= 0:
            raise ValueError("tau_p and beta_t must be positive")

    def gamma(self, volume):
        return self.tau_p / (self.beta_t * volume)

    def dgamma_dv(self, volume):
        return -self.tau_p / (self.beta_t * volume**2)


@dataclass
class CustomFriction:
    """User-supplied gamma(V) and its derivative."""

    gamma_fn: Callable
    dgamma_dv_fn: Callable

    def gamma(self, volume):
        return self.gamma_fn(volume)

    def dgamma_dv(self, volume):
        return self.dgamma_dv_fn(volume)


FrictionModel = LambdaForm | CellRescaling | CustomFriction


def check_friction_derivative(model, volumes, rel_tol=1e-6):
    """Verify the supplied derivative against a central difference at each V."""
    for v in np.atleast_1d(volumes):
        h = 1e-6 * v
        fd = (model.gamma(v + h) - model.gamma(v - h)) / (2 * h)
        dg = model.dgamma_dv(v)
        if abs(fd - dg) > rel_tol * max(abs(dg), 1e-300):
            raise ValueError(
                f"friction derivative mismatch at V={v}: {dg} vs fd {fd}")


@dataclass
class PhysicalParams:
    """Thermodynamic targets and per-particle parameters.

    beta is the inverse temperature (k_B T0)^-1, pressure_p0 the external
    pressure. masses and particle_frictions are (N,) arrays.
    """

    beta: float
    pressure_p0: float
    masses: np.ndarray
    particle_frictions: np.ndarray
    volume_coupling: FrictionModel = field(default_factory=lambda: LambdaForm(1.0))

    def __post_init__(self):
        self.masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        self.particle_frictions = np.atleast_1d(
            np.asarray(self.particle_frictions, dtype=float))
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.pressure_p0 <= 0:
            raise ValueError("pressure_p0 must be positive")
        if (self.masses <= 0).any():
            raise ValueError("masses must be positive")
        if (self.particle_frictions < 0).any():
            raise ValueError("particle frictions must be nonnegative")

    @classmethod
    def uniform(cls, n_particles, beta, pressure_p0, mass=1.0, gamma=1.0,
                volume_coupling=None):
        """All particles identical; scalar gamma broadcast to every particle."""
        vc = volume_coupling if volume_coupling is not None else LambdaForm(1.0)
        return cls(beta=beta, pressure_p0=pressure_p0,
                   masses=np.full(n_particles, float(mass)),
                   particle_frictions=np.full(n_particles, float(gamma)),
                   volume_coupling=vc)

    # broadcastable (N, 1) views for (..., N, 3) arrays
    @property
    def masses_col(self) -> np.ndarray:
        return self.masses[:, None]

    @property
    def frictions_col(self) -> np.ndarray:
        return self.particle_frictions[:, None]


class NoiseStream:
    """Counter-based Gaussian stream keyed by (seed, stream_id).

    Distinct stream ids give statistically independent Philox substreams;
    identical keys reproduce the identical draw sequence bitwise.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape=()):
        """Standard Gaussian draws of the requested shape."""
        return self._gen.standard_normal(shape)


def minimum_image(displacement, box_length):
    """Map a displacement to its nearest periodic image, componentwise.

    Each output component lies in [-L/2, L/2); the result is the input plus
    L times the integer vector minimizing the norm (round-to-nearest).
    """
    d = np.asarray(displacement, dtype=float)
    if not np.isfinite(d).all() or not np.all(np.isfinite(box_length)):
        raise GeometryError("non-finite geometry")
    if np.any(np.asarray(box_length) <= 0):
        raise ValueError("box length must be positive")
    out = d - box_length * np.floor(d / box_length + 0.5)
    return out


def wrap_positions(state: SystemState) -> SystemState:
    """Wrap every coordinate into [0, L); pair displacements are unchanged."""
    length = state.box_length
    wrapped = state.positions - length * np.floor(state.positions / length)
    # floor can leave exactly L for coordinates within one ulp below a multiple
    wrapped[wrapped >= length] -= length
    return SystemState(wrapped, state.momenta.copy(), state.log_volume, state.time)


def wrap_array(positions, box_length):
    """Array form of :func:`wrap_positions`; broadcasts over batch dims."""
    wrapped = positions - box_length * np.floor(positions / box_length)
    return np.where(wrapped >= box_length, wrapped - box_length, wrapped)


def reduced_coordinates(state: SystemState):
    """Box-scaled coordinates s = V^(-1/3) r and momenta p_s = V^(1/3) p."""
    length = state.box_length
    return state.positions / length, state.momenta * length
