"""Scalar observables and streaming statistics over trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PhysicalParams, SystemState
from .forcefields import kinetic_energy

__all__ = ["ObservableRecord", "StreamingMoments", "record", "virial_errors"]


@dataclass
class ObservableRecord:
    """One sample: volume, density, pressure, energies, enthalpy and PV."""

    time: float
    volume: float
    density: float
    pressure: float
    kinetic: float
    potential: float
    enthalpy: float
    pv: float

    FIELDS = ("time", "volume", "density", "pressure", "kinetic",
              "potential", "enthalpy", "pv")

    def as_tuple(self):
        return tuple(getattr(self, f) for f in self.FIELDS)


def record(state: SystemState, field, params: PhysicalParams) -> ObservableRecord:
    """All observables from a single force-field evaluation."""
    energy, _, virial = field.evaluate_arrays(state.positions, state.log_volume)
    return from_eval(state.time, float(np.exp(state.log_volume)),
                     float(energy), float(virial),
                     float(kinetic_energy(state.momenta, params.masses_col)),
                     state.n_particles, params)


def from_eval(time, volume, energy, virial, kinetic, n_particles,
              params: PhysicalParams) -> ObservableRecord:
    """Assemble a record from precomputed energy/virial/kinetic values."""
    pressure = (2.0 * kinetic / 3.0 - virial / 3.0) / volume
    enthalpy = energy + kinetic + params.pressure_p0 * volume
    return ObservableRecord(time=time, volume=volume,
                            density=n_particles / volume, pressure=pressure,
                            kinetic=kinetic, potential=energy,
                            enthalpy=enthalpy, pv=pressure * volume)


class StreamingMoments:
    """Single-pass mean and central second moment (Welford), mergeable."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    def push_many(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.size == 0:
            return
        other = StreamingMoments()
        other.count = xs.size
        other.mean = float(xs.mean())
        other._m2 = float(((xs - other.mean) ** 2).sum())
        self.merge(other)

    def merge(self, other: "StreamingMoments"):
        """Combine two accumulators (Chan et al. pairwise update)."""
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self._m2 = other.count, other.mean, other._m2
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self._m2 += other._m2 + delta**2 * self.count * other.count / total
        self.count = total
        return self

    @property
    def variance(self):
        return self._m2 / self.count if self.count > 0 else float("nan")

    @property
    def std_error(self):
        if self.count < 2:
            return float("nan")
        return np.sqrt(self._m2 / (self.count - 1) / self.count)


def virial_errors(mean_p, mean_pv, mean_v, params: PhysicalParams):
    """Relative errors of the two pressure virial identities:
    E1 = |<P> - P0| / P0 and E2 = beta |<PV> - P0 <V> + 1/beta|."""
    p0 = params.pressure_p0
    e1 = abs(mean_p - p0) / p0
    e2 = params.beta * abs(mean_pv - p0 * mean_v + 1.0 / params.beta)
    return e1, e2
