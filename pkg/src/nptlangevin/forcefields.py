"""Pair potentials on the periodic box: energies, forces, virials and the
volume derivative of the enthalpy that drives the barostat.

Three fields are provided:

* :class:`FreeGas` -- no interactions;
* :class:`QuarticBump` -- w^2 / (1 + |d|^4) summed over the centre box and
  the six face-sharing image boxes;
* :class:`LennardJones` -- 4 (r^-12 - r^-6), minimum image only, truncated
  (no shift, no tail correction) at r_c = max(L/2, 2.5).

All kernels accept a leading batch shape: positions (..., N, 3) and
log-volume (...). Pair iteration is plain O(N^2); at the particle counts
used here (N <= 200) neighbour lists would not pay off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SystemState, PhysicalParams

__all__ = [
    "FreeGas",
    "QuarticBump",
    "LennardJones",
    "ForceFieldOutput",
    "evaluate",
    "kinetic_energy",
    "instantaneous_pressure",
    "v_dh_dv",
]


class SingularDistanceError(ValueError):
    """Raised when two particles coincide under a singular potential."""


@dataclass
class ForceFieldOutput:
    energy: float
    forces: np.ndarray
    virial_sum: float  # sum over pairs/images of grad(Phi) . d


_PAIR_CACHE = {}


def _pair_indices(n):
    if n not in _PAIR_CACHE:
        _PAIR_CACHE[n] = np.triu_indices(n, 1)
    return _PAIR_CACHE[n]


def _scatter_pair_forces(n, idx_i, idx_j, pair_forces):
    """Accumulate +f on particle i and -f on particle j for every pair.

    pair_forces has shape (..., P, 3); returns (..., N, 3).
    """
    batch = pair_forces.shape[:-2]
    if not batch:
        forces = np.zeros((n, 3))
        np.add.at(forces, idx_i, pair_forces)
        np.subtract.at(forces, idx_j, pair_forces)
        return forces
    flat = pair_forces.reshape(-1, *pair_forces.shape[-2:])
    b = flat.shape[0]
    forces = np.zeros((b, n, 3))
    rows = np.arange(b)[:, None]
    np.add.at(forces, (rows, idx_i[None, :]), flat)
    np.subtract.at(forces, (rows, idx_j[None, :]), flat)
    return forces.reshape(*batch, n, 3)


class FreeGas:
    """No interactions: energy, forces and virial are identically zero."""

    name = "free"

    def pair_potential(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def evaluate_arrays(self, positions, log_volume, with_forces=True):
        positions = np.asarray(positions, dtype=float)
        batch = positions.shape[:-2]
        forces = np.zeros_like(positions) if with_forces else None
        return (np.zeros(batch), forces, np.zeros(batch))


class QuarticBump:
    """Phi(d) = w^2 / (1 + |d|^4) over the centre box and its 6 face images."""

    name = "quartic"

    def __init__(self, weight=1.0):
        if weight <= 0:
            raise ValueError("weight must be positive")
        self.weight = float(weight)
        images = [np.zeros(3)]
        for axis in range(3):
            for sign in (-1.0, 1.0):
                v = np.zeros(3)
                v[axis] = sign
                images.append(v)
        self.images = np.array(images)  # (7, 3)

    def pair_potential(self, r):
        r = np.asarray(r, dtype=float)
        return self.weight**2 / (1.0 + r**4)

    def evaluate_arrays(self, positions, log_volume, with_forces=True):
        positions = np.asarray(positions, dtype=float)
        log_volume = np.asarray(log_volume, dtype=float)
        n = positions.shape[-2]
        batch = positions.shape[:-2]
        if n == 1:
            forces = np.zeros_like(positions) if with_forces else None
            return (np.zeros(batch), forces, np.zeros(batch))
        idx_i, idx_j = _pair_indices(n)
        length = np.exp(log_volume / 3.0)[..., None, None, None]
        diff = positions[..., idx_i, :] - positions[..., idx_j, :]
        # (..., P, 7, 3)
        d = diff[..., None, :] + length * self.images
        d2 = np.einsum("...c,...c->...", d, d)
        d4 = d2 * d2
        denom = 1.0 + d4
        w2 = self.weight**2
        energy = w2 * np.sum(1.0 / denom, axis=(-1, -2))
        virial = -4.0 * w2 * np.sum(d4 / denom**2, axis=(-1, -2))
        if not with_forces:
            return energy, None, virial
        # force on i from one image term: +4 w^2 |d|^2 d / (1 + |d|^4)^2
        coef = 4.0 * w2 * d2 / denom**2
        pair_forces = np.sum(coef[..., None] * d, axis=-2)
        forces = _scatter_pair_forces(n, idx_i, idx_j, pair_forces)
        return energy, forces, virial


class LennardJones:
    """Truncated Lennard-Jones, minimum image convention, r_c = max(L/2, 2.5)."""

    name = "lj"

    def __init__(self, cutoff_floor=2.5):
        self.cutoff_floor = float(cutoff_floor)

    def pair_potential(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise SingularDistanceError("singular pair distance")
        inv6 = 1.0 / r**6
        return 4.0 * (inv6 * inv6 - inv6)

    def evaluate_arrays(self, positions, log_volume, with_forces=True):
        positions = np.asarray(positions, dtype=float)
        log_volume = np.asarray(log_volume, dtype=float)
        n = positions.shape[-2]
        batch = positions.shape[:-2]
        if n == 1:
            forces = np.zeros_like(positions) if with_forces else None
            return (np.zeros(batch), forces, np.zeros(batch))
        idx_i, idx_j = _pair_indices(n)
        length = np.exp(log_volume / 3.0)[..., None, None]
        diff = positions[..., idx_i, :] - positions[..., idx_j, :]
        d = diff - length * np.floor(diff / length + 0.5)
        r2 = np.einsum("...c,...c->...", d, d)
        cutoff = np.maximum(length[..., 0] / 2.0, self.cutoff_floor)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            inv2 = 1.0 / r2
            inv6 = inv2 * inv2 * inv2
            inv12 = inv6 * inv6
            active = r2 < cutoff**2
            energy = np.sum(np.where(active, 4.0 * (inv12 - inv6), 0.0), axis=-1)
            virial = np.sum(np.where(active, -24.0 * (2.0 * inv12 - inv6), 0.0),
                            axis=-1)
            if not with_forces:
                return energy.reshape(batch), None, virial.reshape(batch)
            # force on i: 24 (2 r^-14 - r^-8) d
            coef = np.where(active, 24.0 * (2.0 * inv12 - inv6) * inv2, 0.0)
            pair_forces = coef[..., None] * d
        forces = _scatter_pair_forces(n, idx_i, idx_j, pair_forces)
        return energy.reshape(batch), forces, virial.reshape(batch)


ForceFieldModel = FreeGas | QuarticBump | LennardJones


def evaluate(field, state: SystemState) -> ForceFieldOutput:
    """Energy, forces and virial sum of one state; raises on LJ overlap."""
    energy, forces, virial = field.evaluate_arrays(state.positions,
                                                  state.log_volume)
    if not (np.isfinite(energy) and np.isfinite(forces).all()):
        raise SingularDistanceError("singular pair distance")
    return ForceFieldOutput(float(energy), forces, float(virial))


def kinetic_energy(momenta, masses_col):
    """0.5 p^T m^-1 p, batched over leading dims."""
    return 0.5 * (momenta * momenta / masses_col).sum(axis=(-1, -2))


def pressure_arrays(field, positions, momenta, log_volume, params: PhysicalParams):
    """Instantaneous pressure P = (2K/3 - virial/3) / V, batched."""
    _, _, virial = field.evaluate_arrays(positions, log_volume,
                                         with_forces=False)
    kin = kinetic_energy(momenta, params.masses_col)
    volume = np.exp(np.asarray(log_volume, dtype=float))
    return (2.0 * kin / 3.0 - virial / 3.0) / volume


def v_dh_dv_from(virial, kinetic, volume, params: PhysicalParams):
    """V dH/dV at fixed reduced coordinates from precomputed pieces."""
    return params.pressure_p0 * volume + virial / 3.0 - 2.0 * kinetic / 3.0


def v_dh_dv_arrays(field, positions, momenta, log_volume, params: PhysicalParams):
    """V dH/dV at fixed reduced coordinates: P0 V + virial/3 - 2K/3, batched."""
    _, _, virial = field.evaluate_arrays(positions, log_volume,
                                         with_forces=False)
    kin = kinetic_energy(momenta, params.masses_col)
    volume = np.exp(np.asarray(log_volume, dtype=float))
    return v_dh_dv_from(virial, kin, volume, params)


def instantaneous_pressure(field, state: SystemState, params: PhysicalParams) -> float:
    return float(pressure_arrays(field, state.positions, state.momenta,
                                 state.log_volume, params))


def v_dh_dv(field, state: SystemState, params: PhysicalParams) -> float:
    """Equals V (P0 - P); drives the barostat drift."""
    return float(v_dh_dv_arrays(field, state.positions, state.momenta,
                                state.log_volume, params))
