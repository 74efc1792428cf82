import numpy as np
import pytest

from nptlangevin.core import PhysicalParams, SystemState, minimum_image
from nptlangevin.forcefields import (FreeGas, LennardJones, QuarticBump,
                                     SingularDistanceError, evaluate,
                                     instantaneous_pressure, kinetic_energy,
                                     v_dh_dv)


def make_state(n, log_volume, seed=0, momenta_scale=1.0):
    rng = np.random.default_rng(seed)
    length = np.exp(log_volume / 3.0)
    # keep particles apart so LJ stays far from singular
    base = np.array([[0.2, 0.2, 0.2], [0.7, 0.3, 0.4], [0.3, 0.8, 0.6],
                     [0.8, 0.7, 0.9], [0.15, 0.6, 0.85], [0.6, 0.85, 0.15],
                     [0.45, 0.1, 0.7], [0.9, 0.45, 0.55]])
    r = base[:n] * length + rng.uniform(-0.02, 0.02, (n, 3)) * length
    p = momenta_scale * rng.normal(size=(n, 3))
    return SystemState(r, p, log_volume)


def brute_force_energy(field, positions, log_volume):
    """Independent O(N^2) reference evaluation via the pair potential."""
    length = np.exp(log_volume / 3.0)
    n = len(positions)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            diff = positions[i] - positions[j]
            if isinstance(field, QuarticBump):
                for img in field.images:
                    d = diff + length * img
                    total += field.pair_potential(np.linalg.norm(d))
            else:
                d = minimum_image(diff, length)
                r = np.linalg.norm(d)
                if r < max(length / 2.0, field.cutoff_floor):
                    total += field.pair_potential(r)
    return total


def numeric_forces(field, positions, log_volume, h=1e-5):
    grad = np.zeros_like(positions)
    for i in range(positions.shape[0]):
        for c in range(3):
            rp = positions.copy()
            rm = positions.copy()
            rp[i, c] += h
            rm[i, c] -= h
            ep, _, _ = field.evaluate_arrays(rp, log_volume)
            em, _, _ = field.evaluate_arrays(rm, log_volume)
            grad[i, c] = (ep - em) / (2 * h)
    return -grad


class TestPairPotentials:
    def test_lj_values(self):
        lj = LennardJones()
        assert lj.pair_potential(1.0) == pytest.approx(0.0, abs=1e-14)
        assert lj.pair_potential(2.0 ** (1 / 6)) == pytest.approx(-1.0)
        assert lj.pair_potential(2.5) == pytest.approx(-0.016316891136000003,
                                                       rel=1e-12)

    def test_lj_singularity(self):
        with pytest.raises(SingularDistanceError):
            LennardJones().pair_potential(0.0)

    def test_quartic_values(self):
        q = QuarticBump(weight=2.0)
        assert q.pair_potential(0.0) == pytest.approx(4.0)
        assert q.pair_potential(1.0) == pytest.approx(2.0)
        assert q.pair_potential(np.sqrt(2.0)) == pytest.approx(4.0 / 5.0)

    def test_free_gas_zero(self):
        s = make_state(4, np.log(8.0))
        out = evaluate(FreeGas(), s)
        assert out.energy == 0.0
        assert out.virial_sum == 0.0
        np.testing.assert_array_equal(out.forces, 0.0)


class TestEnergyOracles:
    @pytest.mark.parametrize("field,log_volume", [
        (LennardJones(), np.log(64.0)),
        (LennardJones(), np.log(8.0)),       # L/2 < 2.5 branch of the cutoff
        (QuarticBump(1.3), np.log(27.0)),
    ])
    def test_energy_matches_brute_force(self, field, log_volume):
        s = make_state(6, log_volume, seed=3)
        out = evaluate(field, s)
        ref = brute_force_energy(field, s.positions, log_volume)
        assert out.energy == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_lj_coincident_particles_raise(self):
        r = np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
        s = SystemState(r, np.zeros((2, 3)), np.log(8.0))
        with pytest.raises(SingularDistanceError):
            evaluate(LennardJones(), s)


class TestForceOracles:
    @pytest.mark.parametrize("field,log_volume", [
        (LennardJones(), np.log(64.0)),
        (QuarticBump(1.0), np.log(27.0)),
        (QuarticBump(0.7), np.log(3.0)),
    ])
    def test_forces_match_finite_difference(self, field, log_volume):
        s = make_state(5, log_volume, seed=7)
        out = evaluate(field, s)
        ref = numeric_forces(field, s.positions, log_volume)
        scale = np.abs(ref).max() + 1.0
        np.testing.assert_allclose(out.forces, ref, atol=1e-6 * scale)

    @pytest.mark.parametrize("field", [LennardJones(), QuarticBump(1.0)])
    def test_newtons_third_law(self, field):
        s = make_state(8, np.log(30.0), seed=11)
        out = evaluate(field, s)
        np.testing.assert_allclose(out.forces.sum(axis=0), 0.0, atol=1e-10)

    @pytest.mark.parametrize("field", [LennardJones(), QuarticBump(1.0)])
    def test_translation_invariance(self, field):
        s = make_state(5, np.log(27.0), seed=2)
        shift = np.array([0.37, -1.12, 2.05])
        out0 = field.evaluate_arrays(s.positions, s.log_volume)
        out1 = field.evaluate_arrays(s.positions + shift, s.log_volume)
        assert out1[0] == pytest.approx(out0[0], rel=1e-10)
        np.testing.assert_allclose(out1[1], out0[1], atol=1e-9)
        assert out1[2] == pytest.approx(out0[2], rel=1e-10)


class TestBatching:
    def test_batched_evaluation_matches_loop(self):
        field = LennardJones()
        states = [make_state(4, np.log(20.0) + 0.1 * k, seed=k)
                  for k in range(5)]
        r = np.stack([s.positions for s in states])
        eps = np.array([s.log_volume for s in states])
        energy, forces, virial = field.evaluate_arrays(r, eps)
        for k, s in enumerate(states):
            out = evaluate(field, s)
            assert energy[k] == pytest.approx(out.energy, rel=1e-14)
            np.testing.assert_array_equal(forces[k], out.forces)
            assert virial[k] == pytest.approx(out.virial_sum, rel=1e-14)


class TestPressureAndEnthalpyDerivative:
    @pytest.mark.parametrize("field,log_volume", [
        (LennardJones(), np.log(8.0)),    # fixed cutoff 2.5: smooth in V
        (QuarticBump(1.0), np.log(27.0)),
        (FreeGas(), np.log(5.0)),
    ])
    def test_pressure_matches_volume_finite_difference(self, field, log_volume):
        # P = -d(U+K)/dV at fixed reduced coordinates s, p^s
        s = make_state(4, log_volume, seed=5)
        params = PhysicalParams.uniform(4, beta=1.0, pressure_p0=1.0)
        vol = s.volume
        sred = s.positions / s.box_length
        pred = s.momenta * s.box_length
        h = 1e-5 * vol

        def total_energy(v):
            ln_v = np.log(v)
            r = sred * v ** (1 / 3)
            p = pred / v ** (1 / 3)
            e, _, _ = field.evaluate_arrays(r, ln_v)
            return float(e) + float(kinetic_energy(p, params.masses_col))

        p_num = -(total_energy(vol + h) - total_energy(vol - h)) / (2 * h)
        p_inst = instantaneous_pressure(field, s, params)
        assert p_inst == pytest.approx(p_num, rel=1e-5, abs=1e-8)

    def test_v_dh_dv_is_volume_times_pressure_gap(self):
        s = make_state(6, np.log(8.0), seed=9)
        params = PhysicalParams.uniform(6, beta=2.0, pressure_p0=1.5)
        field = LennardJones()
        lhs = v_dh_dv(field, s, params)
        rhs = s.volume * (params.pressure_p0
                          - instantaneous_pressure(field, s, params))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_free_gas_zero_momentum_values(self):
        s = SystemState(np.array([[0.1, 0.2, 0.3]]), np.zeros((1, 3)),
                        np.log(3.0))
        params = PhysicalParams.uniform(1, beta=1.0, pressure_p0=2.0)
        assert instantaneous_pressure(FreeGas(), s, params) == 0.0
        assert v_dh_dv(FreeGas(), s, params) == pytest.approx(2.0 * 3.0)

    def test_kinetic_energy(self):
        p = np.array([[1.0, 2.0, 2.0]])
        assert float(kinetic_energy(p, np.array([[2.0]]))) == pytest.approx(2.25)
