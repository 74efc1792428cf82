import dataclasses

import numpy as np
import pytest

from nptlangevin.harness import (ExperimentConfig, convergence_study,
                                 distribution_distance,
                                 exact_free_gas_density, histogram,
                                 histogram_l1_distance, lattice_positions,
                                 nvt_pressure_scan, replicate_terminal,
                                 run_trajectory, thermodynamic_integration,
                                 weak_order_fit)


class TestExperimentConfig:
    def test_defaults_materialize(self):
        cfg = ExperimentConfig()
        assert cfg.gamma == 1.0 and cfg.lam == 1.0
        assert cfg.start_volume() == pytest.approx(2.0)  # N=1, rho0=0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(dt=0.0)
        with pytest.raises(ValueError):
            ExperimentConfig(n_particles=0)
        with pytest.raises(ValueError):
            ExperimentConfig(scheme="leapfrog")
        with pytest.raises(ValueError):
            ExperimentConfig(field="gravity")
        with pytest.raises(ValueError):
            ExperimentConfig(initial_volume=-1.0)
        with pytest.raises(ValueError):
            ExperimentConfig(initial_momenta="hot")

    def test_builders(self):
        cfg = ExperimentConfig(field="quartic", n_particles=3, beta=2.0,
                               pressure=1.5, gamma=4.0, lam=0.5)
        field = cfg.build_field()
        assert field.name == "quartic"
        params = cfg.build_params()
        assert params.beta == 2.0
        assert params.volume_coupling.lam == 0.5
        np.testing.assert_array_equal(params.particle_frictions, [4.0] * 3)


class TestLattice:
    def test_cubic_fill(self):
        r = lattice_positions(8, 2.0)
        assert r.shape == (8, 3)
        assert np.all(r >= 0) and np.all(r < 2.0)
        # all sites distinct
        d = np.linalg.norm(r[:, None] - r[None, :], axis=-1)
        assert d[np.triu_indices(8, 1)].min() > 0.9

    def test_partial_shell(self):
        r = lattice_positions(5, 3.0)
        assert r.shape == (5, 3)
        assert len(np.unique(r.round(12), axis=0)) == 5


class TestExactDensity:
    def test_normalization_and_moments(self):
        v = np.linspace(1e-6, 60, 20001)
        for n, beta, p0 in [(1, 1.0, 1.0), (3, 2.0, 0.5)]:
            f = exact_free_gas_density(v, n, beta, p0)
            assert np.trapezoid(f, v) == pytest.approx(1.0, abs=1e-6)
            mean = np.trapezoid(v * f, v)
            assert mean == pytest.approx((n + 1) / (beta * p0), rel=1e-4)

    def test_gamma_point_value(self):
        # N=1, beta=P0=1: f(V) = V e^-V, f(1) = 1/e
        assert exact_free_gas_density(1.0, 1, 1.0, 1.0) == pytest.approx(
            np.exp(-1.0), rel=1e-12)

    def test_positive_volume_required(self):
        with pytest.raises(ValueError):
            exact_free_gas_density(np.array([1.0, 0.0]), 1, 1.0, 1.0)


class TestHistogram:
    def test_density_normalization(self):
        samples = np.random.default_rng(0).normal(size=10000)
        edges, dens = histogram(samples, bins=40)
        assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            histogram(np.array([]))

    def test_gamma_samples_close_to_exact(self):
        # 10^6 Gamma(2, 1) draws vs the N=1 free-gas marginal
        samples = np.random.default_rng(7).gamma(2.0, 1.0, size=1_000_000)
        dist = histogram_l1_distance(
            samples, lambda v: exact_free_gas_density(v, 1, 1.0, 1.0),
            bins=100)
        assert dist < 0.02


class TestWeakOrderFit:
    def test_exact_power_law(self):
        dts = 2.0 ** -np.arange(5, 10)
        slope, resid = weak_order_fit(dts, 3.0 * dts**2)
        assert slope == pytest.approx(2.0, abs=1e-12)
        assert resid == pytest.approx(0.0, abs=1e-12)
        slope, _ = weak_order_fit(dts, 0.7 * dts)
        assert slope == pytest.approx(1.0, abs=1e-12)

    def test_noisy_errors_recovered(self):
        rng = np.random.default_rng(3)
        dts = 2.0 ** -np.arange(4, 10)
        errors = 2.0 * dts**1.5 * np.exp(rng.normal(0, 0.05, dts.size))
        slope, resid = weak_order_fit(dts, errors)
        assert slope == pytest.approx(1.5, abs=0.15)
        assert resid < 0.2

    def test_nonpositive_levels_excluded_with_warning(self):
        dts = 2.0 ** -np.arange(5, 9)
        errors = np.array([4e-2, 1e-2, 0.0, -1e-3])
        with pytest.warns(UserWarning):
            slope, _ = weak_order_fit(dts, errors)
        assert slope == pytest.approx(2.0, abs=1e-12)

    def test_too_few_levels_rejected(self):
        with pytest.raises(ValueError):
            weak_order_fit([0.1, 0.05], [1e-3, -1.0])


class TestDistances:
    def test_identical_densities(self):
        grid = np.linspace(0, 1, 100)
        assert distribution_distance(grid, grid, grid) == 0.0

    def test_disjoint_mass(self):
        grid = np.linspace(0, 1, 1001)
        one = np.ones_like(grid)
        zero = np.zeros_like(grid)
        assert distribution_distance(one, zero, grid) == pytest.approx(1.0)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            distribution_distance(np.ones(5), np.ones(6), np.linspace(0, 1, 6))


class TestThermodynamicIntegration:
    def test_free_gas_analytic_pressure_recovers_gamma_density(self):
        # NVT free-gas mean pressure is N/(beta V); integrating it must
        # rebuild the V^N e^(-beta P0 V) marginal
        v = np.linspace(0.2, 12.0, 401)
        p_hat = 1.0 / v
        _, dens = thermodynamic_integration(v, p_hat, pressure_p0=1.0,
                                            beta=1.0)
        exact = exact_free_gas_density(v, 1, 1.0, 1.0)
        exact = exact / np.trapezoid(exact, v)
        assert distribution_distance(dens, exact, v) < 1e-3

    def test_free_energy_update_rule(self):
        v = np.array([1.0, 2.0, 4.0])
        p_hat = np.array([3.0, 2.0, 1.0])
        f, _ = thermodynamic_integration(v, p_hat, pressure_p0=1.0, beta=1.0)
        assert f[0] == 0.0
        assert f[1] == pytest.approx(-0.5 * (3.0 + 2.0 - 2.0) * 1.0)
        assert f[2] == pytest.approx(f[1] - 0.5 * (2.0 + 1.0 - 2.0) * 2.0)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            thermodynamic_integration([2.0, 1.0], [1.0, 1.0], 1.0, 1.0)
        with pytest.raises(ValueError):
            thermodynamic_integration([1.0, 2.0], [1.0], 1.0, 1.0)


class TestRunTrajectory:
    def test_sampling_layout(self):
        cfg = ExperimentConfig(n_steps=100, burn_in=20, sample_stride=10,
                               dt=1e-3, gamma=2.0, lam=2.0)
        series = run_trajectory(cfg)
        assert len(series) == 8
        np.testing.assert_array_equal(series.step_index,
                                      np.arange(30, 101, 10))
        np.testing.assert_allclose(series.time, series.step_index * 1e-3)
        assert series.failed_step is None

    def test_bitwise_reproducible(self):
        cfg = ExperimentConfig(field="lj", n_particles=8, scheme="trotter",
                               n_steps=40, dt=1e-3, seed=5, rho0=0.2)
        a, b = run_trajectory(cfg), run_trajectory(cfg)
        np.testing.assert_array_equal(a.volume, b.volume)
        np.testing.assert_array_equal(a.pressure, b.pressure)

    def test_free_gas_mean_volume(self):
        cfg = ExperimentConfig(scheme="splitting2", n_particles=1, dt=5e-3,
                               n_steps=40000, burn_in=4000, gamma=20.0,
                               lam=20.0, seed=11)
        series = run_trajectory(cfg)
        assert series.volume.mean() == pytest.approx(2.0, rel=0.1)

    def test_em_failure_reported_not_raised(self):
        cfg = ExperimentConfig(scheme="em", n_particles=1, dt=5.0,
                               n_steps=200, seed=0, gamma=1.0, lam=1.0)
        series = run_trajectory(cfg)
        assert series.failed_step is not None
        assert 1 <= series.failed_step <= 200


class TestReplicateTerminal:
    def test_deterministic_and_thread_invariant(self):
        cfg = ExperimentConfig(scheme="splitting2", n_particles=1, dt=0.02,
                               n_steps=50, n_replicas=9000, gamma=3.0,
                               lam=3.0, seed=2)
        a = replicate_terminal(cfg, ["V", "V2"])
        b = replicate_terminal(cfg, ["V", "V2"])
        assert a.means == b.means
        c = replicate_terminal(dataclasses.replace(cfg, threads=4),
                               ["V", "V2"])
        assert a.means == c.means
        assert a.n_failed == c.n_failed

    def test_disjoint_seeds_agree_within_errors(self):
        cfg = ExperimentConfig(scheme="splitting2", n_particles=1, dt=0.02,
                               n_steps=200, n_replicas=4000, gamma=5.0,
                               lam=5.0)
        a = replicate_terminal(dataclasses.replace(cfg, seed=1), ["V"])
        b = replicate_terminal(dataclasses.replace(cfg, seed=2), ["V"])
        gap = abs(a.means["V"] - b.means["V"])
        assert gap < 4 * np.hypot(a.std_errors["V"], b.std_errors["V"])

    def test_callable_phis(self):
        cfg = ExperimentConfig(n_steps=5, n_replicas=100)
        ens = replicate_terminal(cfg, [lambda r, p, eps, f, prm: np.exp(eps)])
        assert len(ens.means) == 1


class TestConvergenceStudy:
    def test_reference_must_be_finer(self):
        cfg = ExperimentConfig(n_replicas=10)
        with pytest.raises(ValueError):
            convergence_study(cfg, [5, 6], ref_level=6, phis=["V"])

    def test_free_gas_smoke(self):
        cfg = ExperimentConfig(scheme="splitting2", n_particles=1,
                               n_replicas=2000, gamma=2.0, lam=2.0, seed=4)
        report = convergence_study(cfg, [3, 4], ref_level=6, phis=["V"],
                                   t_end=0.5)
        assert set(report.errors) == {"V"}
        assert len(report.errors["V"]) == 2
        assert np.isfinite(report.slopes["V"])


class TestNvtPressureScan:
    def test_free_gas_matches_ideal_law(self):
        cfg = ExperimentConfig(field="free", n_particles=2, beta=0.5,
                               dt=5e-3, n_steps=20000, burn_in=2000,
                               gamma=10.0, seed=6)
        v_grid = np.array([2.0, 5.0, 10.0])
        p_hat = nvt_pressure_scan(cfg, v_grid)
        # <P> = N / (beta V)
        np.testing.assert_allclose(p_hat, 2.0 / (0.5 * v_grid), rtol=0.08)
