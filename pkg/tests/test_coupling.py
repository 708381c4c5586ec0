"""Control construction, residual recursion, observables and the probes."""

import numpy as np
import pytest

from nsjump.coupling import (Observable, build_control, eproperty_probe, gradient_experiment,
                             irreducibility_probe, mann_kendall_up, prepare_sample, recursion_residuals,
                             residual_decay_experiment, small_ball_box)
from nsjump.coupling import _chain
from nsjump.levy import SubordinatorConfig
from nsjump.spectral import ModelConfig, WavenumberLattice, random_field


@pytest.fixture(scope="module")
def setup():
    m = ModelConfig(nu=0.1)
    lat = WavenumberLattice(2)
    sub = SubordinatorConfig(eps=1e-2)
    return m, lat, sub, 1e-3 * m.nu / m.B0


@pytest.fixture(scope="module")
def samples(setup):
    m, lat, sub, kappa = setup
    w0 = 0.3 * lat.basis((1, 0))
    return [prepare_sample(w0, m, lat, sub, kappa=kappa, n_windows=4, seed=0, stream=(i,), h_max=0.05,
                           extra_times=(5.0,)) for i in range(3)]


@pytest.fixture(scope="module")
def xi(setup):
    lat = setup[1]
    return lat.basis((1, 1))


class TestControl:
    def test_identity_and_recursion(self, samples, xi):
        """J xi = A v + rho at every tick, and the dense recursion reproduces rho."""
        for s in samples:
            st = build_control(s, xi, 1e-3, 1.5)
            assert st.identity_residual.max() < 1e-10
            assert st.recursion_residual.max() < 1e-8
            assert st.idle_zero
            assert st.rho_norms()[0] == pytest.approx(1.0)

    def test_control_only_on_even_windows(self, samples, xi):
        s = samples[0]
        st = build_control(s, xi, 1e-3)
        ev = s.record.noise.ev_ptr[s.tick_index]
        assert st.active[ev[0]:ev[1]].all() and not st.active[ev[1]:ev[2]].any()
        assert np.any(st.v[ev[0]:ev[1]] != 0)

    def test_large_beta_means_no_control(self, samples, xi):
        """beta -> infinity sends beta (G + beta)^-1 to the identity."""
        s = samples[0]
        rho = recursion_residuals(s, xi, 1e12)
        np.testing.assert_allclose(rho[-1], _chain(s, xi, None, 4), rtol=1e-6,
                                   atol=1e-9 * np.linalg.norm(rho[-1]))

    def test_smaller_beta_smaller_residual(self, samples, xi):
        for s in samples:
            a = np.linalg.norm(recursion_residuals(s, xi, 1e-4)[-1])
            b = np.linalg.norm(recursion_residuals(s, xi, 1e-1)[-1])
            assert a <= b * (1 + 1e-12)

    def test_argument_checks(self, samples, xi):
        with pytest.raises(ValueError):
            build_control(samples[0], xi, 0.0)
        with pytest.raises(ValueError):
            build_control(samples[0], 2 * xi, 1e-3)


class TestResidualDecay:
    def test_small_grid(self, samples, xi):
        rep = residual_decay_experiment(samples, xi, betas=(1e-4, 1e-2), Ns=(1.5, 2, 9), n_boot=50)
        # N above the lattice cutoff is skipped
        assert {g["N"] for g in rep["grid"]} == {1.5, 2.0}
        assert rep["tuned"]["beta"] == 1e-4
        assert rep["beta_monotone"]
        assert all(g["lemma_bound_ok"] for g in rep["grid"])
        assert rep["n"] == [1, 2]
        assert np.all(np.array(rep["tuned_report"]["median"]) < np.array(rep["null_median"]))


class TestObservables:
    @pytest.mark.parametrize("spec", [dict(name="mode", k=(1, 1)), dict(name="sin_mode", k=(0, 1), scale=2.0),
                                      dict(name="smoothed_energy", scale=3.0, N=1.5)])
    def test_gradient(self, spec):
        lat = WavenumberLattice(2)
        f = Observable.from_config(spec)
        rng = np.random.default_rng(0)
        w, d = random_field(lat, rng, 2)
        h = 1e-6
        fd = (f.value(w + h * d, lat) - f.value(w - h * d, lat)) / (2 * h)
        assert fd == pytest.approx(f.grad(w, lat) @ d, rel=1e-7, abs=1e-10)

    @pytest.mark.parametrize("spec", [dict(name="sin_mode", scale=2.0), dict(name="smoothed_energy", scale=3.0)])
    def test_lipschitz_is_sharp(self, spec):
        lat = WavenumberLattice(2)
        f = Observable.from_config(spec)
        W = random_field(lat, np.random.default_rng(1), 4000) * np.linspace(0.01, 3, 4000)[:, None]
        g = np.linalg.norm(f.grad(W, lat), axis=1)
        assert g.max() <= f.lipschitz * (1 + 1e-12)
        assert g.max() >= 0.9 * f.lipschitz

    def test_unknown(self):
        with pytest.raises(ValueError):
            Observable("nope").value(np.zeros(4), WavenumberLattice(1))


class TestGradientExperiment:
    def test_estimators_agree(self, samples, xi):
        f = Observable("sin_mode", (1, 0))
        w0 = samples[0].record.states[0]
        rep = gradient_experiment(f, samples, w0, xi, [5.0], beta=1e-3, h=1e-6, N=1.5)
        assert rep["pathwise_tangent_vs_control"] < 1e-8
        assert abs(rep["fd_minus_tangent"][0]) < 1e-4
        with pytest.raises(ValueError):
            gradient_experiment(f, samples, w0, xi, [5.0], beta=1e-3, h=1e-9)


class TestTrend:
    def test_mann_kendall(self):
        assert mann_kendall_up(np.arange(20.0)) < 1e-6
        assert mann_kendall_up(-np.arange(20.0)) > 0.99
        assert mann_kendall_up(np.ones(10)) == 1.0
        assert mann_kendall_up([1.0, 2.0]) == 1.0


class TestSmallBall:
    def test_known_value(self):
        """P(sup_{u <= 1} |W_u| < 1) = 0.3708 (series of the exit-time law)."""
        assert np.exp(small_ball_box(1.0, 1.0)) == pytest.approx(0.370777, abs=1e-6)

    def test_branches_meet(self):
        M = 8 * 0.5 / np.pi ** 2
        assert small_ball_box(1.0, M * (1 - 1e-9)) == pytest.approx(small_ball_box(1.0, M * (1 + 1e-9)), abs=1e-8)

    def test_scaling_and_limits(self):
        # Brownian scaling: P(sup_{u<=M} |W| < a) depends on a^2 / M only
        assert small_ball_box(2.0, 4.0) == pytest.approx(small_ball_box(1.0, 1.0), rel=1e-12)
        assert small_ball_box(1.0, 0.0) == 0.0
        assert small_ball_box(0.0, 1.0) == -np.inf
        # deep tail stays finite and linear in M
        d = small_ball_box(0.1, 20.0) - small_ball_box(0.1, 10.0)
        assert d == pytest.approx(-np.pi ** 2 * 10.0 / (8 * 0.01), rel=1e-9)

    def test_monte_carlo(self):
        rng = np.random.default_rng(3)
        W = np.cumsum(rng.standard_normal((4000, 1000)) * np.sqrt(1.0 / 1000), axis=1)
        p = np.mean(np.max(np.abs(W), axis=1) < 1.5)
        # the discrete grid misses some excursions, so it sits slightly above
        assert p == pytest.approx(np.exp(small_ball_box(1.5, 1.0)), abs=0.03)


class TestProbes:
    def test_eproperty_small(self, setup):
        m, lat, sub, _ = setup
        rep = eproperty_probe(m, lat, sub, w0s=[0.5 * lat.basis((1, 0))], deltas=(1e-1, 1e-2),
                              t_grid=(1.0, 2.0, 3.0), samples=4, h_max=0.05)
        r = rep["reports"][0]
        assert r["bound_ok"] and r["decreasing_in_delta"]
        assert len(r["diff_curve"][0]) == 3

    def test_irreducibility_small(self, setup):
        m, lat, sub, _ = setup
        rep = irreducibility_probe(m, lat, sub, C=1.0, gamma=0.8, samples=16, h_max=0.05)
        # C^2 exp(-nu T / 2) = (gamma / 2)^2
        assert rep["T"] == pytest.approx(2 / m.nu * np.log(1.0 / 0.16))
        assert rep["M"] > 0 and np.isfinite(rep["log_p_small_noise"])
        assert 0 <= rep["ci_low"] <= rep["p_min_design"] <= rep["ci_high"] <= 1

    def test_irreducibility_noise_off(self, setup):
        m, lat, sub, _ = setup
        rep = irreducibility_probe(m, lat, sub, C=1.0, gamma=0.2, samples=8, h_max=0.05, noise_off=True)
        # without noise the contraction alone brings every design point inside
        assert rep["p_min_design"] == 1.0
        assert np.isfinite(rep["log_p_small_noise"])

    def test_irreducibility_arguments(self, setup):
        m, lat, sub, _ = setup
        with pytest.raises(ValueError):
            irreducibility_probe(m, lat, sub, C=0.0)
