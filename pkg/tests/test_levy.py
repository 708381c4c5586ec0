"""Subordinator sampling, the subordinated noise and the forcing operator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nsjump.levy import (NoisePath, SubordinatorConfig, SubordinatorPath, build_grid, energy_injection_rate,
                         forcing_Q, forcing_Qstar, make_rng, sample_noise_increments, sample_subordinator,
                         validate_levy_moments)
from nsjump.spectral import ModelConfig, random_field


class TestSubordinatorConfig:
    def test_closed_forms(self):
        """alpha_S = 1 on (0, 1]: rate 2(eps^-1/2 - 1), drift 2 sqrt(eps), mean 2."""
        cfg = SubordinatorConfig(alpha=1.0, aleph=1.0, eps=1e-2)
        assert cfg.jump_rate() == pytest.approx(18.0, rel=1e-12)
        assert cfg.drift() == pytest.approx(0.2, rel=1e-10)
        assert cfg.first_moment() == pytest.approx(2.0, rel=1e-10)

    def test_exponential_moment(self):
        cfg = SubordinatorConfig(alpha=1.0, aleph=1.0, eps=1e-3, zeta=1.5)
        ref, _ = integrate.quad(lambda u: np.expm1(1.5 * u) * u ** -1.5, 0, 1, limit=200)
        assert cfg.exponential_moment() == pytest.approx(ref, rel=1e-8)

    @given(st.floats(0.0, 1.9), st.floats(1e-4, 0.9))
    def test_inverse_tail(self, alpha, u):
        cfg = SubordinatorConfig(alpha=alpha, aleph=1.0, eps=1e-4)
        assert cfg.inverse_tail(cfg.tail_mass(u)) == pytest.approx(u, rel=1e-9)

    def test_eps_above_aleph_rejected(self):
        cfg = SubordinatorConfig(aleph=0.5, eps=1.0)
        assert any("exceeds aleph" in p for p in cfg.problems())
        with pytest.raises(ValueError):
            sample_subordinator(cfg, 1.0, 0)

    def test_problems_enumerated(self):
        cfg = SubordinatorConfig(alpha=2.5, aleph=-1.0, eps=-1.0, zeta=0.0)
        assert len(cfg.problems()) == 4

    def test_atom_family(self):
        cfg = SubordinatorConfig(family="atom", atom=0.3, rate=2.0, eps=1e-4)
        assert cfg.jump_rate() == 2.0 and cfg.drift() == 0.0
        assert cfg.first_moment() == pytest.approx(0.6)


class TestSubordinatorPath:
    def test_jump_count_mean(self):
        """Poisson count of jumps above eps has mean rate * T."""
        cfg = SubordinatorConfig(alpha=1.0, aleph=1.0, eps=1e-2)
        counts = np.array([sample_subordinator(cfg, 2.0, 3, stream=(i,)).n_atoms for i in range(400)])
        assert abs(counts.mean() - 36.0) < 4 * np.sqrt(36.0 / 400)
        assert counts.var(ddof=1) == pytest.approx(36.0, rel=0.2)

    def test_sizes_in_range_and_sorted(self, sub):
        p = sample_subordinator(sub, 5.0, 1)
        assert np.all(np.diff(p.times) >= 0)
        assert np.all((p.sizes >= sub.eps * (1 - 1e-12)) & (p.sizes <= sub.aleph))

    def test_mean_increment(self, sub):
        """E l_T = T int u nu_S(du) once the drift is added."""
        ends = np.array([sample_subordinator(sub, 1.0, 7, stream=(i,)).ell(1.0) for i in range(2000)])
        se = ends.std(ddof=1) / np.sqrt(len(ends))
        assert abs(ends.mean() - sub.first_moment()) < 4 * se

    def test_reproducible(self, sub):
        a = sample_subordinator(sub, 3.0, 5, stream=(1, 2))
        b = sample_subordinator(sub, 3.0, 5, stream=(1, 2))
        c = sample_subordinator(sub, 3.0, 5, stream=(1, 3))
        np.testing.assert_array_equal(a.times, b.times)
        assert a.n_atoms != c.n_atoms or not np.array_equal(a.times, c.times)

    def test_ell_and_gamma(self):
        p = SubordinatorPath(2.0, [0.5, 1.0], [0.3, 0.2], drift=0.1)
        assert p.ell(0.5) == pytest.approx(0.35)
        assert p.ell_left(0.5) == pytest.approx(0.05)
        # inside the jump at 0.5 the inverse time change sits at the atom
        assert p.gamma(0.2)[0] == pytest.approx(0.5)
        assert p.gamma(0.04)[0] == pytest.approx(0.4)
        assert np.isinf(p.gamma(10.0)[0])

    def test_jsonl_roundtrip(self, sub, tmp_path):
        p = sample_subordinator(sub, 1.0, 2)
        g = np.arange(p.n_atoms * 4, dtype=float).reshape(-1, 4)
        p.to_jsonl(tmp_path / "p.jsonl", g)
        q, g2 = SubordinatorPath.from_jsonl(tmp_path / "p.jsonl")
        np.testing.assert_array_equal(q.times, p.times)
        np.testing.assert_array_equal(q.sizes, p.sizes)
        np.testing.assert_array_equal(g2, g)
        assert q.cfg == sub and q.drift == p.drift


class TestNoisePath:
    def test_grid_contains_atoms_and_breakpoints(self, sub):
        p = sample_subordinator(sub, 1.0, 4)
        grid = build_grid(1.0, 0.05, p.times, (0.25, 0.5))
        assert np.all(np.diff(grid) <= 0.05 + 1e-12)
        for t in list(p.times) + [0.25, 0.5]:
            assert np.min(np.abs(grid - t)) < 1e-12

    def test_atom_increments_independent_of_grid(self, sub):
        p = sample_subordinator(sub, 1.0, 4)
        a = sample_noise_increments(p, 4, 9, h_max=1e-2)
        b = sample_noise_increments(p, 4, 9, h_max=1e-3, breakpoints=(0.3,))
        np.testing.assert_array_equal(a.atom_inc, b.atom_inc)

    def test_events_drift_first(self, sub):
        p = sample_subordinator(sub, 1.0, 4)
        nz = sample_noise_increments(p, 4, 9, h_max=1e-2)
        first = nz.ev_ptr[:-1]
        np.testing.assert_allclose(nz.ev_dl[first], p.drift * nz.deltas)
        assert nz.ell_grid()[-1] == pytest.approx(p.ell(1.0), rel=1e-12)
        np.testing.assert_allclose(nz.L()[-1], nz.drift_inc.sum(0) + nz.atom_inc.sum(0), atol=1e-12)

    def test_increment_variance(self, sub):
        """Each event increment is N(0, dl I)."""
        p = sample_subordinator(sub, 20.0, 6)
        nz = sample_noise_increments(p, 4, 6, h_max=1e-2)
        z = nz.ev_g / np.sqrt(nz.ev_dl)[:, None]
        assert abs(z.mean()) < 4 / np.sqrt(z.size)
        assert z.var() == pytest.approx(1.0, abs=4 * np.sqrt(2.0 / z.size))

    def test_silenced_and_perturbed(self, sub):
        p = sample_subordinator(sub, 1.0, 4)
        nz = sample_noise_increments(p, 2, 9, h_max=1e-1)
        assert not nz.silenced().ev_g.any()
        shift = np.arange(len(nz.ev_dl) * 2, dtype=float).reshape(-1, 2)
        np.testing.assert_allclose(nz.perturbed(shift).ev_g - nz.ev_g, shift, atol=1e-12)

    def test_index_of(self, record):
        assert record.noise.grid[record.index_of(0.5)] == pytest.approx(0.5)
        with pytest.raises(ValueError):
            record.noise.index_of(0.123456789)


class TestForcing:
    def test_adjoint(self, lat4, rng):
        m = ModelConfig(z0=((1, 0), (-1, 0), (1, 1), (-1, -1)), b=(1.0, 0.5, 2.0, 1.5))
        z = rng.standard_normal(4)
        xi = random_field(lat4, rng)
        assert forcing_Q(z, m, lat4) @ xi == pytest.approx(z @ forcing_Qstar(xi, m, lat4), rel=1e-14)
        assert np.sum(forcing_Q(z, m, lat4) ** 2) == pytest.approx(np.sum((np.asarray(m.b) * z) ** 2))

    def test_dimension_check(self, lat4, model):
        with pytest.raises(ValueError):
            forcing_Q(np.zeros(3), model, lat4)

    def test_injection_rate(self, model, sub):
        assert energy_injection_rate(sub, model) == pytest.approx(model.B0 * 2.0, rel=1e-10)


class TestLevyMoments:
    def test_quadrature_inside_mc_band(self):
        cfg = SubordinatorConfig(alpha=1.0, aleph=1.0, eps=1e-3)
        rep = validate_levy_moments(cfg, n=4, d=4, samples=100_000, seed=3)
        assert rep["finite"]
        for key in ("small_second_moment", "large_nth_moment", "second_moment"):
            mean, hw = rep[key]["mc"]
            assert abs(mean - rep[key]["quadrature"]) < 2 * hw + 1e-12, key

    def test_tail_below_gaussian_envelope_scale(self):
        cfg = SubordinatorConfig(alpha=1.0, aleph=1.0, eps=1e-3)
        rep = validate_levy_moments(cfg, samples=20_000)
        q = np.array(rep["tail"]["quadrature"])
        assert np.all(np.diff(q) < 0)
        # ratio to exp(-r^2/(4 aleph)) stays bounded as r grows
        assert max(rep["tail"]["ratio_to_gaussian_envelope"]) < 10.0

    def test_atom_family_matches_chi2(self):
        cfg = SubordinatorConfig(family="atom", atom=0.5, rate=3.0, eps=1e-4)
        rep = validate_levy_moments(cfg, d=2, samples=100_000)
        assert rep["second_moment"]["quadrature"] == pytest.approx(3.0)
        mean, hw = rep["small_second_moment"]["mc"]
        assert abs(mean - rep["small_second_moment"]["quadrature"]) < 2 * hw


class TestRng:
    def test_streams_are_distinct_and_stable(self):
        a = make_rng(1, 2, 3).random(4)
        np.testing.assert_array_equal(a, make_rng(1, 2, 3).random(4))
        assert not np.allclose(a, make_rng(1, 2, 4).random(4))
