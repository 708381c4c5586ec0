"""Gram assembly, the resolvent cutoff and the constrained infimum."""

import numpy as np
import pytest

from nsjump.acceptance import heat_gram_case
from nsjump.malliavin import (EmptyWindowWarning, InsufficientSamplesError, NondegeneracyProbe, apply_A,
                              apply_Astar, assemble_gram, design_set, gram_two_path, noise_inner,
                              nondegeneracy_inf, r_epsilon_statistic, resolvent_cutoff)
from nsjump.spectral import ModelConfig


def _grid_values(G, low, a, th):
    GLL, GLH, GHH = G[np.ix_(low, low)], G[np.ix_(low, ~low)], G[np.ix_(~low, ~low)]
    h, V = np.linalg.eigh(GHH)
    a, th = a[:, None], th[None, :]
    x = np.stack([np.cos(th), np.sin(th)], -1)
    b = np.sqrt(np.maximum(1 - a**2, 0.0))
    q = a**2 * np.einsum("...i,ij,...j->...", x, GLL, x)
    gp = ((a * b)[..., None] * np.einsum("...i,ij->...j", x, GLH)) @ V
    hh = (b**2)[..., None] * h
    lo = hh[..., 0] - np.linalg.norm(gp, axis=-1) - 1.0
    hi = hh[..., 0].copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = np.sum(gp**2 / (hh - mid[..., None]) ** 2, -1) - 1
        lo, hi = np.where(f < 0, mid, lo), np.where(f < 0, hi, mid)
    lam = 0.5 * (lo + hi)
    y = -gp / (hh - lam[..., None])
    return q + np.sum(hh * y**2, -1) + 2 * np.sum(gp * y, -1)


def brute_force_inf(G, knorm, alpha, N, n=400):
    """Grid over (a, x) with a = ||P phi|| and an exact sphere solve for the high part.

    Only for two low modes: phi = (a x, b y) with x on the circle and b^2 = 1 - a^2.
    For fixed (a, x) the minimum over unit y of y^T (b^2 G_HH) y + 2 g.y is a
    trust-region problem on the sphere, solved by secular bisection.  A coarse
    grid is followed by two zoomed grids around the best cell.
    """
    low = knorm <= N
    assert low.sum() == 2
    a = np.linspace(alpha, 1, n)
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    da, dt = a[1] - a[0], th[1] - th[0]
    for _ in range(3):
        val = _grid_values(G, low, a, th)
        i, j = np.unravel_index(np.argmin(val), val.shape)
        best = float(val[i, j])
        a = np.linspace(max(alpha, a[i] - 2 * da), min(1.0, a[i] + 2 * da), n)
        th = np.linspace(th[j] - 2 * dt, th[j] + 2 * dt, n)
        da, dt = a[1] - a[0], th[1] - th[0]
    return best


class TestNondegeneracyInf:
    def test_against_brute_force(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((6, 6))
        G = A @ A.T
        kn = np.array([1, 1, 2, 2, 3, 3.0])
        r = nondegeneracy_inf(G, 0.5, 1.5, knorm=kn)
        ref = brute_force_inf(G, kn, 0.5, 1.5)
        assert r.lower <= r.value <= r.upper
        assert r.gap <= 1e-12 * np.abs(G).max()
        # the grid can only sit above the true infimum
        assert r.value <= ref * (1 + 1e-12)
        assert ref - r.value < 1e-8 * r.value
        phi = r.phi
        assert phi @ phi == pytest.approx(1.0)
        assert np.sum(phi[:2] ** 2) >= 0.25 - 1e-9
        assert phi @ G @ phi == pytest.approx(r.upper, rel=1e-12)

    def test_multiple_of_identity(self):
        r = nondegeneracy_inf(3.0 * np.eye(5), 0.3, 1.0, knorm=np.array([1, 1, 2, 2, 3.0]))
        assert r.value == pytest.approx(3.0, rel=1e-12)

    def test_alpha_one_is_low_block(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((5, 5))
        G = A @ A.T
        kn = np.array([1, 1, 1.5, 2, 3.0])
        r = nondegeneracy_inf(G, 1.0, 1.5, knorm=kn)
        assert r.value == pytest.approx(np.linalg.eigvalsh(G[:3, :3])[0], rel=1e-12)

    def test_unconstrained_minimiser_feasible(self):
        """If the bottom eigenvector already has enough low mass, the constraint is slack."""
        G = np.diag([1.0, 2.0, 5.0, 6.0])
        r = nondegeneracy_inf(G, 0.9, 1.0, knorm=np.array([1, 1, 2, 2.0]))
        assert r.value == pytest.approx(1.0) and r.mu == 0.0

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(9)
        A = rng.standard_normal((8, 3))
        G = A @ A.T + 1e-3 * np.eye(8)
        kn = np.array([1, 1, 1, 2, 2, 3, 3, 3.0])
        vals = [nondegeneracy_inf(G, a, 1.0, knorm=kn).value for a in (0.1, 0.4, 0.7, 1.0)]
        assert np.all(np.diff(vals) >= -1e-12)

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            nondegeneracy_inf(np.eye(2), 0.0, 1.0, knorm=np.array([1, 2.0]))
        with pytest.raises(ValueError):
            nondegeneracy_inf(np.eye(2), 0.5, 1.0)
        with pytest.raises(ValueError):
            nondegeneracy_inf(np.eye(2), 0.5, 0.5, knorm=np.array([1, 2.0]))


class TestGram:
    def test_heat_oracle(self, lat4):
        """Zero trajectory, one atom: G is diagonal with b^2 dl exp(-2 nu |k|^2 (t - r))."""
        m = ModelConfig(b=(1.0, 0.5, 2.0, 1.5))
        G, ref = heat_gram_case(m, lat4, N_obs=2)
        np.testing.assert_allclose(G, ref, atol=1e-14 * np.abs(ref).max())

    def test_two_paths_agree(self, record):
        g = assemble_gram(record, 0.2, 0.9, 2)
        G2 = gram_two_path(record, 0.2, 0.9, 2)
        scale = np.linalg.norm(g.G, 2)
        assert np.linalg.norm(G2 - g.G, 2) < 1e-12 * scale
        assert np.linalg.norm(G2 - G2.T, 2) < 1e-12 * scale
        assert g.psd_floor() > -1e-12

    def test_factor_and_quadratic(self, record):
        g = assemble_gram(record, 0.0, 1.0, 2)
        T = g.factor()
        np.testing.assert_allclose(T.T @ T, g.G, atol=1e-13 * np.abs(g.G).max())
        phi = np.random.default_rng(0).standard_normal(g.size)
        assert g.quadratic(phi) == pytest.approx(phi @ g.G @ phi, rel=1e-12)

    def test_dense_equals_fft(self, record):
        a = assemble_gram(record, 0.0, 1.0, 3, method="dense")
        b = assemble_gram(record, 0.0, 1.0, 3, method="fft")
        np.testing.assert_allclose(a.G, b.G, atol=1e-13 * np.abs(a.G).max())

    def test_empty_window(self, record):
        with pytest.warns(EmptyWindowWarning):
            g = assemble_gram(record, 0.5, 0.5, 2)
        assert not g.G.any()

    def test_csv(self, record, tmp_path):
        g = assemble_gram(record, 0.0, 1.0, 1.5)
        g.to_csv(tmp_path / "g.csv")
        np.testing.assert_allclose(np.loadtxt(tmp_path / "g.csv", delimiter=","), g.G, rtol=1e-15)

    def test_A_and_Astar_adjoint(self, record, lat4):
        """<A v, phi> equals the noise-time inner product <v, A* phi>."""
        rng = np.random.default_rng(3)
        phi = rng.standard_normal(lat4.n)
        v = apply_Astar(record, 0.0, 1.0, rng.standard_normal(lat4.n))
        lhs = apply_A(record, 0.0, 1.0, v) @ phi
        rhs = noise_inner(record, 0.0, 1.0, v, apply_Astar(record, 0.0, 1.0, phi))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestResolvent:
    def test_formula_and_bounds(self, record):
        g = assemble_gram(record, 0.0, 1.0, None)
        for beta in (1e-6, 1e-2, 1.0):
            rep = resolvent_cutoff(g, beta, 2.0)
            np.testing.assert_allclose(rep.R @ (g.G + beta * np.eye(g.size)), beta * np.eye(g.size), atol=1e-9)
            assert rep.ok_astar and rep.ok_inv_sqrt
            assert rep.norm_R <= 1 + 1e-12
            assert rep.norm_R_low <= rep.norm_R + 1e-12

    def test_zero_gram(self):
        rep = resolvent_cutoff(np.zeros((3, 3)), 0.5)
        np.testing.assert_allclose(rep.R, np.eye(3))

    def test_beta_must_be_positive(self):
        for beta in (0.0, -1.0):
            with pytest.raises(ValueError):
                resolvent_cutoff(np.eye(2), beta)

    def test_cut_needs_moduli(self):
        with pytest.raises(ValueError):
            resolvent_cutoff(np.eye(2), 1.0, 1.0)


class TestProbe:
    def test_design_set(self, lat4):
        D = design_set(lat4, 2.0)
        assert D.shape == (8, lat4.n)
        np.testing.assert_allclose(np.linalg.norm(D[1:], axis=1), 2.0)
        assert not D[0].any()

    def test_problems(self):
        p = NondegeneracyProbe(alpha=0.0, N=4, N_obs=2, eps_grid=(1e-3, 1e-2), kappa=-1.0)
        probs = p.problems()
        assert len(probs) == 4
        assert any("clock precondition" in s for s in probs)

    def test_r_epsilon_from_table(self, lat4, model, sub):
        """Counting and Wilson intervals on a supplied X table."""
        X = np.tile(np.logspace(-7, -1, 16), (8, 1))
        X[3, :8] = 1e-8
        probe = NondegeneracyProbe(eps_grid=(1e-2, 1e-4, 1e-6))
        out = r_epsilon_statistic(probe, model, lat4, sub, X=X, design=np.zeros((8, lat4.n)))
        # rows 0 and 3 tie down to 1e-4; only row 3 keeps half its mass below 1e-6
        assert out["argmax_design"][-1] == 3 and out["r"][-1] == 0.5
        assert out["r"][0] == pytest.approx(np.mean(X[3] < 1e-2))
        assert out["nonincreasing"]
        for lo, r, hi in zip(out["ci_low"], out["r"], out["ci_high"]):
            assert lo <= r <= hi

    def test_too_few_samples(self, lat4, model, sub):
        probe = NondegeneracyProbe()
        with pytest.raises(InsufficientSamplesError):
            r_epsilon_statistic(probe, model, lat4, sub, X=np.ones((8, 3)))
