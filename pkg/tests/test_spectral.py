"""Lattice layout, Biot-Savart, the bilinear term and its derivatives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsjump import _kernels
from nsjump.spectral import (LatticeMismatchError, ModelConfig, VorticityField, WavenumberLattice,
                             bilinear_B, biot_savart, inner, norm, project, random_field, spectral_ops)


class TestLattice:
    def test_size_and_symmetry(self):
        """Plus modes come first and their negatives follow in the same order."""
        for N in (1, 2, 5):
            lat = WavenumberLattice(N)
            assert lat.n == (2 * N + 1) ** 2 - 1
            assert lat.n_plus * 2 == lat.n
            np.testing.assert_array_equal(lat.k[lat.n_plus:], -lat.k[:lat.n_plus])

    @given(st.integers(-4, 4), st.integers(-4, 4))
    def test_index_roundtrip(self, k1, k2):
        lat = WavenumberLattice(4)
        if (k1, k2) == (0, 0):
            with pytest.raises(KeyError):
                lat.index((k1, k2))
            return
        i = lat.index((k1, k2))
        assert tuple(lat.k[i]) == (k1, k2)

    def test_off_lattice(self, lat3):
        with pytest.raises(KeyError):
            lat3.index((4, 0))
        assert lat3.lookup(np.array([7]), np.array([0]))[0] == -1

    def test_bad_cutoff(self):
        with pytest.raises(ValueError):
            WavenumberLattice(0)

    def test_observation_indices(self, lat4):
        idx = lat4.observation_indices(1.5)
        got = {tuple(k) for k in lat4.k[idx]}
        assert got == {(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)}
        assert len(lat4.observation_indices(None)) == lat4.n


class TestModelConfig:
    def test_defaults(self):
        m = ModelConfig()
        assert m.d == 4 and m.B0 == 4.0

    def test_all_problems_reported(self):
        """Every violated precondition is listed in one error."""
        with pytest.raises(ValueError) as exc:
            ModelConfig(nu=-1.0, z0=((1, 0), (0, 0)), b=(1.0, 0.0))
        msg = str(exc.value)
        for part in ("nu must be positive", "symmetric", "(0,0)", "nonzero"):
            assert part in msg


class TestNormsAndProjections:
    def test_weighted_norm(self, lat3):
        w = lat3.basis((1, 2)) * 3.0
        assert norm(w, 0, lat3) == pytest.approx(3.0)
        assert norm(w, 1, lat3) == pytest.approx(3.0 * np.sqrt(5.0))
        assert norm(w, -0.5, lat3) == pytest.approx(3.0 / 5 ** 0.25)

    def test_velocity_pair_norm(self, lat3, rng):
        w = random_field(lat3, rng)
        u = biot_savart(VorticityField(lat3, w))
        # |Kw|^2 = sum |w_k|^2 / |k|^2
        assert norm(u, 0, lat3) == pytest.approx(norm(w, -1, lat3), rel=1e-12)

    def test_projection_split(self, lat4, rng):
        w = random_field(lat4, rng)
        lo, hi = project(w, 2.5, "low", lat4), project(w, 2.5, "high", lat4)
        np.testing.assert_allclose(lo + hi, w)
        assert abs(inner(lo, hi)) < 1e-15
        with pytest.raises(ValueError):
            project(w, 9, "low", lat4)


class TestFieldIO:
    def test_csv_roundtrip(self, lat3, rng, tmp_path):
        f = VorticityField(lat3, random_field(lat3, rng))
        f.to_csv(tmp_path / "w.csv")
        g = VorticityField.from_csv(tmp_path / "w.csv")
        assert g.lattice == lat3
        np.testing.assert_array_equal(g.coef, f.coef)

    def test_shape_mismatch(self, lat3, lat4):
        with pytest.raises(LatticeMismatchError):
            VorticityField(lat3, np.zeros(lat4.n))
        w = VorticityField(lat4, np.zeros(lat4.n))
        with pytest.raises(LatticeMismatchError):
            bilinear_B((np.zeros(lat3.n), np.zeros(lat3.n)), w)


class TestBasisAndVelocity:
    def test_plus_mode_is_sine(self, lat3):
        """The plus coefficient of k multiplies sin(k.x), the minus one cos(k.x)."""
        ops = spectral_ops(lat3)
        x = 2 * np.pi * np.arange(ops.M) / ops.M
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        k = (-2, 1)
        assert lat3.is_plus[lat3.index(k)]
        np.testing.assert_allclose(ops.field_grid(lat3.basis(k)), np.sin(X2 - 2 * X1), atol=1e-13)
        np.testing.assert_allclose(ops.field_grid(lat3.basis((2, -1))), np.cos(X2 - 2 * X1), atol=1e-13)

    def test_divergence_free_and_curl(self, lat4, rng):
        ops = spectral_ops(lat4)
        w = random_field(lat4, rng)
        u1, u2 = ops.biot_savart(w)
        assert np.max(np.abs(ops.div_grid(u1, u2))) < 1e-12
        np.testing.assert_allclose(ops.curl_grid(u1, u2), ops.field_grid(w), atol=1e-12)

    def test_biot_savart_adjoint(self, lat4, rng):
        ops = spectral_ops(lat4)
        w, f1, f2 = random_field(lat4, rng, 3)
        u1, u2 = ops.biot_savart(w)
        assert inner(u1, f1) + inner(u2, f2) == pytest.approx(inner(w, ops.biot_savart_adjoint(f1, f2)), rel=1e-12)


class TestBilinear:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_skew_symmetry(self, seed):
        """<B(Kv, w), w> vanishes up to rounding."""
        lat = WavenumberLattice(5)
        ops = spectral_ops(lat)
        v, w = random_field(lat, np.random.default_rng(seed), 2)
        b = ops.bilinear(*ops.biot_savart(v), w)
        assert abs(inner(b, w)) <= 1e-12 * norm(b, 0, lat) * norm(w, 0, lat)

    def test_enstrophy_conserved(self, lat4, rng):
        ops = spectral_ops(lat4)
        w = random_field(lat4, rng)
        n = ops.nonlinear(w)
        assert abs(inner(n, w)) < 1e-13 * norm(n, 0, lat4) * norm(w, 0, lat4)

    def test_single_triad(self):
        """Two modes of unequal modulus feed their sum and difference wavenumbers."""
        lat = WavenumberLattice(3)
        ops = spectral_ops(lat)
        w = lat.basis((1, 0)) + lat.basis((1, 1))
        out = ops.nonlinear(w)
        # sin * sin only produces cosines, so compare up to sign of k
        hit = {frozenset({(a, b), (-a, -b)}) for a, b in lat.k[np.abs(out) > 1e-12].tolist()}
        assert hit == {frozenset({(2, 1), (-2, -1)}), frozenset({(0, 1), (0, -1)})}

    def test_equal_moduli_do_not_interact(self):
        lat = WavenumberLattice(3)
        w = lat.basis((1, 0)) + lat.basis((0, 1))
        assert np.max(np.abs(spectral_ops(lat).nonlinear(w))) < 1e-13

    def test_dense_triads_match_fft(self, lat3, rng):
        ops = spectral_ops(lat3)
        tab = _kernels.lattice_tables(lat3)
        v, w = random_field(lat3, rng, 2)
        ref = ops.bilinear(*ops.biot_savart(v), w)
        got = _kernels.triad_bilinear(v, w, lat3.n_plus, *tab[:5])
        np.testing.assert_allclose(got, ref, atol=1e-13)
        got_np = _kernels._triad_bilinear_np(v, w, lat3.n_plus, *tab[:5])
        np.testing.assert_allclose(got_np, ref, atol=1e-13)


class TestDerivatives:
    def test_dn_finite_difference(self, lat4, rng):
        ops = spectral_ops(lat4)
        w, psi = random_field(lat4, rng, 2)
        h = 1e-6
        fd = (ops.nonlinear(w + h * psi) - ops.nonlinear(w - h * psi)) / (2 * h)
        np.testing.assert_allclose(ops.dn(ops.grids(w), psi), fd, atol=1e-8)

    def test_dn_transpose(self, lat4, rng):
        ops = spectral_ops(lat4)
        w, psi, phi = random_field(lat4, rng, 3)
        g = ops.grids(w)
        assert inner(ops.dn(g, psi), phi) == pytest.approx(inner(psi, ops.dn_transpose(g, phi)), rel=1e-11)

    def test_d2n_is_polarisation(self, lat4, rng):
        """N(x + y) - N(x) - N(y) = B(Kx, y) + B(Ky, x)."""
        ops = spectral_ops(lat4)
        x, y = random_field(lat4, rng, 2)
        lhs = ops.nonlinear(x + y) - ops.nonlinear(x) - ops.nonlinear(y)
        np.testing.assert_allclose(ops.d2n(ops.grids(x), ops.grids(y)), lhs, atol=1e-12)

    def test_dense_linearisation(self, lat3, rng):
        ops = spectral_ops(lat3)
        tab = _kernels.lattice_tables(lat3)
        w, psi = random_field(lat3, rng, 2)
        D = _kernels.dn_matrix(w, lat3.n_plus, *tab)
        np.testing.assert_allclose(D @ psi, ops.dn(ops.grids(w), psi), atol=1e-12)
        np.testing.assert_allclose(_kernels._dn_matrix_np(w, lat3.n_plus, *tab), D, atol=1e-14)
