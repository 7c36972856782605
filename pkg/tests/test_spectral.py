import numpy as np
import pytest

from sclab.dynamics import ControlSignal, sample_controls
from sclab.errors import QuadratureDivergence, TruncationNotConverged
from sclab.spectral import (CouplingMatrix, GapVector, HermiteBasis,
                            cutoff_coupling, default_zero_tol,
                            gap_rational_relation, gaussian_coupling,
                            invariant_disc_check, minor_connectivity,
                            perturbed_spectrum)


class TestHermiteBasis:
    def test_orthonormal_under_quadrature(self):
        basis = HermiteBasis(12)
        gram = basis.gram()
        assert np.max(np.abs(gram - np.eye(12))) < 1e-10

    def test_eigenfunction_normalization_on_grid(self):
        # independent Riemann-sum check of ∫φ_3² = 1
        x = np.linspace(-12, 12, 20001)
        basis = HermiteBasis(6)
        phi = basis.eigenfunctions(x)
        val = np.trapezoid(phi[3] ** 2, x)
        assert val == pytest.approx(1.0, abs=1e-8)


class TestGaussianCoupling:
    def test_b00_closed_form(self):
        # (1-a)^{-1/2}·e^{b²/(4(1-a))+c} = 1/√2 at (-1, 0, 0)
        B = gaussian_coupling(-1.0, 0.0, 0.0, 8)
        assert B.entries[0, 0] == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-10)

    def test_parity_kills_b01(self):
        B = gaussian_coupling(-1.0, 0.0, 0.5, 8)
        assert abs(B.entries[0, 1]) < 1e-12

    def test_b01_closed_form(self):
        # ∫φ0 φ1 e^{-x²+x} = (√2/√π)∫x e^{-2x²+x} dx = e^{1/8}/4
        B = gaussian_coupling(-1.0, 1.0, 0.0, 8)
        assert B.entries[0, 1] == pytest.approx(np.exp(0.125) / 4.0, abs=1e-10)

    def test_quadrature_doubling_stable(self):
        B1 = gaussian_coupling(-1.0, 1.0, 0.0, 10)
        B2 = gaussian_coupling(-1.0, 1.0, 0.0, 10,
                               quadrature_order=2 * max(40, 40))
        assert np.max(np.abs(B1.entries - B2.entries)) < 1e-10

    def test_rejects_undamped_exponent(self):
        with pytest.raises(QuadratureDivergence):
            gaussian_coupling(1.0, 0.0, 0.0, 4)

    def test_symmetry_exact(self):
        B = gaussian_coupling(-0.5, 0.3, -0.2, 9)
        assert np.array_equal(B.entries, B.entries.T)


class TestCutoffCoupling:
    def test_zero_window_is_identity(self):
        full = gaussian_coupling(-1.0, 1.0, 0.0, 6)
        hat, f = cutoff_coupling(-1.0, 1.0, 0.0, 0.0, 6)
        assert np.array_equal(f, np.zeros((6, 6)))
        assert np.allclose(hat.entries, full.entries, atol=1e-14)

    def test_whole_line_window_empties_coupling(self):
        hat, f = cutoff_coupling(-1.0, 1.0, 0.0, 20.0, 6)
        full = gaussian_coupling(-1.0, 1.0, 0.0, 6)
        assert np.max(np.abs(f - full.entries)) < 1e-10
        assert np.max(np.abs(hat.entries)) < 1e-10

    def test_f00_monotone_in_eps(self):
        vals = [cutoff_coupling(-1.0, 0.0, 0.0, e, 4)[1][0, 0]
                for e in (0.1, 0.3, 0.7, 1.5)]
        assert np.all(np.diff(vals) > 0)

    def test_window_linear_in_small_eps(self):
        # |f_ij(ε)| ≤ C·ε for bounded integrands; measure the slope
        eps = np.array([1e-3, 2e-3, 4e-3, 8e-3])
        f00 = np.array([cutoff_coupling(-1.0, 1.0, 0.0, e, 4)[1][0, 0] for e in eps])
        slope = np.polyfit(np.log(eps), np.log(f00), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.05)


class TestConnectivity:
    def test_identity_disconnected(self):
        B = CouplingMatrix(np.eye(2), -1.0, 0.0, 0.0)
        connected, parts = minor_connectivity(B, 2, 1e-12)
        assert not connected
        assert parts == [[0], [1]]

    def test_tridiagonal_chain_connected(self):
        m = np.diag(np.ones(5)) + np.diag(0.5 * np.ones(4), 1) + np.diag(0.5 * np.ones(4), -1)
        B = CouplingMatrix(m, -1.0, 0.0, 0.0)
        for k in range(2, 6):
            assert minor_connectivity(B, k, 1e-12)[0]

    def test_gaussian_coupling_connected(self):
        B = gaussian_coupling(-1.0, 1.0, 0.0, 8)
        connected, _ = minor_connectivity(B, 6, 1e-12)
        assert connected

    def test_default_zero_tol_scales(self):
        B = gaussian_coupling(-1.0, 1.0, 0.0, 6)
        assert default_zero_tol(B) == pytest.approx(1e-12 * np.max(np.abs(B.entries)))


class TestRationalRelations:
    def test_equal_gaps_found(self):
        rel = gap_rational_relation(np.array([2.0, 2.0, 2.0]), 50, 1e-9)
        assert rel is not None
        assert np.any(rel != 0)
        assert abs(rel @ np.array([2.0, 2.0, 2.0])) < 1e-9

    def test_sqrt2_independent(self):
        assert gap_rational_relation(np.array([1.0, np.sqrt(2.0)]), 50, 1e-9) is None

    def test_unperturbed_oscillator_refuted(self):
        gaps = perturbed_spectrum(0.0, -1.0, 1.0, 0.0, 6, 24).gaps
        rel = gap_rational_relation(gaps, 10, 1e-7)
        assert rel is not None

    def test_lattice_route_matches(self):
        # force the PSLQ branch with a wide bound and many gaps
        g = np.array([1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0])
        rel = gap_rational_relation(g, 1000, 1e-10)
        assert rel is not None
        assert abs(rel @ g) < 1e-10


class TestPerturbedSpectrum:
    def test_unperturbed_exact(self):
        gv = perturbed_spectrum(0.0, -1.0, 1.0, 0.0, 8, 32)
        assert np.max(np.abs(gv.eigenvalues - (2 * np.arange(8) + 1))) < 1e-10
        assert np.allclose(gv.gaps, 2.0, atol=1e-10)

    def test_first_order_perturbation(self):
        mu = 1e-4
        B = gaussian_coupling(-1.0, 1.0, 0.0, 8)
        gv = perturbed_spectrum(mu, -1.0, 1.0, 0.0, 8, 48)
        predicted = 2 * np.arange(8) + 1 + mu * np.diag(B.entries)[:8]
        assert np.max(np.abs(gv.eigenvalues - predicted)) < 1e-6

    def test_moderate_mu_distinct_gaps(self):
        gv = perturbed_spectrum(1.0, -1.0, 1.0, 0.0, 8, 64)
        gaps = gv.gaps
        diffs = np.abs(gaps[:, None] - gaps[None, :])[np.triu_indices(len(gaps), 1)]
        assert np.min(diffs) > 1e-6

    def test_truncation_guard(self):
        with pytest.raises(ValueError):
            perturbed_spectrum(0.0, -1.0, 0.0, 0.0, 10, 12)


class TestInvariantDisc:
    def test_disc_inside_cutoff_is_invariant(self):
        controls = sample_controls(5, 30, duration=3.0, amplitude=1000.0)
        report = invariant_disc_check(0.5, controls, horizon=3.0, r0=0.1)
        assert report.invariant
        assert report.max_drift < 1e-6

    def test_uncontrolled_rotation_conserves_radius(self):
        report = invariant_disc_check(0.5, [ControlSignal.constant(0.0, 3.0)],
                                      horizon=3.0, r0=1.7)
        assert report.max_drift < 1e-6

    def test_large_disc_not_invariant(self):
        controls = [ControlSignal.constant(300.0, 1.0),
                    ControlSignal.constant(-300.0, 1.0)] + sample_controls(
                        9, 3, duration=1.0, amplitude=1000.0)
        report = invariant_disc_check(0.5, controls, horizon=1.0, r0=1.2)
        assert report.max_drift > 1e-3
