import numpy as np
import pytest

from sclab.errors import CausticReached, MaskViolation
from sclab.geometry import BoxRegion, PotentialField, make_potential
from sclab.schrodinger import SpatialGrid
from sclab.wkb import (CutoffFunction, TimePotential, duhamel_delta,
                       first_conjugate_time, shoot_characteristics, wkb_field,
                       wkb_residual)


def quad_phase(sign=1.0):
    """S0 = ±x²/2, the free-flow fan with closed form x(t) = x0(1 ± t)."""
    return make_potential("harmonic", 1, k=sign)


def seeds_on(lo=-1.0, hi=1.0, n=400):
    return np.linspace(lo, hi, n)


class TestShootCharacteristics:
    def test_expanding_quadratic_phase(self):
        fan = shoot_characteristics(quad_phase(+1.0), None, seeds_on(), 0.5, 1e-3)
        k = fan.time_index(0.5)
        assert np.max(np.abs(fan.x[k] - fan.seeds * 1.5)) < 1e-9
        assert np.max(np.abs(fan.J[k] - 1.5)) < 1e-9
        # action along the characteristic: S = x0²/2 + t·x0²/2
        assert np.max(np.abs(fan.S[k] - 0.75 * fan.seeds ** 2)) < 1e-9

    def test_static_fan(self):
        zero = make_potential("zero", 1)
        fan = shoot_characteristics(zero, None, seeds_on(), 0.4, 1e-3)
        assert np.max(np.abs(fan.x - fan.seeds[None, :])) < 1e-12
        assert np.max(np.abs(fan.J - 1.0)) < 1e-12
        assert np.max(np.abs(fan.S)) < 1e-12

    def test_contracting_phase_heads_to_caustic(self):
        fan = shoot_characteristics(quad_phase(-1.0), None, seeds_on(), 0.8, 1e-3)
        k = fan.time_index(0.8)
        assert np.max(np.abs(fan.x[k] - fan.seeds * 0.2)) < 1e-9
        assert np.max(np.abs(fan.J[k] - 0.2)) < 1e-9

    def test_jacobian_identity(self):
        # exp(∫ΔS dτ) must reproduce the variational J while |J| > 0.05
        V = make_potential("cosine", 1, amplitude=0.3)
        fan = shoot_characteristics(quad_phase(+1.0), V, seeds_on(n=200), 0.6, 5e-4)
        lapS = fan.laplacian_S()
        dt = fan.times[1] - fan.times[0]
        integral = np.zeros_like(lapS)
        integral[1:] = 0.5 * dt * np.cumsum(lapS[1:] + lapS[:-1], axis=0)
        usable = np.abs(fan.J) > 0.05
        rel = np.abs(np.exp(integral) - fan.J) / np.abs(fan.J)
        assert np.max(rel[usable]) < 1e-4

    def test_time_dependent_potential(self):
        # V(t, x) = t·x: ṗ = -t ⇒ p = p0 - t²/2, x = x0 + p0·t - t³/6
        Vt = TimePotential(value=lambda t, x: t * x,
                           gradient=lambda t, x: t * np.ones_like(x))
        fan = shoot_characteristics(quad_phase(+1.0), Vt, seeds_on(), 0.5, 1e-3)
        k = fan.time_index(0.5)
        expect = fan.seeds + fan.seeds * 0.5 - 0.5 ** 3 / 6.0
        assert np.max(np.abs(fan.x[k] - expect)) < 1e-8


class TestConjugateTime:
    def test_contracting_phase_focuses_at_one(self):
        fan = shoot_characteristics(quad_phase(-1.0), None, seeds_on(), 1.5, 1e-3)
        tc = first_conjugate_time(fan)
        assert np.max(np.abs(tc - 1.0)) < 1e-6

    def test_expanding_phase_never_focuses(self):
        fan = shoot_characteristics(quad_phase(+1.0), None, seeds_on(), 1.5, 1e-3)
        assert np.all(first_conjugate_time(fan) == fan.horizon)

    def test_flat_phase_never_focuses(self):
        fan = shoot_characteristics(make_potential("zero", 1), None, seeds_on(), 1.0, 1e-3)
        assert np.all(first_conjugate_time(fan) == fan.horizon)

    def test_compact_seed_floor_positive(self):
        fan = shoot_characteristics(quad_phase(-1.0), make_potential("cosine", 1),
                                    seeds_on(n=120), 2.0, 1e-3)
        assert float(np.min(first_conjugate_time(fan))) > 0.0


def demo_grid(n=512):
    return SpatialGrid(((-np.pi, 2 * np.pi, n),))


class TestWKBField:
    def test_initial_time_reproduces_data(self):
        fan = shoot_characteristics(quad_phase(+1.0), None, seeds_on(), 0.3, 1e-3)
        a0 = make_potential("gaussian", 1, amplitude=1.0, width=0.25)
        field = wkb_field(fan, a0, demo_grid(), 0.0)
        gx = field.grid.points(0)
        inside = field.valid_mask
        assert np.max(np.abs(field.a[inside] - a0.value(gx[inside, None]))) < 1e-6
        assert np.max(np.abs(field.S[inside] - 0.5 * gx[inside] ** 2)) < 1e-6

    def test_amplitude_decay_closed_form(self):
        # a(t) = a0/√(1+t) for the expanding quadratic phase
        fan = shoot_characteristics(quad_phase(+1.0), None, seeds_on(), 0.5, 1e-3)
        ones = PotentialField(value=lambda x: np.ones(np.shape(x)[:-1]),
                              gradient=lambda x: np.zeros_like(np.asarray(x, dtype=float)))
        field = wkb_field(fan, ones, demo_grid(), 0.5)
        inside = field.valid_mask
        assert np.max(np.abs(field.a[inside] - 1.0 / np.sqrt(1.5))) < 1e-9

    def test_mass_conservation(self):
        fan = shoot_characteristics(quad_phase(+1.0), None, seeds_on(n=800), 0.4, 1e-3)
        a0 = make_potential("gaussian", 1, amplitude=1.0, width=0.2)
        field = wkb_field(fan, a0, demo_grid(1024), 0.4)
        gx = field.grid.points(0)
        m = field.valid_mask
        mass_t = np.trapezoid(field.a[m] ** 2, gx[m])
        a0_seed = a0.value(fan.seeds[:, None])
        mass_0 = np.trapezoid(a0_seed ** 2, fan.seeds)
        assert abs(mass_t - mass_0) < 1e-4

    def test_caustic_guard_raises(self):
        fan = shoot_characteristics(quad_phase(-1.0), None, seeds_on(), 0.99, 1e-3)
        a0 = make_potential("gaussian", 1, width=0.3)
        with pytest.raises(CausticReached):
            wkb_field(fan, a0, demo_grid(), 0.99)


class TestCutoff:
    def test_support_and_bounds(self):
        chi = CutoffFunction(BoxRegion(((-0.5, 0.5),)))
        x = np.linspace(-1.0, 1.0, 801)[:, None]
        v = chi.chi(x)
        assert np.all(v >= 0) and np.all(v <= 1)
        assert np.all(v[np.abs(x[:, 0]) >= 0.5] == 0)
        assert v[400] == pytest.approx(1.0)  # center

    def test_derivatives_match_finite_differences(self):
        for plateau in (0.0, 0.5):
            chi = CutoffFunction(BoxRegion(((-0.6, 0.8),)), plateau=plateau)
            x = np.linspace(-0.55, 0.75, 301)[:, None]
            h = 1e-6
            fd1 = (chi.chi(x + h) - chi.chi(x - h)) / (2 * h)
            fd2 = (chi.chi(x + h) - 2 * chi.chi(x) + chi.chi(x - h)) / h ** 2
            assert np.max(np.abs(chi.grad_chi(x)[:, 0] - fd1)) < 1e-5
            assert np.max(np.abs(chi.laplacian_chi(x) - fd2)) < 2e-3

    def test_plateau_region_is_one(self):
        chi = CutoffFunction(BoxRegion(((-1.0, 1.0),)), plateau=0.6)
        x = np.linspace(-0.59, 0.59, 101)[:, None]
        assert np.max(np.abs(chi.chi(x) - 1.0)) == 0.0
        assert np.max(np.abs(chi.grad_chi(x))) == 0.0
        assert np.max(np.abs(chi.laplacian_chi(x))) == 0.0

    def test_2d_product(self):
        chi = CutoffFunction(BoxRegion(((-0.5, 0.5), (-0.4, 0.4))))
        pt = np.array([0.0, 0.0])
        assert chi.chi(pt) == pytest.approx(1.0)
        assert chi.chi(np.array([0.6, 0.0])) == 0.0


class TestResidual:
    def test_linear_amplitude_no_bulk_term(self):
        # a linear in x on supp χ ⇒ Δa = 0: only cutoff-derivative terms remain
        fan = shoot_characteristics(make_potential("zero", 1), None,
                                    seeds_on(-2.0, 2.0, 600), 0.1, 1e-3)
        a0 = make_potential("linear", 1, slope=0.3, offset=1.0)
        field = wkb_field(fan, a0, demo_grid(), 0.0)
        assert np.max(np.abs(field.lap_a[field.valid_mask])) < 1e-6
        chi = CutoffFunction(BoxRegion(((-1.0, 1.0),)))
        r = wkb_residual(field, chi)
        mesh = field.grid.mesh()
        bulk = chi.chi(mesh) * 0.5 * field.lap_a
        assert np.max(np.abs(bulk)) < 1e-6
        assert np.max(np.abs(r)) > 0  # χ-derivative terms are alive

    def test_gaussian_bump_matches_fd_laplacian(self):
        # plateau cutoff ≡ 1 where the bump lives: r = (Δa0/2)·e^{iS0}
        fan = shoot_characteristics(make_potential("zero", 1), None,
                                    seeds_on(-2.0, 2.0, 3200), 0.1, 1e-3)
        a0 = make_potential("gaussian", 1, amplitude=1.0, width=0.2)
        grid = demo_grid(1024)
        field = wkb_field(fan, a0, grid, 0.0)
        chi = CutoffFunction(BoxRegion(((-1.8, 1.8),)), plateau=0.55)
        r = wkb_residual(field, chi)
        gx = grid.points(0)
        # independent oracle: 4th-order 5-point Laplacian of the callback
        h = 1e-4
        stack = [a0.value((gx + s * h)[:, None]) for s in (-2, -1, 0, 1, 2)]
        fd_lap = (-stack[0] + 16 * stack[1] - 30 * stack[2]
                  + 16 * stack[3] - stack[4]) / (12 * h ** 2)
        window = np.abs(gx) < 0.9  # strictly inside the plateau
        assert np.max(np.abs(r[window] - 0.5 * fd_lap[window])) < 1e-6

    def test_control_independence_of_magnitude(self):
        fan = shoot_characteristics(quad_phase(+1.0), None, seeds_on(n=400), 0.2, 1e-3)
        a0 = make_potential("gaussian", 1, width=0.2)
        field = wkb_field(fan, a0, demo_grid(), 0.2)
        chi = CutoffFunction(BoxRegion(((-0.8, 0.8),)))
        r1 = wkb_residual(field, chi, control_phase=np.exp(-1j * 0.37))
        r2 = wkb_residual(field, chi, control_phase=np.exp(+1j * 2.11))
        scale = np.max(np.abs(r1))
        assert np.max(np.abs(np.abs(r1) - np.abs(r2))) < 1e-15 * scale

    def test_hbar_scaling_of_bulk_term(self):
        # with χ ≡ 1 (no cutoff) the residual is exactly ħ²·(Δa/2)·e^{iS/ħ}
        fan = shoot_characteristics(make_potential("zero", 1), None,
                                    seeds_on(-2.0, 2.0, 800), 0.1, 1e-3, hbar=1.0)
        a0 = make_potential("gaussian", 1, width=0.3)
        field = wkb_field(fan, a0, demo_grid(), 0.0)
        r1 = wkb_residual(field, None, hbar=1.0)
        r2 = wkb_residual(field, None, hbar=0.5)
        m = field.valid_mask
        assert np.max(np.abs(np.abs(r2[m]) - 0.25 * np.abs(r1[m]))) < 1e-12

    def test_mask_violation(self):
        fan = shoot_characteristics(make_potential("zero", 1), None,
                                    seeds_on(-0.5, 0.5, 200), 0.1, 1e-3)
        a0 = make_potential("gaussian", 1, width=0.2)
        field = wkb_field(fan, a0, demo_grid(), 0.1)
        chi = CutoffFunction(BoxRegion(((-2.0, 2.0),)))  # wider than the fan
        with pytest.raises(MaskViolation):
            wkb_residual(field, chi)


class TestDuhamelDelta:
    def test_zero_series(self):
        assert duhamel_delta(np.zeros(11), 0.03) == 0.0

    def test_constant_series(self):
        n = 31
        assert duhamel_delta(np.ones(n), 0.3 / (n - 1)) == pytest.approx(0.3)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        series = rng.uniform(0.0, 1.0, 25)
        assert duhamel_delta(2 * series, 0.01) == pytest.approx(
            2 * duhamel_delta(series, 0.01))


class TestSchrodingerOperatorCheck:
    def test_ansatz_satisfies_pde_up_to_half_lap_a(self):
        # (i∂_t + Δ/2 − V)(a e^{iS}) = (Δa/2)e^{iS}: finite differences in t
        # and x on the assembled fields, V = 0, expanding quadratic phase
        fan = shoot_characteristics(quad_phase(+1.0), None,
                                    seeds_on(-2.0, 2.0, 1600), 0.2, 1e-3)
        a0 = make_potential("gaussian", 1, width=0.3)
        grid = demo_grid(2048)
        dt = float(fan.times[1] - fan.times[0])
        k = fan.time_index(0.1)
        fields = [wkb_field(fan, a0, grid, float(fan.times[k + s])) for s in (-1, 0, 1)]
        psi = [f.psi_tilde() for f in fields]
        gx = grid.points(0)
        h = gx[1] - gx[0]
        window = np.abs(gx) < 1.0
        dpsi_dt = (psi[2] - psi[0]) / (2 * dt)
        lap_psi = np.zeros_like(psi[1])
        lap_psi[1:-1] = (psi[1][2:] - 2 * psi[1][1:-1] + psi[1][:-2]) / h ** 2
        lhs = 1j * dpsi_dt + 0.5 * lap_psi
        rhs = 0.5 * fields[1].lap_a * np.exp(1j * fields[1].S)
        err = np.max(np.abs(lhs[window] - rhs[window]))
        # discretization floor: O(h²·scales) + O(dt²); generous envelope
        assert err < 5e-3
