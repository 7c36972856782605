import numpy as np
import pytest

from sclab.dynamics import (ControlSignal, HamiltonianSpec, evolve,
                            flow_jacobian, hamiltonian, sample_controls)
from sclab.errors import TrajectoryEscape
from sclab.geometry import ChartSpace, PhasePoint, make_potential


def harmonic_linear_spec():
    space = ChartSpace(dimension=1)
    return HamiltonianSpec(space=space,
                           V=make_potential("harmonic", 1, k=1.0),
                           W=make_potential("linear", 1, slope=1.0))


def free_spec(dim=1):
    space = ChartSpace(dimension=dim)
    return HamiltonianSpec(space=space, V=make_potential("zero", dim),
                           W=make_potential("zero", dim))


class TestHamiltonian:
    def test_rest_state(self):
        spec = harmonic_linear_spec()
        lam = PhasePoint(np.array([0.0]), np.array([0.0]))
        assert hamiltonian(spec, lam, 5.0) == pytest.approx(0.0)

    def test_unit_energy(self):
        spec = harmonic_linear_spec()
        lam = PhasePoint(np.array([1.0]), np.array([1.0]))
        # ½p² + x²/2 = ½ + ½
        assert hamiltonian(spec, lam, 0.0) == pytest.approx(1.0)

    def test_with_control(self):
        spec = harmonic_linear_spec()
        lam = PhasePoint(np.array([1.0]), np.array([0.0]))
        # ½·0 + ½ + 2·1
        assert hamiltonian(spec, lam, 2.0) == pytest.approx(2.5)


class TestEvolve:
    def test_harmonic_half_period(self):
        spec = harmonic_linear_spec()
        u = ControlSignal.constant(0.0, np.pi)
        traj = evolve(spec, PhasePoint(np.array([1.0]), np.array([0.0])), u, 1e-3)
        end = traj.endpoint
        assert abs(end.x[0] + 1.0) < 1e-6
        assert abs(end.p[0]) < 1e-6

    def test_free_particle_exact(self):
        spec = free_spec()
        u = ControlSignal(np.array([0.0, 0.4, 1.0]), np.array([3.0, -7.0]))
        traj = evolve(spec, PhasePoint(np.array([0.5]), np.array([2.0])), u, 1e-2)
        assert traj.endpoint.x[0] == pytest.approx(0.5 + 2.0 * 1.0, abs=1e-10)

    def test_constant_force_closed_form(self):
        # V=0, W=x, u≡−1 on [0,1]: ṗ=+1 ⇒ p=t, x=t²/2
        space = ChartSpace(dimension=1)
        spec = HamiltonianSpec(space=space, V=make_potential("zero", 1),
                               W=make_potential("linear", 1, slope=1.0))
        u = ControlSignal.constant(-1.0, 1.0)
        traj = evolve(spec, PhasePoint(np.array([0.0]), np.array([0.0])), u, 1e-3)
        assert traj.endpoint.x[0] == pytest.approx(0.5, abs=1e-9)
        assert traj.endpoint.p[0] == pytest.approx(1.0, abs=1e-9)

    def test_energy_conserved_per_subinterval(self):
        spec = harmonic_linear_spec()
        u = ControlSignal(np.array([0.0, 0.7, 1.5]), np.array([2.0, -1.0]))
        lam0 = PhasePoint(np.array([0.4]), np.array([-0.3]))
        traj = evolve(spec, lam0, u, 1e-3)
        for a, b, uval in u.segments():
            idx = np.where((traj.times >= a - 1e-12) & (traj.times <= b + 1e-12))[0]
            energies = [hamiltonian(spec, traj.state(i), uval) for i in idx]
            e0 = energies[0]
            drift = max(abs(e - e0) for e in energies)
            assert drift <= 1e-7 * max(1.0, abs(e0))

    def test_composition(self):
        spec = harmonic_linear_spec()
        lam0 = PhasePoint(np.array([0.2]), np.array([1.0]))
        u_full = ControlSignal.constant(1.5, 1.0)
        full = evolve(spec, lam0, u_full, 1e-3).endpoint
        half1 = evolve(spec, lam0, ControlSignal.constant(1.5, 0.5), 1e-3).endpoint
        half2 = evolve(spec, half1, ControlSignal.constant(1.5, 0.5), 1e-3).endpoint
        assert np.max(np.abs(half2.as_state() - full.as_state())) < 1e-7

    def test_escape_guard(self):
        # strong repulsive quadratic control blows up in finite time
        space = ChartSpace(dimension=1)
        spec = HamiltonianSpec(space=space, V=make_potential("zero", 1),
                               W=make_potential("harmonic", 1, k=1.0))
        u = ControlSignal.constant(-80.0, 8.0)
        with pytest.raises(TrajectoryEscape):
            evolve(spec, PhasePoint(np.array([1.0]), np.array([0.0])), u, 1e-3)

    def test_csv_export(self):
        spec = free_spec()
        u = ControlSignal.constant(2.0, 0.1)
        traj = evolve(spec, PhasePoint(np.array([0.0]), np.array([1.0])), u, 0.05)
        text = traj.to_csv(header_comment="seed=0")
        lines = text.strip().splitlines()
        assert lines[0] == "# seed=0"
        assert lines[1] == "t,x_1,p_1,u"
        assert len(lines) == 2 + len(traj)


class TestFlowJacobian:
    def test_time_zero_identity(self):
        spec = harmonic_linear_spec()
        J = flow_jacobian(spec, PhasePoint(np.array([0.3]), np.array([0.1])),
                          ControlSignal.constant(1.0, 1.0), 0.0)
        assert np.array_equal(J, np.eye(2))

    def test_harmonic_rotation(self):
        spec = harmonic_linear_spec()
        T = 0.8
        J = flow_jacobian(spec, PhasePoint(np.array([0.0]), np.array([0.0])),
                          ControlSignal.constant(0.0, T), T, step=1e-3)
        expect = np.array([[np.cos(T), np.sin(T)], [-np.sin(T), np.cos(T)]])
        assert np.max(np.abs(J - expect)) < 1e-6

    def test_free_particle_shear(self):
        spec = free_spec()
        T = 1.7
        J = flow_jacobian(spec, PhasePoint(np.array([0.2]), np.array([-0.4])),
                          ControlSignal.constant(0.0, T), T, step=1e-2)
        assert np.max(np.abs(J - np.array([[1.0, T], [0.0, 1.0]]))) < 1e-8

    def test_matches_finite_differences(self):
        spec = harmonic_linear_spec()
        lam0 = PhasePoint(np.array([0.5]), np.array([-0.2]))
        u = ControlSignal(np.array([0.0, 0.3, 1.0]), np.array([1.0, -2.0]))
        J = flow_jacobian(spec, lam0, u, 1.0, step=1e-3)
        h = 1e-5
        fd = np.empty((2, 2))
        for k in range(2):
            zp, zm = lam0.as_state(), lam0.as_state()
            zp[k] += h
            zm[k] -= h
            ep = evolve(spec, PhasePoint(zp[:1], zp[1:]), u, 1e-3).endpoint.as_state()
            em = evolve(spec, PhasePoint(zm[:1], zm[1:]), u, 1e-3).endpoint.as_state()
            fd[:, k] = (ep - em) / (2 * h)
        assert np.max(np.abs(J - fd)) < 1e-3 * max(1.0, np.max(np.abs(fd)))

    def test_symplectic_determinant_sweep(self):
        rng = np.random.default_rng(7)
        spec = harmonic_linear_spec()
        for _ in range(5):
            lam0 = PhasePoint(rng.normal(size=1), rng.normal(size=1))
            u = sample_controls(rng, 1, duration=float(rng.uniform(0.3, 1.2)),
                                amplitude=2.0, max_breakpoints=4)[0]
            J = flow_jacobian(spec, lam0, u, u.duration, step=1e-3)
            assert abs(np.linalg.det(J) - 1.0) < 1e-6


class TestControlSignal:
    def test_value_and_integral(self):
        u = ControlSignal(np.array([0.0, 1.0, 3.0]), np.array([2.0, -1.0]))
        assert u.value_at(0.5) == 2.0
        assert u.value_at(1.0) == -1.0
        assert u.value_at(3.0) == -1.0
        assert u.integral(2.0) == pytest.approx(2.0 - 1.0)
        assert u.integral(3.0) == pytest.approx(0.0)

    def test_restricted(self):
        u = ControlSignal(np.array([0.0, 1.0, 3.0]), np.array([2.0, -1.0]))
        r = u.restricted(0.5)
        assert r.duration == 0.5
        assert r.values.shape[0] == 1

    def test_round_trip_text(self):
        u = ControlSignal(np.array([0.0, 0.25, 1.0]), np.array([[1.0, 2.0], [-0.5, 0.0]]))
        v = ControlSignal.from_text(u.to_text())
        assert np.array_equal(u.breakpoints, v.breakpoints)
        assert np.array_equal(u.values, v.values)

    def test_invalid_breakpoints(self):
        with pytest.raises(ValueError):
            ControlSignal(np.array([0.0, 0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            ControlSignal(np.array([0.5, 1.0]), np.array([1.0]))

    def test_sampler_determinism(self):
        a = sample_controls(3, 5, duration=1.0, amplitude=2.0)
        b = sample_controls(3, 5, duration=1.0, amplitude=2.0)
        for ua, ub in zip(a, b):
            assert np.array_equal(ua.breakpoints, ub.breakpoints)
            assert np.array_equal(ua.values, ub.values)

    def test_sampler_bounds(self):
        for u in sample_controls(0, 20, duration=2.0, amplitude=5.0,
                                 scheme="lhs", include_extremes=True):
            assert u.duration == pytest.approx(2.0)
            assert np.max(np.abs(u.values)) <= 5.0 + 1e-12
