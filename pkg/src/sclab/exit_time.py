"""Control-uniform lower bounds on the exit time from a region.

When the control potential W is constant in the base-factor coordinates on a
box Ω (so the control force has no component along those axes) and the drift
force is bounded there, ‖d₁V(x, y)‖ ≤ c(x), the (x, pˣ) dynamics are
sandwiched between the autonomous comparison systems

    ẋ = gₓ pˣ,   ṗˣ_i = -½ ∂gₓ/∂x pˣpˣ ± K(x)·c(x),

one per sign pattern.  Their exit time from Ω is therefore a lower bound for
the true exit time under *every* admissible control, which the ensemble
sampler probes empirically.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import ControlSignal, HamiltonianSpec
from .errors import (HypothesisViolated, OrderingViolated, StepTooCoarse,
                     TrajectoryEscape)
from .geometry import BoxRegion, PhasePoint, cometric_at, dcometric_at
from .integrate import bisect_event, rk4_step, rk4_trajectory

ORDERING_SLACK = 1e-9
EXIT_TIME_TOL = 1e-8


@dataclass(frozen=True)
class ComparisonCertificate:
    """Trajectories of both systems plus the componentwise ordering margin."""

    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    max_violation: float

    @property
    def ordered(self) -> bool:
        return self.max_violation <= ORDERING_SLACK


@dataclass(frozen=True)
class ExitReport:
    """Analytic bound vs sampled exits over a control ensemble.

    The content of the bound is sampled_min_exit ≥ analytic_bound; a breach is
    a failed test, not an error state, so the report only records it.
    """

    analytic_bound: float
    sampled_min_exit: float
    ensemble_size: int
    witness_control: Optional[ControlSignal]
    exit_times: np.ndarray
    horizon: float

    @property
    def bound_respected(self) -> bool:
        return self.sampled_min_exit >= self.analytic_bound - 1e-12

    def to_csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        buf.write(f"# analytic_bound={self.analytic_bound!r} horizon={self.horizon!r}\n")
        writer = csv.writer(buf)
        writer.writerow(["control_index", "exit_time"])
        for i, t in enumerate(self.exit_times):
            writer.writerow([i, repr(float(t))])
        return buf.getvalue()


def chaplygin_compare(f: Callable, f_tilde: Callable, z0, z0_tilde,
                      T: float, step: float) -> ComparisonCertificate:
    """Integrate ż = f(z) and ż̃ = f̃(z̃) and certify z(t) ≤ z̃(t) componentwise.

    Hypotheses (f ≤ f̃ on the sampled states, z0 ≤ z̃0) are checked along the
    way; any breach beyond a 1e-9 slack raises OrderingViolated.
    """
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    z0t = np.asarray(z0_tilde, dtype=float).reshape(-1)
    if np.any(z0 > z0t + ORDERING_SLACK):
        raise OrderingViolated("initial states are not ordered")
    t_lo, lower = rk4_trajectory(lambda t, z: np.asarray(f(z), dtype=float),
                                 z0, 0.0, T, step)
    t_hi, upper = rk4_trajectory(lambda t, z: np.asarray(f_tilde(z), dtype=float),
                                 z0t, 0.0, T, step)
    if t_lo.size != t_hi.size:
        raise ValueError("internal grid mismatch")
    margin = lower - upper
    max_violation = float(np.max(margin))
    if max_violation > ORDERING_SLACK:
        k = np.unravel_index(np.argmax(margin), margin.shape)
        raise OrderingViolated(
            f"ordering failed at t={t_lo[k[0]]:.6g} by {max_violation:.3e}")
    # field-ordering spot check along the certified lower trajectory
    for z in lower[:: max(1, lower.shape[0] // 64)]:
        if np.any(np.asarray(f(z)) > np.asarray(f_tilde(z)) + ORDERING_SLACK):
            raise OrderingViolated("field ordering f ≤ f̃ fails on the sampled domain")
    return ComparisonCertificate(t_lo, lower, upper, max_violation)


def _split_axes(spec: HamiltonianSpec) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if spec.space.product_split is not None:
        return spec.space.product_split
    return tuple(range(spec.space.dimension)), ()


def _omega_grid(Omega: BoxRegion, n1_axes: Sequence[int], pts_per_axis: int = 9) -> np.ndarray:
    axes = []
    for k in n1_axes:
        lo, hi = Omega.bounds[k]
        axes.append(np.linspace(lo, hi, pts_per_axis))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def check_w_constancy(spec: HamiltonianSpec, Omega: BoxRegion, lam0: PhasePoint,
                      tol: float = 1e-9) -> float:
    """Max over an Ω × (sample y) grid of ‖d₁W‖; raises HypothesisViolated."""
    n1_axes, n2_axes = _split_axes(spec)
    grid1 = _omega_grid(Omega, n1_axes)
    y_samples = [np.asarray(lam0.x, dtype=float)[list(n2_axes)]] if n2_axes else [np.empty(0)]
    if n2_axes:
        base = y_samples[0]
        y_samples += [base + 0.7, base - 1.3, np.zeros_like(base)]
    worst = 0.0
    for W in spec.W:
        for y in y_samples:
            pts = np.zeros((grid1.shape[0], spec.space.dimension))
            pts[:, list(n1_axes)] = grid1
            if n2_axes:
                pts[:, list(n2_axes)] = y
            grads = np.asarray(W.gradient(pts), dtype=float)
            worst = max(worst, float(np.max(np.abs(grads[:, list(n1_axes)]))))
    if worst >= tol:
        raise HypothesisViolated(
            f"control potential varies along the base factor on Ω (max ‖d₁W‖ = {worst:.3e})")
    return worst


def _default_K(spec: HamiltonianSpec, n1_axes: Sequence[int]) -> Callable:
    """Norm-equivalence factor: 1 on flat charts, max_i √g^{ii} otherwise."""
    if spec.V.K_bound is not None:
        return spec.V.K_bound
    if spec.space.is_flat:
        return lambda x: 1.0
    def K(x_full):
        g = cometric_at(spec.space, x_full)
        return float(np.sqrt(np.max(np.diag(g)[list(n1_axes)])))
    return K


def _comparison_rhs(spec: HamiltonianSpec, n1_axes: Sequence[int],
                    signs: np.ndarray, lam0: PhasePoint) -> Callable:
    """Autonomous (x, pˣ) system with forcing σ_i·K(x)·c(x)."""
    c = spec.V.c_bound
    if c is None:
        raise ValueError("exit bound needs the c(x) metadata callback on V")
    K = _default_K(spec, n1_axes)
    n1 = len(n1_axes)
    flat = spec.space.is_flat
    x_full0 = np.array(lam0.x, dtype=float)

    def embed(x1):
        x_full = x_full0.copy()
        x_full[list(n1_axes)] = x1
        return x_full

    def rhs(_t, z):
        x1, p1 = z[:n1], z[n1:]
        x_full = embed(x1)
        force = signs * (K(x_full) * float(c(x_full)))
        if flat:
            return np.concatenate([p1, force])
        g = cometric_at(spec.space, x_full)[np.ix_(list(n1_axes), list(n1_axes))]
        dg = dcometric_at(spec.space, x_full)[
            np.ix_(list(n1_axes), list(n1_axes), list(n1_axes))]
        pdot = -0.5 * np.einsum("jki,j,k->i", dg, p1, p1) + force
        return np.concatenate([g @ p1, pdot])

    return rhs


def exit_lower_bound(spec: HamiltonianSpec, Omega: BoxRegion, lam0: PhasePoint,
                     horizon: float = 10.0, step: float = 1e-3) -> float:
    """Control-independent lower bound for the exit time from Ω.

    Integrates the comparison system for every sign pattern and takes the
    minimal exit time (events refined by bisection to 1e-8); trajectories
    that never leave before the horizon contribute the horizon.
    """
    n1_axes, _ = _split_axes(spec)
    check_w_constancy(spec, Omega, lam0)
    x1_0 = np.asarray(lam0.x, dtype=float)[list(n1_axes)]
    p1_0 = np.asarray(lam0.p, dtype=float)[list(n1_axes)]
    omega1 = BoxRegion(tuple(Omega.bounds[k] for k in n1_axes))
    if omega1.signed_gap(x1_0) <= 0.0:
        return 0.0
    n1 = len(n1_axes)
    best = horizon
    for bits in range(2 ** n1):
        signs = np.array([1.0 if (bits >> i) & 1 else -1.0 for i in range(n1)])
        rhs = _comparison_rhs(spec, n1_axes, signs, lam0)
        times, states = rk4_trajectory(rhs, np.concatenate([x1_0, p1_0]),
                                       0.0, horizon, step)
        gaps = np.array([omega1.signed_gap(s[:n1]) for s in states])
        out = np.where(gaps <= 0.0)[0]
        if out.size == 0:
            continue
        k = int(out[0])
        lo_t, lo_z = times[k - 1], states[k - 1]

        def gap_at(t):
            if t <= lo_t:
                return float(gaps[k - 1])
            z = lo_z
            nsub = 8
            h = (t - lo_t) / nsub
            tt = lo_t
            for _ in range(nsub):
                z = rk4_step(rhs, tt, z, h)
                tt += h
            return omega1.signed_gap(z[:n1])

        t_exit = bisect_event(gap_at, float(lo_t), float(times[k]), tol=EXIT_TIME_TOL)
        best = min(best, t_exit)
    return best


# ---------------------------------------------------------------------------
# Ensemble sampling


def _batched_rhs(spec: HamiltonianSpec, u_values: np.ndarray) -> Callable:
    """Vectorized flow over a (m, 2n) batch; requires a flat chart and
    vectorized potential callbacks (registry fields qualify)."""
    n = spec.space.dimension
    u_values = np.atleast_2d(np.asarray(u_values, dtype=float).T).T  # (m, n_controls)

    def rhs(_t, Z):
        X, P = Z[:, :n], Z[:, n:]
        force = np.asarray(spec.V.gradient(X), dtype=float).copy()
        for a, W in enumerate(spec.W):
            force += u_values[:, a, None] * np.asarray(W.gradient(X), dtype=float)
        return np.concatenate([P, -force], axis=1)

    return rhs


def _union_segments(controls: Sequence[ControlSignal], horizon: float) -> np.ndarray:
    cuts = {0.0, horizon}
    for u in controls:
        cuts.update(float(b) for b in u.breakpoints if 0.0 < b < horizon)
    return np.array(sorted(cuts))


def _sweep_exits(spec: HamiltonianSpec, lam0: PhasePoint, Omega: BoxRegion,
                 controls: Sequence[ControlSignal], horizon: float,
                 step: float) -> np.ndarray:
    """One batched pass; returns per-member exit times (horizon if none)."""
    if not spec.space.is_flat:
        raise ValueError("ensemble sweep requires a flat chart")
    n = spec.space.dimension
    m = len(controls)
    n1_axes, _ = _split_axes(spec)
    omega1 = BoxRegion(tuple(Omega.bounds[k] for k in n1_axes))
    Z = np.tile(lam0.as_state(), (m, 1))
    alive = np.ones(m, dtype=bool)
    exit_times = np.full(m, horizon)
    cuts = _union_segments(controls, horizon)
    for a, b in zip(cuts[:-1], cuts[1:]):
        t_mid = 0.5 * (a + b)
        u_vals = np.stack([np.atleast_1d(u.value_at(t_mid)) for u in controls])
        rhs = _batched_rhs(spec, u_vals)
        nseg = max(1, int(np.ceil((b - a) / step - 1e-12)))
        h = (b - a) / nseg
        t = a
        for _ in range(nseg):
            if not np.any(alive):
                return exit_times
            Z_prev = Z
            Z_new = rk4_step(rhs, t, Z, h)
            Z = np.where(alive[:, None], Z_new, Z)
            t += h
            live_states = Z[alive]
            if not np.all(np.isfinite(live_states)) or np.max(np.abs(live_states)) > 1e12:
                raise TrajectoryEscape("ensemble member escaped the overflow guard")
            inside = omega1.contains(Z[:, list(n1_axes)])
            crossed = alive & ~inside
            for j in np.where(crossed)[0]:
                rhs_j = _batched_rhs(spec, u_vals[j:j + 1])
                z_pre = Z_prev[j]

                def gap_at(tt, z_pre=z_pre, t0=t - h, rhs_j=rhs_j):
                    z = z_pre[None, :]
                    nsub = 8
                    hh = (tt - t0) / nsub
                    s = t0
                    for _ in range(nsub):
                        z = rk4_step(rhs_j, s, z, hh)
                        s += hh
                    return omega1.signed_gap(z[0, list(n1_axes)])

                g_lo = omega1.signed_gap(Z_prev[j, list(n1_axes)])
                if g_lo <= 0.0:
                    exit_times[j] = t - h
                else:
                    exit_times[j] = bisect_event(gap_at, t - h, t, tol=EXIT_TIME_TOL)
                alive[j] = False
    return exit_times


def sampled_exit_time(spec: HamiltonianSpec, lam0: PhasePoint, Omega: BoxRegion,
                      ensemble: Sequence[ControlSignal], horizon: float,
                      step: float = 2e-3,
                      analytic_bound: Optional[float] = None) -> ExitReport:
    """Minimum first-exit time of the base-factor projection over an ensemble.

    All members integrate in one vectorized batch that restarts at the union
    of their breakpoints; a halved-step pass must reproduce every exit time
    to 1e-5 or StepTooCoarse is raised.
    """
    controls = list(ensemble)
    if analytic_bound is None:
        analytic_bound = exit_lower_bound(spec, Omega, lam0, horizon=horizon)
    if not controls:
        return ExitReport(analytic_bound, horizon, 0, None,
                          np.empty(0), horizon)
    exits = _sweep_exits(spec, lam0, Omega, controls, horizon, step)
    exits_fine = _sweep_exits(spec, lam0, Omega, controls, horizon, 0.5 * step)
    if np.max(np.abs(exits - exits_fine)) > 1e-5 * max(1.0, horizon):
        raise StepTooCoarse("exit times move under step halving; refine the step")
    k = int(np.argmin(exits_fine))
    return ExitReport(analytic_bound=analytic_bound,
                      sampled_min_exit=float(exits_fine[k]),
                      ensemble_size=len(controls),
                      witness_control=controls[k],
                      exit_times=exits_fine,
                      horizon=horizon)
