"""Small-time steering maneuvers built from impulsive controls.

The two primitives:

* impulse: a constant control u = -k/ε on [0, ε] shifts the momentum by
  k·dW(x₀) with O(ε) error while the position barely moves;
* burst: an impulse to the boosted momentum (k/ε)·dW(x₀) followed by free
  flight of duration ε carries the position to the time-1 point of the
  geodesic with initial covector k·dW(x₀), again up to O(ε).

Compositions of bursts track gradient curves of W, and with a full rank of
control potentials (dW₁ ∧ … ∧ dWₙ ≠ 0) any phase-space target can be hit:
burst along the connecting geodesic's initial covector, then a final impulse
to fix the momentum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import (ControlSignal, HamiltonianSpec, combined_control_spec,
                       evolve)
from .errors import (DegenerateDirection, LinearSolveFailed, TargetOffCurve,
                     WedgeDegenerate)
from .geometry import ChartSpace, PhasePoint, cometric_at, riemannian_gradient
from .integrate import rk4_endpoint, rk4_step, variational_rhs

WEDGE_TOL = 1e-10


@dataclass(frozen=True)
class SteeringPlan:
    """Consecutive (control, duration) segments with the limit-system target.

    epsilon is the rescaling parameter the maneuver was synthesized at; the
    realized endpoint and its error are filled in by execute_plan.
    """

    segments: tuple[tuple[ControlSignal, float], ...]
    predicted_endpoint: PhasePoint
    epsilon: float
    realized_endpoint: Optional[PhasePoint] = None
    achieved_error: Optional[float] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        for u, dur in self.segments:
            if abs(u.duration - dur) > 1e-12 * max(1.0, dur):
                raise ValueError("segment duration must match its control law")

    @property
    def total_duration(self) -> float:
        return float(sum(d for _, d in self.segments))

    def to_text(self) -> str:
        chunks = [f"epsilon = {self.epsilon!r}",
                  "predicted_x = " + ",".join(repr(float(v)) for v in self.predicted_endpoint.x),
                  "predicted_p = " + ",".join(repr(float(v)) for v in self.predicted_endpoint.p)]
        for i, (u, _) in enumerate(self.segments):
            for line in u.to_text().strip().splitlines():
                chunks.append(f"segment{i}.{line}")
        return "\n".join(chunks) + "\n"


def execute_plan(spec: HamiltonianSpec, lam0: PhasePoint, plan: SteeringPlan,
                 substeps: int = 2000) -> SteeringPlan:
    """Run the plan's segments through the flow; returns the plan with the
    realized endpoint and the distance to the prediction filled in.

    Impulsive segments carry control values of order 1/ε², so the step count
    is boosted with the control magnitude (capped) to keep RK4 in its
    stability region for nonlinear control potentials.
    """
    lam = lam0
    for u, dur in plan.segments:
        umax = float(np.max(np.abs(u.values)))
        n = max(substeps, min(20000, int(np.ceil(2.0 * umax * dur))))
        lam = evolve(spec, lam, u, dur / n).endpoint
    err = float(np.linalg.norm(np.concatenate([
        lam.x - plan.predicted_endpoint.x, lam.p - plan.predicted_endpoint.p])))
    return SteeringPlan(plan.segments, plan.predicted_endpoint, plan.epsilon,
                        realized_endpoint=lam, achieved_error=err)


def _single_control(spec: HamiltonianSpec) -> HamiltonianSpec:
    if spec.n_controls != 1:
        raise ValueError("maneuver needs a single control potential; "
                         "combine multi-control specs first")
    return spec


def impulse_steer(spec: HamiltonianSpec, lam0: PhasePoint, k: float,
                  eps: float) -> SteeringPlan:
    """Momentum kick: constant u = -k/ε on [0, ε] targeting λ₀ + k·(0, dW(x₀))."""
    spec = _single_control(spec)
    if eps <= 0:
        raise ValueError("eps must be positive")
    dW = spec.W[0].grad(lam0.x)
    predicted = PhasePoint(lam0.x, lam0.p + k * dW)
    u = ControlSignal.constant(-k / eps, eps)
    return SteeringPlan(((u, eps),), predicted, eps)


def geodesic_burst(spec: HamiltonianSpec, lam0: PhasePoint, k: float,
                   eps: float) -> SteeringPlan:
    """Impulse to momentum (k/ε)·dW(x₀), then free flight for time ε.

    The projection of the endpoint converges, as ε → 0, to the time-1 point of
    the geodesic with initial covector k·dW(x₀).  The inner impulse runs for
    ε·min(ε, 1) so its position drift (at O(k/ε) momentum) stays O(ε) and the
    total duration stays ≤ 2ε.
    """
    spec = _single_control(spec)
    if eps <= 0:
        raise ValueError("eps must be positive")
    dW = spec.W[0].grad(lam0.x)
    if k != 0.0 and np.linalg.norm(dW) < 1e-12:
        raise DegenerateDirection("dW vanishes at the starting point; burst moves nowhere")
    eps_inner = eps * min(eps, 1.0)
    kick = ControlSignal.constant(-(k / eps) / eps_inner, eps_inner)
    flight = ControlSignal.constant(0.0, eps)
    # limit target: time-1 geodesic point for covector k dW(x0), at the boosted momentum
    from .geometry import geodesic_endpoint
    if k == 0.0:
        target = PhasePoint(lam0.x, lam0.p)
    else:
        geo = geodesic_endpoint(spec.space, lam0.x, k * dW, 1.0, 1e-3)
        target = PhasePoint(geo.x, geo.p / eps)
    return SteeringPlan(((kick, eps_inner), (flight, eps)), target, eps)


def _gradient_curve(spec: HamiltonianSpec, x0: np.ndarray, target: np.ndarray,
                    tol: float, max_time: float = 60.0, step: float = 1e-3):
    """Follow ẋ = ∇W from x0 in both time directions until the target is met.

    Returns the sampled arc from x0 to the (near-)hit, or raises
    TargetOffCurve when both directions stall or wander without approaching.
    """
    W = spec.W[0]
    space = spec.space

    d0 = np.linalg.norm(np.asarray(x0, dtype=float) - target)

    def flow_dir(sign: float):
        def rhs(_t, x):
            return sign * riemannian_gradient(space, W, x)
        xs = [np.array(x0, dtype=float)]
        t, x = 0.0, np.array(x0, dtype=float)
        best = d0
        while t < max_time:
            x = rk4_step(rhs, t, x, step)
            t += step
            xs.append(x.copy())
            d = np.linalg.norm(x - target)
            best = min(best, d)
            if d < tol:
                return xs, True, best
            if d > 10.0 * (d0 + 1.0) or np.max(np.abs(x)) > 1e6:
                break  # running away from the target
            speed = np.linalg.norm(riemannian_gradient(space, W, x))
            if speed < 1e-8:
                break  # stalled near a critical point
        return xs, False, best

    if np.linalg.norm(target - np.asarray(x0, dtype=float)) < tol:
        return [np.array(x0, dtype=float)]
    for sign in (+1.0, -1.0):
        xs, hit, _ = flow_dir(sign)
        if hit:
            return xs
    raise TargetOffCurve(
        f"target {np.asarray(target)} not reached by the gradient curve through {x0}")


def _polygonal_waypoints(arc: list[np.ndarray], chord_tol: float) -> list[np.ndarray]:
    """Greedy subsampling of the arc so each chord stays within chord_tol of it."""
    if len(arc) <= 2:
        return list(arc)
    pts = np.asarray(arc)
    waypoints = [pts[0]]
    start = 0
    while start < len(pts) - 1:
        end = len(pts) - 1
        # shrink until the chord from start..end hugs the curve
        while end > start + 1:
            a, b = pts[start], pts[end]
            seg = b - a
            L2 = float(seg @ seg)
            mids = pts[start:end + 1]
            tt = np.clip(((mids - a) @ seg) / max(L2, 1e-300), 0.0, 1.0)
            dev = np.max(np.linalg.norm(mids - (a + tt[:, None] * seg), axis=1))
            if dev <= chord_tol:
                break
            end = start + max(1, (end - start) // 2)
        waypoints.append(pts[end])
        start = end
    return waypoints


def gradient_curve_steer(spec: HamiltonianSpec, lam0: PhasePoint, target,
                         tol: float, eps: float,
                         substeps: int = 2000) -> SteeringPlan:
    """Drive the projection to a target on the gradient curve of W through x₀.

    The curve is approximated by geodesic chords (deviation < tol/10); each
    chord is realized by a burst re-planned from the realized state.
    """
    spec = _single_control(spec)
    target = np.asarray(target, dtype=float).reshape(-1)
    dW0 = spec.W[0].grad(lam0.x)
    if np.linalg.norm(dW0) < 1e-12:
        raise DegenerateDirection("dW vanishes at the starting point")
    arc = _gradient_curve(spec, lam0.x, target, tol)
    waypoints = _polygonal_waypoints(arc, chord_tol=tol / 10.0)
    if len(waypoints) < 2:
        waypoints = [np.array(lam0.x, dtype=float), target]
    waypoints[-1] = target

    segments: list[tuple[ControlSignal, float]] = []
    lam = lam0
    eps_inner = eps * min(eps, 1.0)
    for wp in waypoints[1:]:
        dW = spec.W[0].grad(lam.x)
        norm2 = float(dW @ cometric_at(spec.space, lam.x) @ dW)
        if norm2 < 1e-20:
            raise DegenerateDirection("gradient of W vanished along the maneuver")
        # chord displacement ≈ k ∇W in the limit ⇒ solve k from the metric norm
        delta = wp - lam.x
        k = float(delta @ dW) / norm2
        # momentum-setting impulse: cancels the residue of the previous flight
        # along dW (exact in 1D) and installs the boosted covector (k/ε)·dW
        k_imp = (float((k / eps) * norm2 - lam.p @ cometric_at(spec.space, lam.x) @ dW)
                 / norm2)
        kick = ControlSignal.constant(-k_imp / eps_inner, eps_inner)
        flight = ControlSignal.constant(0.0, eps)
        burst = SteeringPlan(((kick, eps_inner), (flight, eps)),
                             PhasePoint(wp, (k / eps) * dW), eps)
        burst = execute_plan(spec, lam, burst, substeps=substeps)
        segments.extend(burst.segments)
        lam = burst.realized_endpoint
    predicted = PhasePoint(target, lam.p)
    err = float(np.linalg.norm(lam.x - target))
    return SteeringPlan(tuple(segments), predicted, eps,
                        realized_endpoint=lam, achieved_error=err)


def _control_frame(spec: HamiltonianSpec, x: np.ndarray) -> np.ndarray:
    """Rows are dW_i(x); square because full-rank steering needs n controls."""
    n = spec.space.dimension
    if spec.n_controls != n:
        raise ValueError(f"full-rank steering needs {n} control potentials")
    return np.stack([W.grad(x) for W in spec.W])


def _solve_coefficients(frame: np.ndarray, target_covector: np.ndarray) -> np.ndarray:
    det = np.linalg.det(frame)
    if abs(det) < WEDGE_TOL:
        raise WedgeDegenerate(f"|det dW| = {abs(det):.3e} below tolerance")
    try:
        return np.linalg.solve(frame.T, target_covector)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - det check precedes
        raise LinearSolveFailed(str(exc)) from exc


def _geodesic_bvp(space: ChartSpace, x0: np.ndarray, x1: np.ndarray,
                  step: float = 1e-3, newton_iters: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Initial and final covectors of a time-1 geodesic from x0 to x1 (shooting)."""
    from .geometry import geodesic_rhs
    n = space.dimension
    p = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)  # exact when flat
    if space.is_flat:
        return p, p
    aug = variational_rhs(lambda t, z: geodesic_rhs(space, z), 2 * n)
    for _ in range(newton_iters):
        w0 = np.concatenate([x0, p, np.eye(2 * n).ravel()])
        w = rk4_endpoint(aug, w0, 0.0, 1.0, step)
        x_end = w[:n]
        resid = x_end - x1
        if np.linalg.norm(resid) < 1e-10:
            break
        J = w[2 * n:].reshape(2 * n, 2 * n)[:n, n:]  # ∂x(1)/∂p(0)
        p = p - np.linalg.solve(J, resid)
    w = rk4_endpoint(aug, np.concatenate([x0, p, np.eye(2 * n).ravel()]), 0.0, 1.0, step)
    return p, w[n:2 * n]


def full_rank_steer(spec: HamiltonianSpec, lam0: PhasePoint, lam1: PhasePoint,
                    eps: float, tol: float, substeps: int = 2000) -> SteeringPlan:
    """Reach an arbitrary phase-space target with n independent controls.

    Steps: (a) decompose the connecting geodesic's initial covector in the
    dW_i frame, (b) burst under the combined potential, (c) cancel the
    residual momentum with a final (much shorter) impulse re-solved at the
    realized position.
    """
    frame0 = _control_frame(spec, lam0.x)
    frame1 = _control_frame(spec, lam1.x)
    for fr, where in ((frame0, "start"), (frame1, "target")):
        if abs(np.linalg.det(fr)) < WEDGE_TOL:
            raise WedgeDegenerate(f"control differentials degenerate at the {where}")

    mu0, _ = _geodesic_bvp(spec.space, lam0.x, lam1.x)
    a = _solve_coefficients(frame0, mu0)
    burst_spec = combined_control_spec(spec, a)
    plan_burst = geodesic_burst(burst_spec, lam0, 1.0, eps)
    plan_burst = execute_plan(burst_spec, lam0, plan_burst, substeps=substeps)
    lam_mid = plan_burst.realized_endpoint

    # final impulse: shift momentum to the requested one at the realized position
    frame_mid = _control_frame(spec, lam_mid.x)
    b = _solve_coefficients(frame_mid, lam1.p - lam_mid.p)
    imp_spec = combined_control_spec(spec, b)
    eps_final = eps * min(eps, 1.0) ** 2
    plan_imp = impulse_steer(imp_spec, lam_mid, 1.0, eps_final)
    plan_imp = execute_plan(imp_spec, lam_mid, plan_imp, substeps=substeps)
    lam_end = plan_imp.realized_endpoint

    segments = plan_burst.segments + plan_imp.segments
    err = float(np.linalg.norm(np.concatenate([lam_end.x - lam1.x, lam_end.p - lam1.p])))
    return SteeringPlan(segments, lam1, eps, realized_endpoint=lam_end,
                        achieved_error=err)


def steer_until(maneuver, tol: float, eps_start: float = 0.1,
                eps_floor: float = 1e-6) -> SteeringPlan:
    """Halve ε from eps_start until the maneuver lands within tol.

    maneuver(eps) must return an executed SteeringPlan; the best plan achieved
    is returned even when the tolerance was never met.
    """
    best = None
    eps = eps_start
    while eps >= eps_floor:
        plan = maneuver(eps)
        if best is None or plan.achieved_error < best.achieved_error:
            best = plan
        if plan.achieved_error is not None and plan.achieved_error < tol:
            return plan
        eps *= 0.5
    return best
