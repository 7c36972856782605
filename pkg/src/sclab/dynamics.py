"""Controlled classical Hamiltonian flow with trajectory and variational output.

The flow integrates, in chart coordinates,

    ẋ^i = g^{ij} p_j,
    ṗ_i = -½ ∂g^{jk}/∂x^i p_j p_k - ∂V/∂x^i - Σ_a u_a(t) ∂W_a/∂x^i,

restarting the integrator at every control breakpoint so RK4 never straddles a
jump.  On each constant-control subinterval the full Hamiltonian is a
conserved quantity, which the tests use as the primary integration oracle.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import StepTooCoarse, TrajectoryEscape
from .geometry import (ESCAPE_GUARD, ChartSpace, PhasePoint, PotentialField,
                       _as_vector, cometric_at, dcometric_at)
from .integrate import HALVING_REL_TOL, rk4_step, variational_rhs


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: values[i] holds on [breakpoints[i], breakpoints[i+1]).

    values rows may be scalars (single control) or vectors (one entry per
    control potential).
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if bp.size < 2 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0 and contain at least one interval")
        if np.any(np.diff(bp) <= 0) or not np.all(np.isfinite(bp)):
            raise ValueError("breakpoints must be finite and strictly increasing")
        if vals.shape[0] != bp.size - 1:
            raise ValueError("need one value row per subinterval")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, duration: float) -> "ControlSignal":
        return cls(np.array([0.0, duration]), np.asarray([value], dtype=float))

    @property
    def duration(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_controls(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def value_at(self, t: float):
        """Right-continuous value; the final instant takes the last segment."""
        idx = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        idx = min(max(idx, 0), self.values.shape[0] - 1)
        return self.values[idx]

    def integral(self, t: float) -> float:
        """∫_0^t u(s) ds, exact for the piecewise-constant law (scalar controls)."""
        if self.values.ndim != 1:
            raise ValueError("integral() is defined for scalar controls")
        total = 0.0
        for k in range(self.values.shape[0]):
            a, b = self.breakpoints[k], self.breakpoints[k + 1]
            if t <= a:
                break
            total += self.values[k] * (min(t, b) - a)
        return total

    def segments(self) -> Iterable[tuple[float, float, np.ndarray]]:
        for k in range(self.values.shape[0]):
            yield float(self.breakpoints[k]), float(self.breakpoints[k + 1]), self.values[k]

    def restricted(self, T: float) -> "ControlSignal":
        """The same law truncated to [0, T] (T must be positive)."""
        if T >= self.duration:
            return self
        keep = int(np.searchsorted(self.breakpoints, T, side="left"))
        bp = np.concatenate([self.breakpoints[:keep], [T]])
        return ControlSignal(bp, self.values[: bp.size - 1])

    def window(self, a: float, b: float) -> "ControlSignal":
        """The law on [a, b], shifted to start at 0."""
        if not (0.0 <= a < b <= self.duration + 1e-12):
            raise ValueError("window must lie inside the control's support")
        inner = [float(t) for t in self.breakpoints if a < t < b]
        bp = np.array([a] + inner + [b]) - a
        vals = [self.value_at(0.5 * (lo + hi + 2 * a))
                for lo, hi in zip(bp[:-1], bp[1:])]
        return ControlSignal(bp, np.asarray(vals))

    def to_text(self) -> str:
        lines = ["breakpoints = " + ",".join(repr(float(b)) for b in self.breakpoints)]
        if self.values.ndim == 1:
            lines.append("values = " + ",".join(repr(float(v)) for v in self.values))
        else:
            for j in range(self.values.shape[1]):
                lines.append(f"values{j} = " + ",".join(repr(float(v)) for v in self.values[:, j]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ControlSignal":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rhs = line.partition("=")
            fields[key.strip()] = np.array([float(v) for v in rhs.split(",")])
        bp = fields.pop("breakpoints")
        if "values" in fields:
            return cls(bp, fields["values"])
        cols = [fields[f"values{j}"] for j in range(len(fields))]
        return cls(bp, np.stack(cols, axis=1))


@dataclass(frozen=True)
class HamiltonianSpec:
    """Kinetic term from `space` plus drift potential V and control potentials W.

    W may be a single PotentialField or a list (multi-control Hamiltonian
    H = ½‖p‖² + V + Σ u_a W_a); all fields live on the same chart.
    """

    space: ChartSpace
    V: PotentialField
    W: PotentialField | Sequence[PotentialField]

    def __post_init__(self):
        if isinstance(self.W, PotentialField):
            object.__setattr__(self, "W", (self.W,))
        else:
            object.__setattr__(self, "W", tuple(self.W))

    @property
    def n_controls(self) -> int:
        return len(self.W)

    def control_gradient(self, x: np.ndarray, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        g = np.zeros_like(np.asarray(x, dtype=float))
        for ua, Wa in zip(u, self.W):
            if ua != 0.0:
                g = g + ua * Wa.grad(x)
        return g

    def control_value(self, x: np.ndarray, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(sum(ua * Wa(x) for ua, Wa in zip(u, self.W)))


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the controlled flow; positions kept unwrapped."""

    times: np.ndarray
    xs: np.ndarray
    ps: np.ndarray
    control_used: ControlSignal
    space: ChartSpace

    def __len__(self) -> int:
        return self.times.size

    def state(self, i: int) -> PhasePoint:
        return self.space.phase_point(self.xs[i], self.ps[i])

    @property
    def endpoint(self) -> PhasePoint:
        return self.state(-1)

    def to_csv(self, header_comment: str = "") -> str:
        """CSV with columns t, x_1..x_n, p_1..p_n, u (scalar or u_1..u_m)."""
        n = self.xs.shape[1]
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        writer = csv.writer(buf)
        m = self.control_used.n_controls
        ucols = ["u"] if m == 1 else [f"u_{j+1}" for j in range(m)]
        writer.writerow(["t"] + [f"x_{i+1}" for i in range(n)]
                        + [f"p_{i+1}" for i in range(n)] + ucols)
        for k, t in enumerate(self.times):
            u = np.atleast_1d(self.control_used.value_at(float(t)))
            writer.writerow([repr(float(t))]
                            + [repr(float(v)) for v in self.xs[k]]
                            + [repr(float(v)) for v in self.ps[k]]
                            + [repr(float(v)) for v in u])
        return buf.getvalue()


def hamiltonian(spec: HamiltonianSpec, lam: PhasePoint, u) -> float:
    """Total energy ½ g^{ij} p_i p_j + V(x) + Σ u_a W_a(x)."""
    g = cometric_at(spec.space, lam.x)
    return 0.5 * float(lam.p @ g @ lam.p) + spec.V(lam.x) + spec.control_value(lam.x, u)


def controlled_rhs(spec: HamiltonianSpec, u) -> "callable":
    """Phase-space vector field for a frozen control value u."""
    n = spec.space.dimension
    flat = spec.space.is_flat

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        x, p = z[:n], z[n:]
        dV = spec.V.grad(x) + spec.control_gradient(x, u)
        if flat:
            return np.concatenate([p, -dV])
        g = np.asarray(spec.space.cometric(x), dtype=float)
        dg = np.asarray(spec.space.dcometric(x), dtype=float)
        pdot = -0.5 * np.einsum("jki,j,k->i", dg, p, p) - dV
        return np.concatenate([g @ p, pdot])

    return rhs


def _segment_counts(u: ControlSignal, step: float) -> list[int]:
    return [max(1, int(np.ceil((b - a) / step - 1e-12))) for a, b, _ in u.segments()]


def _run_segments(spec: HamiltonianSpec, z0: np.ndarray, u: ControlSignal,
                  step: float, record: bool):
    """March through control segments with RK4; optionally record every step."""
    times = [0.0]
    states = [np.array(z0, dtype=float)]
    z = np.array(z0, dtype=float)
    for (a, b, uval), nseg in zip(u.segments(), _segment_counts(u, step)):
        rhs = controlled_rhs(spec, uval)
        h = (b - a) / nseg
        t = a
        for _ in range(nseg):
            z = rk4_step(rhs, t, z, h)
            t += h
            if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > ESCAPE_GUARD:
                raise TrajectoryEscape(f"trajectory escaped the overflow guard near t={t:.6g}")
            if record:
                times.append(t)
                states.append(z.copy())
    if not record:
        return z
    return np.asarray(times), np.asarray(states)


def evolve(spec: HamiltonianSpec, lam0: PhasePoint, u: ControlSignal,
           step: float) -> Trajectory:
    """Integrate the controlled flow over the control's full duration.

    The integrator restarts at each breakpoint; acceptance requires the
    halved-step endpoint to agree to 1e-8 relative (StepTooCoarse otherwise).
    """
    z0 = lam0.as_state()
    coarse = _run_segments(spec, z0, u, step, record=False)
    times, states = _run_segments(spec, z0, u, 0.5 * step, record=True)
    scale = max(1.0, float(np.max(np.abs(states[-1]))))
    if np.max(np.abs(coarse - states[-1])) > HALVING_REL_TOL * scale:
        raise StepTooCoarse("control segments need a finer step for this trajectory")
    n = spec.space.dimension
    return Trajectory(times=times, xs=states[:, :n], ps=states[:, n:],
                      control_used=u, space=spec.space)


def flow_jacobian(spec: HamiltonianSpec, lam0: PhasePoint, u: ControlSignal,
                  T: float, step: float = 1e-3) -> np.ndarray:
    """Derivative of the time-T flow map with respect to the initial state.

    Integrates the variational system alongside the trajectory; the
    linearization of the field is taken by central finite differences, so the
    result inherits the same accuracy budget as the flow itself.
    """
    n2 = 2 * spec.space.dimension
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return np.eye(n2)
    u = u.restricted(T)
    w = np.concatenate([lam0.as_state(), np.eye(n2).ravel()])

    def run(h: float) -> np.ndarray:
        state = w.copy()
        for (a, b, uval), nseg in zip(u.segments(), _segment_counts(u, h)):
            aug = variational_rhs(controlled_rhs(spec, uval), n2)
            hh = (b - a) / nseg
            t = a
            for _ in range(nseg):
                state = rk4_step(aug, t, state, hh)
                t += hh
                if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > ESCAPE_GUARD:
                    raise TrajectoryEscape("variational state escaped the overflow guard")
        return state

    coarse, fine = run(step), run(0.5 * step)
    scale = max(1.0, float(np.max(np.abs(fine))))
    if np.max(np.abs(coarse - fine)) > HALVING_REL_TOL * scale:
        raise StepTooCoarse("variational integration needs a finer step")
    return fine[n2:].reshape(n2, n2)


# ---------------------------------------------------------------------------
# Control ensembles


def sample_controls(seed, count: int, duration: float, amplitude: float,
                    max_breakpoints: int = 8, scheme: str = "uniform",
                    include_extremes: bool = False) -> list[ControlSignal]:
    """Random piecewise-constant laws on [0, duration] with |u| ≤ amplitude.

    scheme 'uniform' draws amplitudes iid; 'lhs' stratifies each subinterval's
    amplitude across the ensemble (Latin hypercube).  include_extremes appends
    the two adversarial constants ±amplitude.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if count < 0:
        raise ValueError("count must be nonnegative")
    n_breaks = rng.integers(1, max_breakpoints + 1, size=count)
    controls = []
    if scheme == "lhs":
        # one stratum permutation per subinterval slot
        strata = [rng.permutation(count) for _ in range(max_breakpoints)]
    for j in range(count):
        m = int(n_breaks[j])
        interior = np.sort(rng.uniform(0.0, duration, size=m - 1)) if m > 1 else np.empty(0)
        bp = np.concatenate([[0.0], interior, [duration]])
        # guard against coincident interior points
        bp = np.unique(bp)
        if bp.size < 2:
            bp = np.array([0.0, duration])
        nseg = bp.size - 1
        if scheme == "lhs":
            vals = np.array([
                amplitude * (2.0 * (strata[s][j] + rng.uniform()) / count - 1.0)
                for s in range(nseg)])
        else:
            vals = rng.uniform(-amplitude, amplitude, size=nseg)
        controls.append(ControlSignal(bp, vals))
    if include_extremes:
        controls.append(ControlSignal.constant(amplitude, duration))
        controls.append(ControlSignal.constant(-amplitude, duration))
    return controls


def combined_control_spec(spec: HamiltonianSpec, coeffs) -> HamiltonianSpec:
    """Single-control spec with the frozen combination W = Σ a_i W_i."""
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    fields = spec.W

    def val(x):
        return sum(a * np.asarray(Wa.value(x)) for a, Wa in zip(coeffs, fields))

    def grad(x):
        return sum(a * np.asarray(Wa.gradient(x)) for a, Wa in zip(coeffs, fields))

    combined = PotentialField(val, grad, name="combined")
    return HamiltonianSpec(space=spec.space, V=spec.V, W=combined)
