"""Semiclassical propagation by characteristics on flat one-dimensional charts.

The phase solves the Hamilton–Jacobi equation ∂_t S + ½|∇S|² + V = 0 and the
amplitude the transport equation ∂_t a + ∇a·∇S + aΔS/2 = 0.  Both reduce to
ODEs along characteristics x(t) = π∘Φᵗ(x₀, dS₀(x₀)):

    ẋ = p,  ṗ = -∇V,  Ṡ = ½p² - V,  and the variational pair
    δẋ = δp, δṗ = -V″·δx  with  J(t) = δx(t) = d(G^t x₀)/dx₀.

a(t, G^t x₀) = a₀(x₀)/√J(t,x₀) — the amplitude blows up on the caustic
J = 0, so fields are only assembled while |J| stays above a guard.  The
assembled ansatz a·e^{iS/ħ} solves the Schrödinger equation up to the
residual ħ²Δa/2; multiplying by a compactly supported cutoff χ adds the
⟨∇χ, ∇ψ̃⟩ + ψ̃Δχ/2 terms that drive the localization experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import (CausticReached, MaskViolation, StepTooCoarse,
                     TrajectoryEscape)
from .geometry import BoxRegion, PotentialField
from .integrate import HALVING_REL_TOL
from .schrodinger import SpatialGrid

CAUSTIC_GUARD = 0.05
FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class TimePotential:
    """Time-dependent scalar potential V(t, x) with spatial gradient."""

    value: Callable[[float, np.ndarray], np.ndarray]
    gradient: Callable[[float, np.ndarray], np.ndarray]

    @classmethod
    def from_static(cls, field: Optional[PotentialField]) -> "TimePotential":
        if field is None:
            return cls(lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                       lambda t, x: np.zeros_like(np.asarray(x, dtype=float)))
        return cls(lambda t, x: np.asarray(field.value(np.asarray(x)[..., None]), dtype=float),
                   lambda t, x: np.asarray(field.gradient(np.asarray(x)[..., None]),
                                           dtype=float)[..., 0])


def _as_time_potential(V) -> TimePotential:
    if V is None or isinstance(V, PotentialField):
        return TimePotential.from_static(V)
    if isinstance(V, TimePotential):
        return V
    raise TypeError("V must be a PotentialField, TimePotential, or None")


def fd_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """d/dx0 across a uniformly spaced seed family (4th order inside,
    one-sided 2nd order at the two points next to each edge)."""
    f = np.asarray(values, dtype=float)
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    out[1] = (f[2] - f[0]) / (2 * h)
    out[-2] = (f[-1] - f[-3]) / (2 * h)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return out


@dataclass(frozen=True)
class CharacteristicFan:
    """Characteristics shot from uniformly spaced seeds, with phase, action,
    and the variational data needed for amplitudes and caustic detection.

    Arrays are indexed [time, seed]: x, p, S, J (= δx), dJ (= δp = J̇), δp.
    """

    seeds: np.ndarray
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    S: np.ndarray
    J: np.ndarray
    delta_p: np.ndarray
    hbar: float

    @property
    def seed_spacing(self) -> float:
        return float(self.seeds[1] - self.seeds[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a stored fan time (nearest {self.times[k]})")
        return k

    def laplacian_S(self) -> np.ndarray:
        """ΔS along each characteristic, exactly δp/δx from the variational pair."""
        return self.delta_p / self.J

    def to_csv(self, header_comment: str = "") -> str:
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = _csv.writer(buf)
        w.writerow(["t", "seed", "x", "p", "S", "J"])
        for k, t in enumerate(self.times):
            for j, s in enumerate(self.seeds):
                w.writerow([repr(float(t)), repr(float(s)), repr(float(self.x[k, j])),
                            repr(float(self.p[k, j])), repr(float(self.S[k, j])),
                            repr(float(self.J[k, j]))])
        return buf.getvalue()


def shoot_characteristics(S0: PotentialField, V, seeds, T: float, step: float,
                          hbar: float = 1.0) -> CharacteristicFan:
    """Integrate the characteristic system from p(0) = dS₀ for every seed.

    Seeds must be uniformly spaced (the seed index doubles as the transverse
    coordinate for finite differences).  The batched RK4 run is repeated with
    the step halved; endpoint disagreement raises StepTooCoarse.
    """
    seeds = np.asarray(seeds, dtype=float).reshape(-1)
    if seeds.size < 8:
        raise ValueError("need at least 8 seeds for transverse differences")
    gaps = np.diff(seeds)
    if np.any(gaps <= 0) or np.max(np.abs(gaps - gaps[0])) > 1e-9 * gaps[0]:
        raise ValueError("seeds must be strictly increasing and uniformly spaced")
    Vt = _as_time_potential(V)
    p0 = np.asarray(S0.gradient(seeds[:, None]), dtype=float)[:, 0]
    S_init = np.asarray(S0.value(seeds[:, None]), dtype=float)
    # δx(0) = 1, δp(0) = S0″(x0): variation along the Lagrangian graph of dS0
    d2S0 = fd_derivative(p0, float(gaps[0]))

    def hessian_V(t: float, x: np.ndarray) -> np.ndarray:
        h = FD_REL_STEP * (1.0 + np.abs(x))
        return (Vt.gradient(t, x + h) - Vt.gradient(t, x - h)) / (2 * h)

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        x, p, S, dx, dp = state
        dV = Vt.gradient(t, x)
        return np.stack([p, -dV, 0.5 * p * p - Vt.value(t, x),
                         dp, -hessian_V(t, x) * dx])

    def run(h: float):
        n = max(1, int(np.ceil(T / h - 1e-12)))
        hh = T / n
        state = np.stack([seeds, p0, S_init, np.ones_like(seeds), d2S0])
        times = hh * np.arange(n + 1)
        frames = np.empty((n + 1,) + state.shape)
        frames[0] = state
        t = 0.0
        from .integrate import rk4_step
        for i in range(n):
            state = rk4_step(rhs, t, state, hh)
            t += hh
            if not np.all(np.isfinite(state)) or np.max(np.abs(state[0])) > 1e12:
                raise TrajectoryEscape(f"characteristic escaped near t={t:.6g}")
            frames[i + 1] = state
        return times, frames

    if T <= 0:
        raise ValueError("T must be positive")
    _, coarse = run(step)
    times, frames = run(0.5 * step)
    scale = max(1.0, float(np.max(np.abs(frames[-1]))))
    if np.max(np.abs(coarse[-1] - frames[-1][..., :])) > HALVING_REL_TOL * scale:
        raise StepTooCoarse("characteristic fan needs a finer step")
    return CharacteristicFan(seeds=seeds, times=times,
                             x=frames[:, 0], p=frames[:, 1], S=frames[:, 2],
                             J=frames[:, 3], delta_p=frames[:, 4], hbar=hbar)


def first_conjugate_time(fan: CharacteristicFan) -> np.ndarray:
    """Per-seed first zero of J(t) (cubic Hermite root in the bracketing step,
    since J̇ = δp is stored); seeds without a zero report the fan horizon."""
    nt, m = fan.J.shape
    out = np.full(m, fan.horizon)
    for j in range(m):
        Jcol = fan.J[:, j]
        sign_change = np.where(Jcol[:-1] * Jcol[1:] <= 0)[0]
        if sign_change.size == 0:
            continue
        k = int(sign_change[0])
        if Jcol[k] == 0.0:
            out[j] = fan.times[k]
            continue
        t0, t1 = fan.times[k], fan.times[k + 1]
        h = t1 - t0
        f0, f1 = Jcol[k], Jcol[k + 1]
        d0, d1 = fan.delta_p[k, j], fan.delta_p[k + 1, j]

        def hermite(t):
            s = (t - t0) / h
            h00 = (1 + 2 * s) * (1 - s) ** 2
            h10 = s * (1 - s) ** 2
            h01 = s * s * (3 - 2 * s)
            h11 = s * s * (s - 1)
            return h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1

        out[j] = brentq(hermite, t0, t1, xtol=1e-10)
    return out


@dataclass(frozen=True)
class WKBField:
    """Phase/amplitude data interpolated onto a uniform grid at a fixed time.

    Arrays beyond (S, a, valid_mask): dS (= momentum at the arrival point),
    da and lap_a (transverse amplitude derivatives), J for diagnostics.
    """

    grid: SpatialGrid
    t: float
    S: np.ndarray
    a: np.ndarray
    valid_mask: np.ndarray
    dS: np.ndarray
    da: np.ndarray
    lap_a: np.ndarray
    J: np.ndarray
    hbar: float

    def psi_tilde(self) -> np.ndarray:
        """The bare ansatz a·e^{iS/ħ} (zero where invalid)."""
        return np.where(self.valid_mask, self.a * np.exp(1j * self.S / self.hbar), 0.0)

    def to_csv(self, header_comment: str = "") -> str:
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = _csv.writer(buf)
        w.writerow(["x", "S", "a", "valid"])
        xs = self.grid.points(0)
        for i in range(xs.size):
            w.writerow([repr(float(xs[i])), repr(float(self.S[i])),
                        repr(float(self.a[i])), int(self.valid_mask[i])])
        return buf.getvalue()


def wkb_field(fan: CharacteristicFan, a0: PotentialField, grid: SpatialGrid,
              t: float) -> WKBField:
    """Assemble (S, a) and their transverse derivatives on the grid at time t.

    Transported seed data are splined in the arrival coordinate; amplitude
    derivatives are taken by seed-space finite differences first (smooth
    data), so no second difference ever touches interpolated values.
    """
    if grid.dim != 1:
        raise NotImplementedError("field assembly is one-dimensional; use the "
                                  "product ansatz for higher dimensions")
    k = fan.time_index(t)
    xs = fan.x[k]
    J = fan.J[k]
    if np.any(np.abs(J) < CAUSTIC_GUARD):
        raise CausticReached(
            f"|J| fell below {CAUSTIC_GUARD} at t={t:.6g}; the ansatz is invalid")
    if np.any(J < 0) or np.any(np.diff(xs) <= 0):
        raise CausticReached("transported seeds folded over; past the first caustic")
    h_seed = fan.seed_spacing
    a0_seed = np.asarray(a0.value(fan.seeds[:, None]), dtype=float)
    a_seed = a0_seed / np.sqrt(J)
    # transverse derivatives: d/dx = (d/dx0) / J on smooth per-seed data
    da_seed = fd_derivative(a_seed, h_seed) / J
    d2a_seed = fd_derivative(da_seed, h_seed) / J
    S_seed = fan.S[k]
    p_seed = fan.p[k]

    gx = grid.points(0)
    covered = (gx >= xs[0]) & (gx <= xs[-1])
    fields = {}
    for name, data in (("S", S_seed), ("a", a_seed), ("dS", p_seed),
                       ("da", da_seed), ("lap_a", d2a_seed), ("J", J)):
        spline = CubicSpline(xs, data)
        arr = np.zeros_like(gx)
        arr[covered] = spline(gx[covered])
        fields[name] = arr
    valid = covered & (np.abs(fields["J"]) >= CAUSTIC_GUARD)
    return WKBField(grid=grid, t=float(fan.times[k]), S=fields["S"], a=fields["a"],
                    valid_mask=valid, dS=fields["dS"], da=fields["da"],
                    lap_a=fields["lap_a"], J=fields["J"], hbar=fan.hbar)


# ---------------------------------------------------------------------------
# Cutoff functions


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0 - 1e-12
    out = np.zeros_like(s)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        t = 1.0 / (1.0 - s ** 2)
        vals = np.exp(1.0 - t)
    out[inside] = vals[inside]
    return out


def _bump_d1(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0 - 1e-12
    out = np.zeros_like(s)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        q = 1.0 - s ** 2
        vals = _bump(s) * (-2.0 * s / q ** 2)
    out[inside] = vals[inside]
    return out


def _bump_d2(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0 - 1e-12
    out = np.zeros_like(s)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        q = 1.0 - s ** 2
        vals = _bump(s) * (4.0 * s ** 2 / q ** 4 - 2.0 * (1.0 + 3.0 * s ** 2) / q ** 3)
    out[inside] = vals[inside]
    return out


def _smooth_step(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C∞ step σ(r) = f(r)/(f(r)+f(1-r)) with f(r) = e^{-1/r}·1_{r>0};
    returns (σ, σ', σ″) for the plateau cutoff profile."""
    r = np.asarray(r, dtype=float)

    def f(v):
        out = np.zeros_like(v)
        pos = v > 1e-12
        with np.errstate(divide="ignore", over="ignore"):
            vals = np.exp(-1.0 / np.where(pos, v, 1.0))
        out[pos] = vals[pos]
        return out

    def f1(v):
        out = np.zeros_like(v)
        pos = v > 1e-6
        with np.errstate(divide="ignore", over="ignore"):
            vals = f(v) / np.where(pos, v, 1.0) ** 2
        out[pos] = vals[pos]
        return out

    def f2(v):
        out = np.zeros_like(v)
        pos = v > 1e-6
        vv = np.where(pos, v, 1.0)
        out[pos] = (f(v) * (1.0 - 2.0 * vv) / vv ** 4)[pos]
        return out

    A, B = f(r), f(1.0 - r)
    A1, B1 = f1(r), -f1(1.0 - r)
    A2, B2 = f2(r), f2(1.0 - r)
    D = A + B
    with np.errstate(invalid="ignore", divide="ignore"):
        sig = np.where(D > 0, A / np.where(D > 0, D, 1.0), 0.0)
        d1 = (A1 * B - A * B1) / D ** 2
        d2 = (A2 * B - A * B2) / D ** 2 - 2.0 * d1 * (A1 + B1) / D
    d1 = np.where(D > 0, d1, 0.0)
    d2 = np.where(D > 0, d2, 0.0)
    return sig, d1, d2


@dataclass(frozen=True)
class CutoffFunction:
    """Smooth cutoff with support exactly the closure of a box.

    Default profile: product of bumps exp(1 − 1/(1−s²)).  With plateau > 0
    the profile equals 1 on the inner fraction and falls to 0 through a C∞
    step, which keeps χ ≡ 1 wherever localized data live.
    """

    box: BoxRegion
    plateau: float = 0.0

    def __post_init__(self):
        if any(b is None for b in self.box.bounds):
            raise ValueError("cutoff box must constrain every axis")
        if not (0.0 <= self.plateau < 1.0):
            raise ValueError("plateau must be in [0, 1)")
        centers = np.array([(lo + hi) / 2 for lo, hi in self.box.bounds])
        halfw = np.array([(hi - lo) / 2 for lo, hi in self.box.bounds])
        object.__setattr__(self, "_centers", centers)
        object.__setattr__(self, "_halfw", halfw)

    def _profile(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.plateau == 0.0:
            return _bump(s), _bump_d1(s), _bump_d2(s)
        rho = self.plateau
        width = 1.0 - rho
        r = (1.0 - np.abs(s)) / width
        sig, d1, d2 = _smooth_step(np.clip(r, 0.0, 1.0))
        sgn = np.sign(s)
        val = np.where(np.abs(s) <= rho, 1.0, sig)
        dv = np.where(np.abs(s) <= rho, 0.0, -sgn * d1 / width)
        d2v = np.where(np.abs(s) <= rho, 0.0, d2 / width ** 2)
        outside = np.abs(s) >= 1.0
        return (np.where(outside, 0.0, val), np.where(outside, 0.0, dv),
                np.where(outside, 0.0, d2v))

    def _s(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self._centers) / self._halfw

    def chi(self, x) -> np.ndarray:
        s = self._s(x)
        val, _, _ = self._profile(s)
        return np.prod(val, axis=-1)

    def grad_chi(self, x) -> np.ndarray:
        s = self._s(x)
        val, d1, _ = self._profile(s)
        out = np.empty_like(s)
        for a in range(s.shape[-1]):
            out[..., a] = (d1[..., a] / self._halfw[a]) * self._partial_prod(val, a)
        return out

    def laplacian_chi(self, x) -> np.ndarray:
        s = self._s(x)
        val, _, d2 = self._profile(s)
        total = np.zeros(s.shape[:-1])
        for a in range(s.shape[-1]):
            total = total + (d2[..., a] / self._halfw[a] ** 2) * self._partial_prod(val, a)
        return total

    @staticmethod
    def _partial_prod(val: np.ndarray, skip: int) -> np.ndarray:
        prod = np.ones(val.shape[:-1])
        for b in range(val.shape[-1]):
            if b != skip:
                prod = prod * val[..., b]
        return prod


def wkb_residual(field: WKBField, chi: Optional[CutoffFunction],
                 lap_a: Optional[np.ndarray] = None,
                 psi_tilde: Optional[np.ndarray] = None,
                 hbar: Optional[float] = None,
                 control_phase: complex = 1.0) -> np.ndarray:
    """Residual of the cutoff ansatz under the Schrödinger operator:

        r = ħ²·phase·( χ·(Δa/2)·e^{iS/ħ} + ⟨∇χ, ∇ψ̃⟩ + (Δχ/2)·ψ̃ ),

    with ∇ψ̃ = (∇a + i a ∇S/ħ)·e^{iS/ħ}.  |r| is control independent; the
    control only enters through the global phase factor.
    """
    hbar = field.hbar if hbar is None else hbar
    lap_a = field.lap_a if lap_a is None else np.asarray(lap_a)
    if chi is None:
        chi_vals = np.ones(field.grid.shape)
        grad = np.zeros(field.grid.shape + (1,))
        lap_chi = np.zeros(field.grid.shape)
    else:
        mesh = field.grid.mesh()
        chi_vals = chi.chi(mesh)
        grad = chi.grad_chi(mesh)
        lap_chi = chi.laplacian_chi(mesh)
        support = (chi_vals != 0.0) | (np.abs(grad[..., 0]) != 0.0) | (lap_chi != 0.0)
        if np.any(support & ~field.valid_mask):
            raise MaskViolation("cutoff support extends beyond the valid WKB region")
    phase = np.exp(1j * field.S / hbar)
    if psi_tilde is None:
        psi_tilde = field.psi_tilde()
    grad_psi = (field.da + 1j * field.a * field.dS / hbar) * phase
    grad_psi = np.where(field.valid_mask, grad_psi, 0.0)
    lap_term = np.where(field.valid_mask, 0.5 * lap_a * phase, 0.0)
    r = hbar ** 2 * control_phase * (chi_vals * lap_term
                                     + grad[..., 0] * grad_psi
                                     + 0.5 * lap_chi * psi_tilde)
    return r


def duhamel_delta(norms: np.ndarray, dt: float) -> float:
    """Trapezoid quadrature of a uniformly sampled residual-norm series."""
    norms = np.asarray(norms, dtype=float)
    if norms.size < 2:
        return 0.0
    if dt <= 0:
        raise ValueError("dt must be positive")
    return float(np.trapezoid(norms, dx=dt))
