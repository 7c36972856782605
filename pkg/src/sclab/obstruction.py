"""Localization experiments: certified lower bounds on quantum steering time.

Protocol, for a control potential constant (= c) on a box Ω of the base
factor: build the cutoff ansatz

    φ(t) = χ·a·e^{iS}·e^{-ic∫₀ᵗu}        (scalar factor case)
    φ(t) = χ(x)·ψ₁(t,x)·ψ₂(t,y)          (product case, ψ₂ split-step on N₂)

whose Schrödinger residual r is control independent; by Duhamel and unitarity
‖ψ(t) − φ(t)‖ ≤ δ(t) = ∫₀ᵗ‖r‖.  Any witness ψ₁ supported outside Ω keeps
‖ψ₁ − φ(t)‖ ≥ 1, so for every control ‖ψ₁ − ψ(t)‖ ≥ 1 − δ(t): as long as
δ stays below 1 the true state cannot approach anything supported outside
Ω (× N₂) — a quantitative obstruction horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import ControlSignal, sample_controls
from .errors import CausticReached, HypothesisViolated
from .geometry import BoxRegion, PotentialField, make_potential
from .schrodinger import (SpatialGrid, WaveGrid, l2_distance,
                          region_probability, split_step_evolve)
from .wkb import (CAUSTIC_GUARD, CutoffFunction, duhamel_delta,
                  first_conjugate_time, shoot_characteristics, wkb_field,
                  wkb_residual)

DUHAMEL_SLACK = 1e-6
UNIFORMITY_TOL = 1e-9


@dataclass(frozen=True)
class ObstructionConfig:
    """Everything one localization experiment needs, defaults at demo scale.

    The scalar case runs on `grid` alone; supplying `n2_grid` (with V2, W2 on
    the second factor) switches to the product ansatz, where the full-space
    potentials are the pullbacks V(x,y) = V2(y), W(x,y) = W2(y).
    """

    grid: SpatialGrid
    omega: BoxRegion
    omega_prime: BoxRegion
    V: Optional[PotentialField] = None
    W: Optional[PotentialField] = None
    a0: PotentialField = None
    S0: PotentialField = None
    eps_grid: tuple[float, ...] = (0.01, 0.02, 0.04, 0.08)
    n_seeds: int = 1200
    fan_step: float = 1e-3
    dt: Optional[float] = None
    n_samples: int = 24
    ensemble_count: int = 200
    ensemble_amplitude: float = 50.0
    ensemble_max_breakpoints: int = 8
    seed: int = 0
    target_distance_floor: float = 0.1
    psi1_center: Optional[float] = None
    use_cutoff: bool = True
    plateau: float = 0.0
    enforce_hypothesis: bool = True
    hbar: float = 1.0
    n2_grid: Optional[SpatialGrid] = None
    V2: Optional[PotentialField] = None
    W2: Optional[PotentialField] = None
    psi2_center: float = 0.0
    psi2_sigma: float = 0.5
    tq_horizon: Optional[float] = None

    def __post_init__(self):
        if self.grid.dim != 1:
            raise ValueError("the base-factor grid must be one-dimensional")
        if self.a0 is None:
            object.__setattr__(self, "a0", make_potential("gaussian", 1, width=0.18))
        if self.S0 is None:
            object.__setattr__(self, "S0", make_potential("zero", 1))
        lo_o, hi_o = self.omega.bounds[0]
        lo_p, hi_p = self.omega_prime.bounds[0]
        if not (lo_o < lo_p and hi_p < hi_o):
            raise ValueError("omega_prime must be compactly inside omega")
        if not all(e > 0 for e in self.eps_grid) or list(self.eps_grid) != sorted(self.eps_grid):
            raise ValueError("eps_grid must be positive and ascending")
        if not (0.0 <= self.target_distance_floor < 1.0):
            raise ValueError("target_distance_floor must be in [0, 1)")

    @property
    def is_product(self) -> bool:
        return self.n2_grid is not None


@dataclass(frozen=True)
class ObstructionRecord:
    """Per-(ε, control) outcome of one localization run."""

    eps: float
    control_index: int
    delta: float
    max_deviation: float
    min_witness_distance: float
    outside_probability: float
    duhamel_margin: float  # min over samples of δ(t) + slack − ‖ψ−φ‖

    @property
    def duhamel_ok(self) -> bool:
        return self.duhamel_margin >= 0.0


@dataclass(frozen=True)
class ObstructionReport:
    records: tuple[ObstructionRecord, ...]
    eps_grid: tuple[float, ...]
    delta_by_eps: dict
    delta_spread_by_eps: dict
    certified_bound: float
    duhamel_violations: int
    witness_violations: int
    initial_tail: float
    caustic_floor: float
    hypothesis_uniform: bool
    max_d1w: float

    def to_json(self) -> str:
        payload = {
            "eps_grid": list(self.eps_grid),
            "delta_by_eps": {repr(k): v for k, v in sorted(self.delta_by_eps.items())},
            "delta_spread_by_eps": {repr(k): v for k, v in
                                    sorted(self.delta_spread_by_eps.items())},
            "certified_bound": self.certified_bound,
            "duhamel_violations": self.duhamel_violations,
            "witness_violations": self.witness_violations,
            "initial_tail": self.initial_tail,
            "caustic_floor": self.caustic_floor,
            "hypothesis_uniform": self.hypothesis_uniform,
            "max_d1w": self.max_d1w,
            "n_records": len(self.records),
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self, header_comment: str = "") -> str:
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = _csv.writer(buf)
        w.writerow(["eps", "control_index", "delta", "max_deviation",
                    "min_witness_distance", "outside_probability"])
        for r in self.records:
            w.writerow([repr(r.eps), r.control_index, repr(r.delta),
                        repr(r.max_deviation), repr(r.min_witness_distance),
                        repr(r.outside_probability)])
        return buf.getvalue()


def _hypothesis_scan(config: ObstructionConfig) -> float:
    """Max |W'| over an Ω grid on the base factor (0 for the product pullback)."""
    if config.is_product or config.W is None:
        return 0.0
    lo, hi = config.omega.bounds[0]
    xs = np.linspace(lo, hi, 257)[:, None]
    grads = np.asarray(config.W.gradient(xs), dtype=float)
    return float(np.max(np.abs(grads)))


class _AnsatzEngine:
    """Precomputes the fan, cutoff arrays, and residual series for one config."""

    def __init__(self, config: ObstructionConfig, horizon: float,
                 allow_caustic: bool = False):
        self.config = config
        self.grid = config.grid
        lo_o, hi_o = config.omega.bounds[0]
        margin = 0.02 * (hi_o - lo_o)
        self.seeds = np.linspace(lo_o + margin, hi_o - margin, config.n_seeds)
        self.chi = (CutoffFunction(config.omega_prime, plateau=config.plateau)
                    if config.use_cutoff else None)
        self.fan = shoot_characteristics(
            config.S0, None if config.is_product else config.V,
            self.seeds, horizon, config.fan_step, hbar=config.hbar)
        conj = first_conjugate_time(self.fan)
        self.caustic_floor = float(np.min(conj))
        # first stored time at which any seed trips the amplitude guard
        guarded = np.any(np.abs(self.fan.J) < CAUSTIC_GUARD, axis=1)
        guard_floor = (float(self.fan.times[int(np.argmax(guarded))])
                       if np.any(guarded) else self.fan.horizon)
        # first time the transported seeds stop covering the cutoff support
        if config.use_cutoff:
            gx = self.grid.points(0)
            lo_p, hi_p = config.omega_prime.bounds[0]
            support = gx[(gx >= lo_p) & (gx <= hi_p)]
            uncovered = ((self.fan.x[:, 0] > support[0])
                         | (self.fan.x[:, -1] < support[-1]))
            cover_floor = (float(self.fan.times[int(np.argmax(uncovered))])
                           if np.any(uncovered) else self.fan.horizon)
        else:
            cover_floor = self.fan.horizon
        self.guard_floor = min(guard_floor, cover_floor)
        if not allow_caustic and self.guard_floor < self.fan.horizon:
            raise CausticReached(
                f"ansatz validity ends at t={self.guard_floor:.4g} inside the "
                f"horizon {horizon:.4g}; shrink the ε grid")
        # normalization scale so that ‖χ·a0‖ = 1 on the grid
        field0 = wkb_field(self.fan, config.a0, self.grid, 0.0)
        chi_vals = (self.chi.chi(self.grid.mesh()) if self.chi is not None
                    else np.ones(self.grid.shape))
        raw = chi_vals * field0.a
        nrm = np.sqrt(np.sum(raw ** 2) * self.grid.cell_volume)
        if nrm == 0:
            raise ValueError("χ·a0 vanishes on the grid")
        self.a0 = PotentialField(
            value=lambda x, f=config.a0, s=nrm: np.asarray(f.value(x)) / s,
            gradient=lambda x, f=config.a0, s=nrm: np.asarray(f.gradient(x)) / s,
            name="a0-normalized")
        self.chi_vals = chi_vals
        # control-potential reference value on Ω′ (the phase rate)
        if config.is_product or config.W is None:
            self.c_ref = 0.0
        else:
            center = np.array([0.5 * (config.omega_prime.bounds[0][0]
                                      + config.omega_prime.bounds[0][1])])
            self.c_ref = float(np.asarray(config.W.value(center[None, :])).reshape(-1)[0])
        self._field_cache: dict[int, object] = {}

    def field_at(self, t: float):
        k = self.fan.time_index(t)
        if k not in self._field_cache:
            self._field_cache[k] = wkb_field(self.fan, self.a0, self.grid,
                                             float(self.fan.times[k]))
        return self._field_cache[k]

    def bare_residual(self, t: float) -> np.ndarray:
        """Residual grid without any control phase (scalar factor)."""
        return wkb_residual(self.field_at(t), self.chi)

    def phi_scalar(self, u: ControlSignal, t: float) -> WaveGrid:
        field = self.field_at(t)
        phase = np.exp(-1j * self.c_ref * u.integral(min(t, u.duration)))
        vals = self.chi_vals * field.psi_tilde() * phase
        return WaveGrid(self.grid, vals, self.config.hbar)

    def residual_for(self, u: ControlSignal, t: float) -> np.ndarray:
        """Full residual including the control-dependent term when the
        constancy hypothesis is deliberately broken."""
        phase = complex(np.exp(-1j * self.c_ref * u.integral(min(t, u.duration))))
        r = wkb_residual(self.field_at(t), self.chi, control_phase=phase)
        if not self.config.enforce_hypothesis and not self.config.is_product \
                and self.config.W is not None:
            w_vals = np.asarray(self.config.W.value(self.grid.mesh()), dtype=float)
            uval = float(np.atleast_1d(u.value_at(min(t, u.duration - 1e-15)))[0])
            extra = uval * self.chi_vals * (w_vals - self.c_ref) \
                * self.field_at(t).psi_tilde() * phase
            r = r + extra
        return r


def _sample_times(engine: _AnsatzEngine, eps: float, n_samples: int) -> np.ndarray:
    """Fan-grid times covering [0, ε] with about n_samples entries."""
    times = engine.fan.times
    k_end = int(np.argmin(np.abs(times - eps)))
    if abs(times[k_end] - eps) > engine.config.fan_step:
        raise ValueError(f"ε={eps} is beyond the fan horizon")
    stride = max(1, k_end // max(2, n_samples - 1))
    idx = list(range(0, k_end, stride)) + [k_end]
    return times[np.array(sorted(set(idx)))]


def _witness_state(config: ObstructionConfig) -> WaveGrid:
    """Normalized bump supported in the far complement of Ω (exactly zero on Ω)."""
    gx = config.grid.points(0)
    lo, hi = config.omega.bounds[0]
    s, L, _ = config.grid.axes[0]
    center = config.psi1_center
    if center is None:
        center = s + ((hi + lo) / 2 - s + L / 2) % L  # antipode of the Ω center
    width = min(L / 10.0, 0.45 * max(1e-6, (L - (hi - lo)) / 2))
    vals = np.exp(-0.5 * ((gx - center) / width) ** 2).astype(complex)
    vals[(gx >= lo) & (gx <= hi)] = 0.0
    psi1_1d = vals
    if config.is_product:
        gy = config.n2_grid.points(0)
        ypart = np.exp(-0.5 * ((gy - config.psi2_center) / config.psi2_sigma) ** 2)
        full_grid = SpatialGrid((config.grid.axes[0], config.n2_grid.axes[0]))
        vals2 = np.outer(psi1_1d, ypart)
        return WaveGrid(full_grid, vals2, config.hbar).normalized()
    return WaveGrid(config.grid, psi1_1d, config.hbar).normalized()


def _pullback_2d(field_1d: Optional[PotentialField], axis: int) -> Optional[PotentialField]:
    if field_1d is None:
        return None

    def val(xy):
        return np.asarray(field_1d.value(np.asarray(xy)[..., axis:axis + 1]))

    def grad(xy):
        xy = np.asarray(xy, dtype=float)
        g = np.zeros_like(xy)
        g[..., axis] = np.asarray(field_1d.gradient(xy[..., axis:axis + 1]))[..., 0]
        return g

    return PotentialField(val, grad, name=f"pullback-axis{axis}")


def build_ansatz(config: ObstructionConfig, u: ControlSignal, t: float,
                 engine: Optional[_AnsatzEngine] = None) -> WaveGrid:
    """The cutoff approximate solution φ(t) for the given control law."""
    if engine is None:
        horizon = max(max(config.eps_grid), t)
        engine = _AnsatzEngine(config, horizon)
    if not config.is_product:
        return engine.phi_scalar(u, t)
    # product case: ψ₂ evolves under the x-frozen potential V2 + u·W2 on N₂
    psi2_0 = _gaussian_on(config.n2_grid, config.psi2_center, config.psi2_sigma,
                          config.hbar)
    psi2 = split_step_evolve(psi2_0, config.V2, config.W2,
                             u if t > 0 else ControlSignal.constant(0.0, 1.0),
                             t, dt=config.dt or 5e-4) if t > 0 else psi2_0
    field = engine.field_at(t)
    psi1_vals = engine.chi_vals * field.psi_tilde()
    full_grid = SpatialGrid((config.grid.axes[0], config.n2_grid.axes[0]))
    return WaveGrid(full_grid, np.outer(psi1_vals, psi2.values), config.hbar)


def _gaussian_on(grid: SpatialGrid, center: float, sigma: float,
                 hbar: float) -> WaveGrid:
    gx = grid.points(0)
    vals = np.exp(-0.25 * ((gx - center) / sigma) ** 2).astype(complex)
    return WaveGrid(grid, vals, hbar).normalized()


def run_localization_experiment(config: ObstructionConfig) -> ObstructionReport:
    """Evolve the true equation over a control ensemble and verify, per record,
    the Duhamel bound, the control uniformity of δ, and the witness-distance
    floor; certify the largest ε with uniform δ(ε) < 1 − floor."""
    max_d1w = _hypothesis_scan(config)
    if config.enforce_hypothesis and max_d1w >= 1e-9:
        raise HypothesisViolated(
            f"control potential varies on Ω (max |W'| = {max_d1w:.3e})")
    horizon = max(config.eps_grid)
    engine = _AnsatzEngine(config, horizon)
    rng = np.random.default_rng(config.seed)
    controls = sample_controls(rng, config.ensemble_count, horizon,
                               config.ensemble_amplitude,
                               config.ensemble_max_breakpoints,
                               scheme="lhs", include_extremes=True)
    psi1 = _witness_state(config)

    records: list[ObstructionRecord] = []
    delta_by_eps: dict[float, float] = {}
    spread_by_eps: dict[float, float] = {}
    initial_tail = None

    if config.is_product:
        full_grid = SpatialGrid((config.grid.axes[0], config.n2_grid.axes[0]))
        V_full = _pullback_2d(config.V2, 1)
        W_full = _pullback_2d(config.W2, 1)
        outside_region = BoxRegion((config.omega.bounds[0], None))
    else:
        outside_region = config.omega

    for eps in config.eps_grid:
        times = _sample_times(engine, eps, config.n_samples)
        eps_eff = float(times[-1])
        # control-independent residual norms on the fan sample grid
        base_norms = np.array([
            np.sqrt(np.sum(np.abs(engine.bare_residual(t)) ** 2)
                    * config.grid.cell_volume) for t in times])
        deltas_ctrl = []
        for j, u in enumerate(controls):
            if config.enforce_hypothesis:
                norms = base_norms
            else:
                norms = np.array([
                    np.sqrt(np.sum(np.abs(engine.residual_for(u, t)) ** 2)
                            * config.grid.cell_volume) for t in times])
            delta_t = _cumulative_trapezoid(norms, times)
            delta_eps = float(delta_t[-1])
            deltas_ctrl.append(delta_eps)

            if config.is_product:
                phi0 = build_ansatz(config, u, 0.0, engine)
            else:
                phi0 = engine.phi_scalar(u, 0.0)
            psi = WaveGrid(phi0.grid, phi0.values, config.hbar)
            if initial_tail is None:
                initial_tail = 1.0 - region_probability(psi.normalized(),
                                                        outside_region)
            max_dev = 0.0
            min_margin = np.inf
            min_witness = l2_distance(psi1, psi)
            dt_run = config.dt or min(1e-3, eps_eff / 64.0)
            for k in range(1, times.size):
                seg = u.window(times[k - 1], times[k])
                if config.is_product:
                    psi = split_step_evolve(psi, V_full, W_full, seg,
                                            seg.duration, dt=dt_run)
                    phi = build_ansatz(config, u.restricted(times[k]) if
                                       times[k] < u.duration else u,
                                       float(times[k]), engine)
                else:
                    psi = split_step_evolve(psi, config.V, config.W, seg,
                                            seg.duration, dt=dt_run)
                    phi = engine.phi_scalar(u, float(times[k]))
                dev = l2_distance(psi, phi)
                max_dev = max(max_dev, dev)
                min_margin = min(min_margin, float(delta_t[k]) + DUHAMEL_SLACK - dev)
                min_witness = min(min_witness, l2_distance(psi1, psi))
            records.append(ObstructionRecord(
                eps=eps_eff, control_index=j, delta=delta_eps,
                max_deviation=max_dev, min_witness_distance=min_witness,
                outside_probability=1.0 - region_probability(psi, outside_region),
                duhamel_margin=float(min_margin)))
        delta_by_eps[eps_eff] = float(np.max(deltas_ctrl))
        spread_by_eps[eps_eff] = float(np.max(deltas_ctrl) - np.min(deltas_ctrl))

    threshold = 1.0 - config.target_distance_floor
    certified = 0.0
    for eps_eff, dmax in sorted(delta_by_eps.items()):
        if dmax < threshold:
            certified = eps_eff
    duh_bad = sum(1 for r in records if not r.duhamel_ok)
    wit_bad = sum(1 for r in records
                  if r.min_witness_distance < 1.0 - r.delta - DUHAMEL_SLACK)
    return ObstructionReport(
        records=tuple(records), eps_grid=tuple(sorted(delta_by_eps)),
        delta_by_eps=delta_by_eps, delta_spread_by_eps=spread_by_eps,
        certified_bound=certified, duhamel_violations=duh_bad,
        witness_violations=wit_bad, initial_tail=float(initial_tail),
        caustic_floor=engine.caustic_floor,
        hypothesis_uniform=all(v < UNIFORMITY_TOL for v in spread_by_eps.values()),
        max_d1w=max_d1w)


def _cumulative_trapezoid(norms: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.zeros_like(norms)
    out[1:] = np.cumsum(0.5 * (norms[1:] + norms[:-1]) * np.diff(times))
    return out


def estimate_Tq_lower_bound(config: ObstructionConfig,
                            threshold: float = 1.0) -> float:
    """Largest horizon with δ(ε) < threshold, found on the cumulative residual
    integral (monotone in ε, so the grid bisection reduces to an inversion);
    capped by the caustic guard floor.  Returns 0 when even the first sample
    exceeds the threshold."""
    horizon = config.tq_horizon or max(config.eps_grid)
    engine = _AnsatzEngine(config, horizon, allow_caustic=True)
    usable = horizon if engine.guard_floor >= engine.fan.horizon \
        else engine.guard_floor - config.fan_step
    times = engine.fan.times
    keep = times <= usable + 1e-12
    times = times[keep]
    if times.size < 2:
        return 0.0
    stride = max(1, times.size // 256)
    idx = np.array(sorted(set(list(range(0, times.size, stride)) + [times.size - 1])))
    ts = times[idx]
    norms = np.array([
        np.sqrt(np.sum(np.abs(engine.bare_residual(t)) ** 2)
                * config.grid.cell_volume) for t in ts])
    delta = _cumulative_trapezoid(norms, ts)
    below = delta < threshold
    if delta[0] >= threshold:
        return 0.0
    if np.all(below):
        return float(ts[-1])
    k = int(np.argmax(~below))  # first sample at or above the threshold
    t_lo, t_hi = ts[k - 1], ts[k]
    d_lo, d_hi = delta[k - 1], delta[k]
    t_star = t_lo + (threshold - d_lo) / max(d_hi - d_lo, 1e-300) * (t_hi - t_lo)
    return float(min(t_star, ts[-1]))
