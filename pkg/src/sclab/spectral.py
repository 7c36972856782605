"""Spectral controllability criteria for -∂²_x + x² with Gaussian control.

The eigenfunctions are the normalized Hermite functions φ_i (eigenvalues
2i+1; the popular ½-normalized oscillator has gaps 1 instead of 2, which the
reports flag rather than rescale).  Matrix elements of a Gaussian control
potential,

    b_ij = ∫ φ_i(x) φ_j(x) e^{ax² + bx + c} dx,   a < 1,

reduce after completing the square to Gauss–Hermite quadrature of a
polynomial, hence are computed exactly.  The criteria checked downstream:
connectivity of the leading minors of (b_ij) and absence of rational
relations among the spectral gaps (a finite search can refute independence,
never prove it).  The classical counterpart: with the control cut off to
{x > ε}, phase-space discs of radius < ε are flow-invariant for every
control, witnessing classical non-controllability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal

from .dynamics import ControlSignal
from .errors import (QuadratureDivergence, SearchBudgetExceeded,
                     TruncationNotConverged)
from .integrate import bisect_event, rk4_step

SEARCH_BUDGET = 10 ** 7


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for ∫f(x)e^{-x²}dx by the Golub–Welsch eigenproblem.

    The symmetric Jacobi matrix keeps this stable at orders where the direct
    polynomial-root route overflows.
    """
    if n < 1:
        raise ValueError("quadrature order must be positive")
    if n == 1:
        return np.zeros(1), np.array([np.sqrt(np.pi)])
    off = np.sqrt(np.arange(1, n) / 2.0)
    nodes, vecs = eigh_tridiagonal(np.zeros(n), off)
    weights = np.sqrt(np.pi) * vecs[0] ** 2
    return nodes, weights


def hermite_polynomial_values(N: int, x: np.ndarray) -> np.ndarray:
    """Rows h_i(x) with h_i = (normalized Hermite function φ_i)·e^{x²/2}.

    Stable recurrence: h_0 = π^{-1/4}, h_{i+1} = √(2/(i+1))·x·h_i − √(i/(i+1))·h_{i−1}.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((N,) + x.shape)
    out[0] = np.pi ** -0.25
    if N > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for i in range(1, N - 1):
        out[i + 1] = np.sqrt(2.0 / (i + 1)) * x * out[i] - np.sqrt(i / (i + 1.0)) * out[i - 1]
    return out


@dataclass(frozen=True)
class HermiteBasis:
    """Truncated oscillator eigenbasis with Gauss–Hermite quadrature attached."""

    N: int
    quadrature_order: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two basis functions")
        if self.quadrature_order <= 0:
            object.__setattr__(self, "quadrature_order", max(4 * self.N, 40))
        nodes, weights = gauss_hermite(self.quadrature_order)
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_weights", weights)

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    def eigenfunctions(self, x: np.ndarray) -> np.ndarray:
        """φ_i(x) = h_i(x)·e^{-x²/2} for i < N, rows stacked."""
        x = np.asarray(x, dtype=float)
        return hermite_polynomial_values(self.N, x) * np.exp(-0.5 * x * x)

    def gram(self) -> np.ndarray:
        """⟨φ_i, φ_j⟩ under the quadrature (identity to 1e-10 by construction)."""
        h = hermite_polynomial_values(self.N, self.nodes)
        return (h * self.weights) @ h.T


@dataclass(frozen=True)
class CouplingMatrix:
    """Symmetric control-operator matrix elements in the oscillator basis."""

    entries: np.ndarray
    gauss_a: float
    gauss_b: float
    gauss_c: float
    cutoff: Optional[float] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("entries must be a square matrix")
        if not np.array_equal(e, e.T):
            raise ValueError("entries must be exactly symmetric")
        if not np.all(np.isfinite(e)):
            raise ValueError("entries must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def N(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class GapVector:
    """Ascending eigenvalues λ_0..λ_{N-1} and their consecutive gaps."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if np.any(np.diff(ev) <= 0):
            raise ValueError("eigenvalues must be strictly ascending")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.eigenvalues)


def _gaussian_moment_entry(i: int, j: int, a: float, b: float, c: float) -> float:
    """Oracle for small indices: expand h_i·h_j in monomials and use the
    moment recursion M_n = (b/2s)M_{n-1} + ((n-1)/2s)M_{n-2}, s = 1 - a."""
    s = 1.0 - a
    # physicists' Hermite coefficients of h_i in the monomial basis
    def h_coeffs(n: int) -> np.ndarray:
        herm = np.zeros(n + 1)
        herm[n] = 1.0
        mono = np.polynomial.hermite.herm2poly(herm)
        norm = (np.pi ** -0.25) / math.sqrt(2.0 ** n * math.factorial(n))
        return mono * norm

    prod = np.polynomial.polynomial.polymul(h_coeffs(i), h_coeffs(j))
    deg = prod.size - 1
    M = np.empty(deg + 1)
    M[0] = math.sqrt(math.pi / s) * math.exp(b * b / (4 * s) + c)
    if deg >= 1:
        M[1] = (b / (2 * s)) * M[0]
    for n in range(2, deg + 1):
        M[n] = (b / (2 * s)) * M[n - 1] + ((n - 1) / (2 * s)) * M[n - 2]
    return float(prod @ M)


def gaussian_coupling(a: float, b: float, c: float, N: int,
                      quadrature_order: int = 0, validate: bool = True) -> CouplingMatrix:
    """b_ij = ∫ φ_i φ_j e^{ax²+bx+c} dx, exact by square-completed quadrature.

    Substituting y = √(1-a)·(x - b/(2(1-a))) leaves a polynomial against the
    e^{-y²} weight, so Gauss–Hermite of order ≥ N integrates it exactly.
    Entries with i+j ≤ 4 are cross-checked against the moment recursion.
    """
    if a >= 1.0:
        raise QuadratureDivergence("need a < 1 for a normalizable integrand")
    if N < 2:
        raise ValueError("N must be at least 2")
    basis = HermiteBasis(N, quadrature_order)
    s = 1.0 - a
    x_of_y = basis.nodes / math.sqrt(s) + b / (2 * s)
    h = hermite_polynomial_values(N, x_of_y)
    prefactor = math.exp(b * b / (4 * s) + c) / math.sqrt(s)
    entries = prefactor * ((h * basis.weights) @ h.T)
    entries = 0.5 * (entries + entries.T)
    if validate:
        for i in range(N):
            for j in range(i, N):
                if i + j > 4:
                    continue
                oracle = _gaussian_moment_entry(i, j, a, b, c)
                if abs(entries[i, j] - oracle) > 1e-10 * max(1.0, abs(oracle)):
                    raise ArithmeticError(
                        f"quadrature disagrees with the moment oracle at ({i},{j})")
    return CouplingMatrix(entries, a, b, c)


def cutoff_coupling(a: float, b: float, c: float, eps: float, N: int
                    ) -> tuple[CouplingMatrix, np.ndarray]:
    """Remove the central window: f_ij(ε) = ∫_{-ε}^{ε} φ_iφ_j e^{ax²+bx+c} dx.

    Returns (coupling with entries b_ij − f_ij(ε), f matrix); adaptive
    quadrature handles the window integral.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    full = gaussian_coupling(a, b, c, N, validate=False)
    f = np.zeros((N, N))
    if eps > 0:
        for i in range(N):
            for j in range(i, N):
                def integrand(x, i=i, j=j):
                    h = hermite_polynomial_values(max(i, j) + 1, np.asarray([x]))
                    phi = h[:, 0] * math.exp(-0.5 * x * x)
                    return phi[i] * phi[j] * math.exp(a * x * x + b * x + c)

                val, _ = quad(integrand, -eps, eps, limit=200, epsabs=1e-13, epsrel=1e-12)
                f[i, j] = f[j, i] = val
    hat = full.entries - f
    hat = 0.5 * (hat + hat.T)
    return CouplingMatrix(hat, a, b, c, cutoff=eps), f


def minor_connectivity(B: CouplingMatrix, k: int, zero_tol: float
                       ) -> tuple[bool, list[list[int]]]:
    """Union-find connectivity of the graph with edges |b_ij| > zero_tol on
    the leading k×k minor; returns (connected, component partition)."""
    if not (1 <= k <= B.N):
        raise ValueError(f"k must be in 1..{B.N}")
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(k):
        for j in range(i + 1, k):
            if abs(B.entries[i, j]) > zero_tol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    comps: dict[int, list[int]] = {}
    for i in range(k):
        comps.setdefault(find(i), []).append(i)
    partition = sorted(comps.values())
    return len(partition) == 1, partition


def default_zero_tol(B: CouplingMatrix) -> float:
    """1e-12 relative to the matrix max-norm (exact zero tests are meaningless
    in floating point; the threshold is reported alongside any verdict)."""
    return 1e-12 * float(np.max(np.abs(B.entries)))


def _box_relation_search(g: np.ndarray, bound: int,
                         precision: float) -> Optional[np.ndarray]:
    """Vectorized enumeration over head coefficients; the last coefficient is
    solved from the partial sum, so only (2B+1)^(m-1) candidates are visited.
    Boxes grow geometrically so small relations surface first."""
    m = g.size
    B = 1
    while True:
        B = min(B, bound)
        rng = np.arange(-B, B + 1)
        if m == 2:
            blocks = [rng[:, None]]
        else:
            mesh = np.meshgrid(*([rng] * (m - 2)), indexing="ij")
            tail = np.stack([mm.ravel() for mm in mesh], axis=-1)
            blocks = (np.concatenate(
                [np.full((tail.shape[0], 1), first), tail], axis=1) for first in rng)
        for heads in blocks:
            partial = heads @ g[:-1]
            lam_last = np.round(-partial / g[-1])
            ok = np.abs(lam_last) <= bound
            resid = np.abs(partial + lam_last * g[-1])
            nontrivial = np.any(heads != 0, axis=1) | (lam_last != 0)
            hit = ok & nontrivial & (resid < precision)
            if np.any(hit):
                best = int(np.argmax(hit))
                return np.append(heads[best], int(lam_last[best])).astype(int)
        if B == bound:
            return None
        B *= 2


def gap_rational_relation(gaps: GapVector | np.ndarray, coeff_bound: int,
                          precision: float) -> Optional[np.ndarray]:
    """Search for integers λ with |λ_i| ≤ coeff_bound and |Σ λ_i·gap_i| < precision.

    A found relation refutes rational independence at this precision; None is
    evidence only.  Exhaustive enumeration solves the last coefficient from
    the partial sum (candidates = (2B+1)^(m-1)); beyond the 1e7 budget a
    lattice-based search (PSLQ) runs instead, and SearchBudgetExceeded is
    raised only if that is unavailable for the input.
    """
    g = gaps.gaps if isinstance(gaps, GapVector) else np.asarray(gaps, dtype=float)
    if g.size < 2:
        return None
    if np.any(~np.isfinite(g)):
        raise ValueError("gaps must be finite")
    m = g.size
    if (2 * coeff_bound + 1) ** (m - 1) <= SEARCH_BUDGET:
        return _box_relation_search(g, coeff_bound, precision)
    # lattice route
    import mpmath

    digits = max(15, int(-math.log10(precision)) + 10)
    with mpmath.workdps(digits):
        rel = mpmath.pslq([mpmath.mpf(v) for v in g],
                          tol=mpmath.mpf(10) ** (-max(9, int(-math.log10(precision)))),
                          maxcoeff=coeff_bound, maxsteps=20000)
    if rel is None:
        return None
    full = np.array(rel, dtype=int)
    if np.max(np.abs(full)) > coeff_bound or not np.any(full):
        return None
    if abs(float(full @ g)) < precision:
        return full
    raise SearchBudgetExceeded(
        "lattice search returned an unverifiable candidate within the budget")


def perturbed_spectrum(mu: float, a: float, b: float, c: float, N: int,
                       N_big: int) -> GapVector:
    """Lowest N eigenvalues of diag(2i+1) + μ·(Gaussian coupling), computed in
    an N_big-dimensional truncation and certified by doubling it."""
    if N > N_big // 2:
        raise ValueError("need N ≤ N_big/2 for a trustworthy truncation")

    def lowest(nbig: int) -> np.ndarray:
        H = np.diag(2.0 * np.arange(nbig) + 1.0)
        if mu != 0.0:
            H = H + mu * gaussian_coupling(a, b, c, nbig, validate=False).entries
        return np.linalg.eigvalsh(H)[:N]

    ev = lowest(N_big)
    ev2 = lowest(2 * N_big)
    if np.max(np.abs(ev - ev2)) > 1e-8:
        raise TruncationNotConverged(
            f"doubling the truncation moved eigenvalues by {np.max(np.abs(ev - ev2)):.3e}")
    return GapVector(ev2)


@dataclass(frozen=True)
class DiscInvarianceReport:
    """Radius drift of p² + x² = r₀² circles under the cutoff-Gaussian flow."""

    r0: float
    eps: float
    max_drift: float
    per_control_drift: np.ndarray

    @property
    def invariant(self) -> bool:
        return self.max_drift < 1e-6


def _cutoff_gaussian_force(x: float, eps: float, a: float, b: float, c: float) -> float:
    if x <= eps:
        return 0.0
    return (2 * a * x + b) * math.exp(a * x * x + b * x + c)


def invariant_disc_check(eps: float, ensemble: Sequence[ControlSignal],
                         horizon: float, r0: float,
                         a: float = -1.0, b: float = 1.0, c: float = 0.0,
                         step: float = 1e-3) -> DiscInvarianceReport:
    """Track p² + x² from (r₀, 0) under H = p² + x² + u·1_{x>ε}·e^{ax²+bx+c}.

    The flow is ẋ = 2p, ṗ = -2x - u·∂ₓ(cutoff Gaussian); crossings of x = ε
    are located by bisection to 1e-10 before the dynamics switch, so RK4
    never integrates across the potential's discontinuity.
    """
    drifts = np.empty(len(ensemble))
    for idx, u in enumerate(ensemble):
        z = np.array([r0, 0.0])
        worst = 0.0
        for seg_a, seg_b, uval in u.restricted(min(horizon, u.duration)).segments():
            uu = float(np.atleast_1d(uval)[0])

            def rhs_free(_t, zz):
                return np.array([2.0 * zz[1], -2.0 * zz[0]])

            def rhs_forced(_t, zz):
                return np.array([2.0 * zz[1],
                                 -2.0 * zz[0] - uu * _cutoff_gaussian_force(zz[0], eps, a, b, c)])

            t = seg_a
            while t < seg_b - 1e-15:
                h = min(step, seg_b - t)
                near_boundary = abs(z[0] - eps) <= 1e-9
                if near_boundary:
                    # sitting on the switching surface: pick the side the
                    # velocity ẋ = 2p is heading into and step straight off it
                    rhs = rhs_forced if z[1] > 0 else rhs_free
                    z = rk4_step(rhs, t, z, h)
                    t += h
                    worst = max(worst, abs(math.hypot(z[0], z[1]) - r0))
                    continue
                inside = z[0] <= eps
                rhs = rhs_free if inside else rhs_forced
                z_new = rk4_step(rhs, t, z, h)
                crossed = (z_new[0] - eps) * (z[0] - eps) < 0
                if crossed:
                    # locate the crossing, advance exactly to it, then switch
                    def xgap(tt, z0=z.copy(), t0=t):
                        zz = z0
                        nsub = 4
                        hh = (tt - t0) / nsub
                        s = t0
                        for _ in range(nsub):
                            zz = rk4_step(rhs, s, zz, hh)
                            s += hh
                        return zz[0] - eps

                    t_cross = bisect_event(xgap, t, t + h, tol=1e-10)
                    nsub = 4
                    hh = (t_cross - t) / nsub
                    s = t
                    for _ in range(nsub):
                        z = rk4_step(rhs, s, z, hh)
                        s += hh
                    t = t_cross
                else:
                    z = z_new
                    t += h
                worst = max(worst, abs(math.hypot(z[0], z[1]) - r0))
        drifts[idx] = worst
    return DiscInvarianceReport(r0=r0, eps=eps,
                                max_drift=float(np.max(drifts)) if len(ensemble) else 0.0,
                                per_control_drift=drifts)
