"""sclab: a numerical laboratory for small-time controllability experiments.

Classical side: controlled Hamiltonian flows on chart-described manifolds,
small-time steering synthesis, and control-uniform exit-time bounds.
Quantum side: WKB approximate propagation with caustic detection, a
spectrally accurate split-step Schrödinger oracle, localization
(uncontrollability) experiments, and spectral controllability criteria for
the harmonic oscillator with Gaussian control.
"""

from .geometry import (BoxRegion, ChartSpace, PhasePoint, PotentialField,
                       cometric_at, geodesic_endpoint, make_metric,
                       make_potential, riemannian_gradient)
from .dynamics import (ControlSignal, HamiltonianSpec, Trajectory, evolve,
                       flow_jacobian, hamiltonian, sample_controls)

__all__ = [
    "BoxRegion", "ChartSpace", "PhasePoint", "PotentialField",
    "cometric_at", "geodesic_endpoint", "make_metric", "make_potential",
    "riemannian_gradient",
    "ControlSignal", "HamiltonianSpec", "Trajectory", "evolve",
    "flow_jacobian", "hamiltonian", "sample_controls",
]

__version__ = "0.1.0"
