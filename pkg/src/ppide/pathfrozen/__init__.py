"""Path-frozen approximation: skeletons, θ values, Bernstein smoothing, frozen PIDEs and ψ."""

from .bernstein import BernsteinFit, bernstein_fit, lattice
from .pide import CylinderGrid, FrozenPideSolution, grid_error_estimate, solve_frozen_pide
from .psi import FrozenLevel, PathFrozen, PsiConfig, build_psi, delta, delta_tail, partial_comparison_check
from .skeleton import FrozenEnsemble, FrozenSkeleton, ThetaConfig, freeze, frozen_data, h_eps, h_eps_lattice, theta

__all__ = [
    "BernsteinFit", "CylinderGrid", "FrozenEnsemble", "FrozenLevel", "FrozenPideSolution", "FrozenSkeleton",
    "PathFrozen", "PsiConfig", "ThetaConfig", "bernstein_fit", "build_psi", "delta", "delta_tail", "freeze",
    "frozen_data", "grid_error_estimate", "h_eps", "h_eps_lattice", "lattice", "partial_comparison_check",
    "solve_frozen_pide", "theta",
]
