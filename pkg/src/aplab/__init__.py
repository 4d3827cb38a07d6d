"""Numerical laboratory for the Alt-Phillips free-boundary problem with Lorentz-space sources."""

__version__ = "0.1.0"

from .grid import GridDomain, MatrixField, ScalarField, build_ball_grid, gradient, integrate  # noqa: E402
from .energy import ProblemParams, energy, smoothed_energy_gradient  # noqa: E402
from .solver import SolveResult, SolverConfig, minimize  # noqa: E402
from .fbanalysis import ExponentFit, FBReport, density_report, growth_fit  # noqa: E402
from .lorentz import weak_lp_norm  # noqa: E402
from .radial import radial_bvp_oracle, radial_exact_case  # noqa: E402

__all__ = [
    "GridDomain", "MatrixField", "ScalarField", "build_ball_grid", "gradient", "integrate",
    "ProblemParams", "energy", "smoothed_energy_gradient",
    "SolveResult", "SolverConfig", "minimize",
    "ExponentFit", "FBReport", "density_report", "growth_fit",
    "weak_lp_norm", "radial_bvp_oracle", "radial_exact_case",
]
