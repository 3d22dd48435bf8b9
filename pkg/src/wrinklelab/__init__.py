"""
wrinklelab: numerical laboratory for the wrinkling energy-scaling law of a
uniaxially stretched thin film.

Modules
-------
spectral
    Fourier-space fields, the scalar energy S_L and its constraint.
cascade
    The explicit dyadic cascade of wrinkles.
solver
    Minimization of S_L, multiplier recovery and structural checks.
repair
    Conversion of an arbitrary periodic field into an admissible one.
fvk
    The rescaled FvK energy E_L and the upper-bound deformation.
experiments
    Reproducible scans, the scaling experiment and reports.
"""

__version__ = "0.1.0"

from .cascade import CascadePlan, ModeCapError, build_cascade, identity_residual, plan_cascade
from .fvk import (
    E0,
    DeformationField,
    EnergyBreakdown,
    assemble_upper_bound,
    cutoff,
    evaluate_EL,
    evaluate_Eh,
    rescale,
    unrescale,
)
from .repair import RepairBudget, SlabField, lower_bound_certificate, penalty, repair
from .solver import SolveOptions, SolveResult, minimize, regularity_report, solve, structural_checks
from .spectral import (
    CoefficientField,
    FrequencyGrid,
    FullField,
    XGrid,
    combine,
    constraint_residual,
    energy,
    periodic_extend,
    rescale_alpha,
    symmetrize_odd,
    synthesize,
)

__all__ = [
    "CascadePlan",
    "CoefficientField",
    "DeformationField",
    "E0",
    "EnergyBreakdown",
    "FrequencyGrid",
    "FullField",
    "ModeCapError",
    "RepairBudget",
    "SlabField",
    "SolveOptions",
    "SolveResult",
    "XGrid",
    "assemble_upper_bound",
    "build_cascade",
    "combine",
    "constraint_residual",
    "cutoff",
    "energy",
    "evaluate_EL",
    "evaluate_Eh",
    "identity_residual",
    "lower_bound_certificate",
    "minimize",
    "penalty",
    "periodic_extend",
    "plan_cascade",
    "regularity_report",
    "repair",
    "rescale",
    "rescale_alpha",
    "solve",
    "structural_checks",
    "symmetrize_odd",
    "synthesize",
    "unrescale",
]
