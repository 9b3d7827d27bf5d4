"""Fiberwise Mercer decompositions of parameterized positive-definite kernels.

A kernel K(omega, t, s) defines one integral operator T_omega per parameter
value. This package discretizes S by quadrature and Omega by a midpoint grid,
eigendecomposes every fiber (Nystrom), tracks eigencurves across omega, and
checks the three equivalent spectral conditions: basis property of
sqrt(lam_n) x_n, injectivity of the adjoint embedding, and the pointwise
Mercer expansion.
"""
from .alignment import SpectralField, align_spectra, continuity_report, overlap_matrix
from .errors import (
    FiberMercerError,
    GridMismatch,
    InvalidArgument,
    KernelValidationError,
    NumericalFailure,
    ParseError,
    UnsupportedOperation,
)
from .fiberspec import FiberSpectrum, decompose_all, fiber_diagnostics, fiber_eigendecomposition, nystrom_extend
from .grid import Interval, ParameterGrid, QuadratureRule, gauss_legendre, parameter_grid, trapezoid_rule
from .kernel import (
    DiscreteKernel,
    Factor,
    KernelSpec,
    ValidationReport,
    discretize,
    eval_kernel,
    load_tabulated,
    validate_kernel,
    write_tabulated,
)
from .mercer import (
    ErrorReport,
    completeness_defect,
    parseval_defect,
    reconstruct,
    reconstruction_error,
    reproducing_defect,
    rkhs_inner_product,
    trace_identity_defect,
    truncation_rank_for_energy,
)
from .operators import (
    EquivalenceTolerances,
    ModuleElement,
    PIOKernels,
    adjoint_embed,
    apply_partial_integral,
    apply_T,
    equivalence_report,
    injectivity_diagnostic,
    l2inf_norm,
    module_inner_product,
    self_adjointness_defect,
)

__version__ = "0.1.0"


def spectral_field(dk: DiscreteKernel, eps_rel: float = 1e-10, tol_sym: float = 1e-12,
                   threads: int | None = None) -> SpectralField:
    """Decompose every fiber of ``dk`` and align the results."""
    return align_spectra(decompose_all(dk, eps_rel, tol_sym, threads), dk.pgrid)
