"""Truncated Mercer reconstruction and RKHS-side quantities computed from a spectral field.

The RKHS inner product on fiber j is taken in the basis ``sqrt(lam_n) x_n``::

    <f, g>_R(omega_j) = sum_n lam_n^-1 <f, x_n>_nu <x_n, g>_nu

summed over kept (positive) eigenvalues only. Mass of f outside the kept span
never enters; ``reproducing_defect`` and ``completeness_defect`` expose it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
from numpy.typing import NDArray

from .alignment import SpectralField
from .errors import InvalidArgument
from .grid import check_same_pgrid, check_same_quadrature
from .kernel import DiscreteKernel

if TYPE_CHECKING:
    from .operators import ModuleElement

__all__ = [
    "ErrorReport",
    "reconstruct",
    "reconstruction_error",
    "trace_identity_defect",
    "truncation_rank_for_energy",
    "rkhs_inner_product",
    "reproducing_defect",
    "parseval_defect",
    "completeness_defect",
    "eigen_coefficients",
]


def _check_field_grids(fld: SpectralField, pgrid, quad):
    check_same_pgrid(fld.pgrid, pgrid)
    check_same_quadrature(fld.quad, quad)


def reconstruct(fld: SpectralField, n_terms: int) -> DiscreteKernel:
    """``sum_{n < N} lam_n(omega_j) x_n(omega_j, t_i) x_n(omega_j, t_k)`` on every fiber."""
    if isinstance(n_terms, bool) or not isinstance(n_terms, (int, np.integer)) or n_terms < 0:
        raise InvalidArgument(f"number of terms must be a nonnegative integer, got {n_terms!r}")
    if n_terms > fld.rank:
        raise InvalidArgument(f"N={n_terms} exceeds field rank {fld.rank}")
    lam = fld.lambdas[:, :n_terms]
    x = fld.eigenfunctions[:, :n_terms, :]
    values = np.einsum("jn,jni,jnk->jik", lam, x, x)
    # outer products are symmetric; make the sum symmetric bit for bit
    values = 0.5 * (values + np.swapaxes(values, 1, 2))
    return DiscreteKernel(fld.pgrid, fld.quad, values)


@dataclass(frozen=True, eq=False)
class ErrorReport:
    per_fiber_l2: NDArray[np.float64]
    grid_sup: float
    ess_sup_l2: float
    n_used: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_fiber_l2": self.per_fiber_l2.tolist(),
            "grid_sup": self.grid_sup,
            "ess_sup_l2": self.ess_sup_l2,
            "N_used": self.n_used,
        }


def reconstruction_error(dk: DiscreteKernel, dk_n: DiscreteKernel, n_used: int | None = None) -> ErrorReport:
    """Weighted L2 (per fiber), grid sup and fiber-max L2 of ``dk - dk_n``."""
    check_same_pgrid(dk.pgrid, dk_n.pgrid)
    check_same_quadrature(dk.quad, dk_n.quad)
    diff = dk.values - dk_n.values
    w = dk.quad.weights
    l2 = np.sqrt(np.einsum("i,k,jik->j", w, w, diff**2))
    return ErrorReport(l2, float(np.abs(diff).max()), float(l2.max()), n_used)


def trace_identity_defect(fld: SpectralField, dk: DiscreteKernel) -> NDArray[np.float64]:
    """``|sum_n lam_n(omega_j) - sum_i w_i K[j, i, i]|`` per fiber."""
    _check_field_grids(fld, dk.pgrid, dk.quad)
    diag = np.einsum("i,jii->j", dk.quad.weights, dk.values)
    return np.abs(fld.lambdas.sum(axis=1) - diag)


def truncation_rank_for_energy(fld: SpectralField, eta: float) -> int:
    """Smallest N whose leading curves hold a fraction >= eta of every fiber's trace."""
    if not 0.0 < eta <= 1.0:
        raise InvalidArgument(f"eta must lie in (0, 1], got {eta}")
    if fld.rank == 0:
        return 0
    cum = np.cumsum(fld.lambdas, axis=1)
    total = cum[:, -1]
    live = total > 0
    if not np.any(live):
        return 0
    ratio = cum[live] / total[live, None]
    ok = np.all(ratio >= eta, axis=0)
    return int(np.argmax(ok)) + 1


def eigen_coefficients(f: "ModuleElement", fld: SpectralField) -> NDArray[np.float64]:
    """``<f(omega_j, .), x_n(omega_j, .)>_nu`` as an (M, rank) array (zero on padding)."""
    _check_field_grids(fld, f.pgrid, f.quad)
    return np.einsum("jnp,jp,p->jn", fld.eigenfunctions, f.values, fld.quad.weights)


def _inverse_lambdas(fld: SpectralField) -> NDArray[np.float64]:
    lam = fld.lambdas
    out = np.zeros_like(lam)
    pos = lam > 0
    out[pos] = 1.0 / lam[pos]
    return out


def rkhs_inner_product(f: "ModuleElement", g: "ModuleElement", fld: SpectralField) -> NDArray[np.float64]:
    a = eigen_coefficients(f, fld)
    b = eigen_coefficients(g, fld)
    return np.einsum("jn,jn,jn->j", _inverse_lambdas(fld), a, b)


def reproducing_defect(f: "ModuleElement", fld: SpectralField, dk: DiscreteKernel) -> float:
    """Max over (j, i) of ``|f(omega_j, t_i) - <f, K(omega_j, ., t_i)>_H|``.

    The kernel sections' coefficients are computed from ``dk`` directly, not via
    the eigen equation, so a spectrum that does not belong to ``dk`` shows up.
    """
    _check_field_grids(fld, dk.pgrid, dk.quad)
    a = eigen_coefficients(f, fld)
    w = fld.quad.weights
    # section_coef[j, n, i] = <x_n, K(omega_j, ., t_i)>_nu
    section_coef = np.einsum("jnk,k,jki->jni", fld.eigenfunctions, w, dk.values)
    inner = np.einsum("jn,jn,jni->ji", _inverse_lambdas(fld), a, section_coef)
    if inner.size == 0:
        return 0.0
    return float(np.abs(f.values - inner).max())


def parseval_defect(f: "ModuleElement", fld: SpectralField) -> NDArray[np.float64]:
    """``|<f, f>_R - sum_n c_n^2|`` with ``c_n = lam_n^-1/2 <f, x_n>_nu``.

    Both sides expand f in the same basis, so this measures consistency of the
    coefficient route rather than completeness; see :func:`completeness_defect`.
    """
    norm2 = rkhs_inner_product(f, f, fld)
    a = eigen_coefficients(f, fld)
    lam = fld.lambdas
    c = np.zeros_like(a)
    pos = lam > 0
    c[pos] = a[pos] / np.sqrt(lam[pos])
    return np.abs(norm2 - np.einsum("jn,jn->j", c, c))


def completeness_defect(f: "ModuleElement", fld: SpectralField) -> NDArray[np.float64]:
    """Parseval defect of the eigenfunction system in the fiber space.

    ``| ||f(omega_j, .)||_nu^2 - sum_n <f, x_n>_nu^2 |``; zero for every f iff the
    kept eigenfunctions span the whole fiber at the grid resolution.
    """
    a = eigen_coefficients(f, fld)
    norm2 = np.einsum("jp,jp,p->j", f.values, f.values, fld.quad.weights)
    return np.abs(norm2 - np.einsum("jn,jn->j", a, a))
