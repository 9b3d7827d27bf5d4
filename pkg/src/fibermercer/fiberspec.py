"""Nystrom eigendecomposition of the fiber operators T_omega and off-grid extension."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidArgument, KernelValidationError, NumericalFailure, UnsupportedOperation
from .grid import QuadratureRule, check_same_quadrature
from .kernel import DiscreteKernel, KernelSpec, _evaluate

__all__ = [
    "DEFAULT_EPS_REL",
    "FiberSpectrum",
    "FiberDiagnostics",
    "fiber_eigendecomposition",
    "decompose_all",
    "nystrom_extend",
    "fiber_diagnostics",
]

DEFAULT_EPS_REL = 1e-10
# eigenvalues closer than this (relative to lambda_max) count as repeated
REPEAT_TOL = 1e-12
SIGN_TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FiberSpectrum:
    """Kept eigenpairs of one fiber, eigenvalues descending.

    ``eigenfunctions[n, i]`` is x_n(omega_j, t_i); rows are orthonormal in the
    quadrature inner product. ``discarded_signed`` is the plain sum of the dropped
    eigenvalues, ``discarded_mass`` the sum of their magnitudes.
    """

    fiber_index: int
    omega: float
    quad: QuadratureRule
    eigenvalues: NDArray[np.float64]
    eigenfunctions: NDArray[np.float64]
    threshold_used: float
    discarded_mass: float
    discarded_signed: float = 0.0

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=np.float64).reshape(-1)
        x = np.array(self.eigenfunctions, dtype=np.float64).reshape(lam.size, self.quad.size)
        lam.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfunctions", x)

    @property
    def rank(self) -> int:
        return self.eigenvalues.size


def _sign_fix(vectors: NDArray[np.float64]) -> NDArray[np.float64]:
    """Make the largest-magnitude entry of each column positive (lowest index wins ties).

    Entries within ``SIGN_TIE_TOL`` (relative) of the column maximum count as tied,
    so symmetric eigenvectors get the same sign whatever the rounding.
    """
    mag = np.abs(vectors)
    if mag.size == 0:
        return vectors
    near = mag >= mag.max(axis=0) * (1.0 - SIGN_TIE_TOL)
    idx = np.argmax(near, axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fiber_eigendecomposition(dk: DiscreteKernel, j: int, eps_rel: float = DEFAULT_EPS_REL,
                             tol_sym: float = 1e-12) -> FiberSpectrum:
    """Solve ``D^1/2 K_j D^1/2 v = lam v`` and keep pairs with ``lam > eps_rel * lam_max``.

    Node values are recovered as ``x_n(t_i) = v_n[i] / sqrt(w_i)``. A fiber whose
    symmetry defect exceeds ``tol_sym`` is refused rather than repaired.
    """
    if not 0.0 <= eps_rel < 1.0:
        raise InvalidArgument(f"eps_rel must lie in [0, 1), got {eps_rel}")
    m = dk.pgrid.size
    if not 0 <= j < m:
        raise InvalidArgument(f"fiber index {j} out of range for {m} fibers")
    K = dk.values[j]
    defect = float(np.abs(K - K.T).max())
    if defect > tol_sym:
        raise KernelValidationError(f"fiber {j}: symmetry defect {defect:.3e} exceeds {tol_sym:.1e}")
    w = dk.quad.weights
    root = np.sqrt(w)
    A = root[:, None] * (0.5 * (K + K.T)) * root[None, :]
    try:
        ev, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"fiber {j}: eigensolver did not converge ({exc})", fiber=j) from None
    if not (np.all(np.isfinite(ev)) and np.all(np.isfinite(V))):
        raise NumericalFailure(f"fiber {j}: eigensolver returned non-finite values", fiber=j)

    order = np.argsort(-ev, kind="stable")
    ev, V = ev[order], V[:, order]
    lam_max = ev[0]
    threshold = eps_rel * lam_max if lam_max > 0 else 0.0
    keep = (ev > threshold) & (ev > 0)
    dropped = ev[~keep]
    x = _sign_fix(V[:, keep]) / root[:, None]
    return FiberSpectrum(
        fiber_index=j,
        omega=float(dk.pgrid.points[j]),
        quad=dk.quad,
        eigenvalues=ev[keep],
        eigenfunctions=x.T,
        threshold_used=float(threshold),
        discarded_mass=float(np.abs(dropped).sum()),
        discarded_signed=float(dropped.sum()),
    )


def decompose_all(dk: DiscreteKernel, eps_rel: float = DEFAULT_EPS_REL, tol_sym: float = 1e-12,
                  threads: int | None = None) -> list[FiberSpectrum]:
    """Decompose every fiber; results come back in fiber order regardless of scheduling."""
    m = dk.pgrid.size
    workers = max(1, min(m, threads or os.cpu_count() or 1))
    if workers == 1:
        return [fiber_eigendecomposition(dk, j, eps_rel, tol_sym) for j in range(m)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: fiber_eigendecomposition(dk, j, eps_rel, tol_sym), range(m)))


def nystrom_extend(spectrum: FiberSpectrum, spec: KernelSpec, omega: float, t_values) -> NDArray[np.float64]:
    """Evaluate the kept eigenfunctions off the grid.

    ``x_n(t) = lam_n^-1 * sum_i w_i K(omega, t, t_i) x_n(t_i)``; returns an array of
    shape ``(rank, len(t_values))``.
    """
    if spec.variant == "tabulated":
        raise UnsupportedOperation("cannot extend eigenfunctions of a tabulated kernel off its grid")
    if abs(omega - spectrum.omega) > 1e-12 * max(1.0, abs(spectrum.omega)):
        raise InvalidArgument(f"omega={omega} is not the grid point {spectrum.omega} of this spectrum")
    t = np.asarray(t_values, dtype=np.float64).reshape(-1)
    if spectrum.rank == 0 or t.size == 0:
        return np.zeros((spectrum.rank, t.size))
    if t.min() < spec.s_interval.lo or t.max() > spec.s_interval.hi:
        raise InvalidArgument("t values outside the kernel's S interval")
    quad = spectrum.quad
    kmat = np.broadcast_to(_evaluate(spec, spectrum.omega, t[:, None], quad.nodes[None, :]), (t.size, quad.size))
    return (spectrum.eigenfunctions * quad.weights) @ kmat.T / spectrum.eigenvalues[:, None]


@dataclass(frozen=True)
class FiberDiagnostics:
    eigen_residual: float
    orthonormality_defect: float
    repeated_pairs: tuple[tuple[int, int], ...] = ()

    def to_dict(self):
        return {
            "eigen_residual": self.eigen_residual,
            "orthonormality_defect": self.orthonormality_defect,
            "repeated_pairs": [list(p) for p in self.repeated_pairs],
        }


def fiber_diagnostics(spectrum: FiberSpectrum, dk: DiscreteKernel) -> FiberDiagnostics:
    """Eigen-equation residual and orthonormality defect of a spectrum against a kernel fiber."""
    check_same_quadrature(spectrum.quad, dk.quad)
    if spectrum.rank == 0:
        return FiberDiagnostics(0.0, 0.0)
    w = dk.quad.weights
    x = spectrum.eigenfunctions
    lam = spectrum.eigenvalues
    K = dk.values[spectrum.fiber_index]
    applied = (x * w) @ K.T
    residual = float(np.abs(applied - lam[:, None] * x).max())
    gram = (x * w) @ x.T
    ortho = float(np.abs(gram - np.eye(lam.size)).max())
    scale = max(abs(lam).max(), np.finfo(float).tiny)
    repeated = tuple(
        (n, n + 1) for n in range(lam.size - 1) if abs(lam[n] - lam[n + 1]) <= REPEAT_TOL * scale
    )
    return FiberDiagnostics(residual, ortho, repeated)
