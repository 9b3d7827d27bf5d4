"""Cross-fiber eigencurve tracking.

Per-fiber spectra come out of the eigensolver sorted by eigenvalue, so an
eigenvalue crossing swaps indices and every eigenvector carries an arbitrary
sign. ``align_spectra`` sweeps the parameter grid once, matching each fiber's
eigenfunctions to the previous fiber's by quadrature overlap, so that global
index n follows one continuous branch lambda_n(omega), x_n(omega, .).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import GridMismatch, InvalidArgument
from .fiberspec import FiberSpectrum
from .grid import ParameterGrid, QuadratureRule, check_same_quadrature

__all__ = [
    "SpectralField",
    "ContinuityReport",
    "overlap_matrix",
    "align_spectra",
    "continuity_report",
    "DEGENERACY_TOL",
    "AMBIGUITY_TOL",
]

# relative eigenvalue gap below which a cluster is treated as one eigenspace
DEGENERACY_TOL = 1e-11
AMBIGUITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Aligned eigencurves on the parameter grid.

    ``lambdas[j, n]`` and ``eigenfunctions[j, n, :]`` are zero where fiber j has
    fewer than ``rank`` kept eigenpairs. Provenance: ``source_index[j, n]`` is the
    within-fiber index of the pair placed at global index n (-1 for padding),
    ``flipped`` marks sign changes and ``rotated`` marks members of a degenerate
    cluster whose basis was rotated toward the previous fiber.
    """

    pgrid: ParameterGrid
    quad: QuadratureRule
    lambdas: NDArray[np.float64]
    eigenfunctions: NDArray[np.float64]
    source_index: NDArray[np.int64]
    flipped: NDArray[np.bool_]
    rotated: NDArray[np.bool_]
    thresholds: NDArray[np.float64]
    discarded_mass: NDArray[np.float64]
    discarded_signed: NDArray[np.float64]
    ambiguous_steps: tuple[int, ...] = field(default=())

    @property
    def rank(self) -> int:
        return self.lambdas.shape[1]

    @property
    def fiber_ranks(self) -> NDArray[np.int64]:
        return (self.source_index >= 0).sum(axis=1)

    def active(self, j: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.source_index[j] >= 0)

    def flips_per_curve(self) -> NDArray[np.int64]:
        return self.flipped.sum(axis=0)

    def to_spectra(self) -> list[FiberSpectrum]:
        """Per-fiber spectra (eigenvalue-descending) carrying the aligned eigenfunctions."""
        out = []
        for j in range(self.pgrid.size):
            idx = self.active(j)
            lam = self.lambdas[j, idx]
            order = np.argsort(-lam, kind="stable")
            out.append(FiberSpectrum(
                fiber_index=j,
                omega=float(self.pgrid.points[j]),
                quad=self.quad,
                eigenvalues=lam[order],
                eigenfunctions=self.eigenfunctions[j, idx[order]],
                threshold_used=float(self.thresholds[j]),
                discarded_mass=float(self.discarded_mass[j]),
                discarded_signed=float(self.discarded_signed[j]),
            ))
        return out


def overlap_matrix(a: FiberSpectrum, b: FiberSpectrum) -> NDArray[np.float64]:
    """``O[n, m] = sum_i w_i x_n^a(t_i) x_m^b(t_i)``."""
    check_same_quadrature(a.quad, b.quad, "spectra quadrature rules")
    return (a.eigenfunctions * a.quad.weights) @ b.eigenfunctions.T


def _clusters(lam: NDArray[np.float64]) -> list[NDArray[np.int64]]:
    """Runs of (numerically) equal eigenvalues in a descending sequence, size >= 2 only."""
    if lam.size < 2:
        return []
    scale = lam.max()
    out, start = [], 0
    for n in range(1, lam.size + 1):
        if n == lam.size or lam[n - 1] - lam[n] > DEGENERACY_TOL * scale:
            if n - start >= 2:
                out.append(np.arange(start, n))
            start = n
    return out


def _rotate_clusters(prev: NDArray[np.float64], lam, vecs, w):
    """Pick, inside every degenerate eigenspace, the basis closest to the previous fiber.

    Orthogonal Procrustes between the cluster and the previous eigenfunctions with
    the largest projection onto it. Returns new (lam, vecs, rotated-mask).
    """
    lam = lam.copy()
    vecs = vecs.copy()
    rotated = np.zeros(lam.size, dtype=bool)
    for idx in _clusters(lam):
        k = idx.size
        if prev.shape[0] < k:
            continue
        C = (prev * w) @ vecs[idx].T
        energy = np.einsum("gm,gm->g", C, C)
        rows = np.sort(np.argsort(-energy, kind="stable")[:k])
        U, _, Vt = np.linalg.svd(C[rows])
        Q = Vt.T @ U.T
        if np.allclose(Q, np.eye(k), rtol=0.0, atol=1e-14):
            continue
        vecs[idx] = Q.T @ vecs[idx]
        lam[idx] = np.einsum("lm,l,lm->m", Q, lam[idx], Q)
        rotated[idx] = True
    return lam, vecs, rotated


def _greedy_match(O: NDArray[np.float64]) -> list[tuple[int, int]]:
    """Pairs (row, col) by descending |O|, each row and column used once; ties by index."""
    mag = np.abs(O)
    flat = np.argsort(-mag, axis=None, kind="stable")
    used_r, used_c, pairs = set(), set(), []
    limit = min(O.shape)
    for f in flat:
        if len(pairs) == limit:
            break
        r, c = divmod(int(f), O.shape[1])
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        pairs.append((r, c))
    return pairs


def align_spectra(spectra: Sequence[FiberSpectrum], pgrid: ParameterGrid) -> SpectralField:
    """Assemble per-fiber spectra into globally indexed eigencurves.

    Fiber 0 keeps its own order. For each following fiber, exactly degenerate
    eigenspaces are first rotated toward the previous fiber, then eigenpairs are
    matched to the previous fiber's active curves greedily by |overlap|; signs are
    flipped so matched overlaps are nonnegative. Unmatched pairs take the lowest
    global index not in use at that fiber.
    """
    spectra = list(spectra)
    if not spectra:
        raise InvalidArgument("need at least one fiber spectrum")
    if len(spectra) != pgrid.size:
        raise GridMismatch(f"{len(spectra)} spectra for {pgrid.size} parameter points")
    quad = spectra[0].quad
    for s in spectra[1:]:
        check_same_quadrature(quad, s.quad, "fiber spectra quadrature rules")
    w = quad.weights
    m, p = pgrid.size, quad.size
    rank = max(s.rank for s in spectra)

    lambdas = np.zeros((m, rank))
    funcs = np.zeros((m, rank, p))
    source = np.full((m, rank), -1, dtype=np.int64)
    flipped = np.zeros((m, rank), dtype=bool)
    rotated = np.zeros((m, rank), dtype=bool)
    ambiguous: list[int] = []

    first = spectra[0]
    lambdas[0, : first.rank] = first.eigenvalues
    funcs[0, : first.rank] = first.eigenfunctions
    source[0, : first.rank] = np.arange(first.rank)

    for j in range(1, m):
        spec = spectra[j]
        prev_idx = np.flatnonzero(source[j - 1] >= 0)
        prev = funcs[j - 1, prev_idx]
        lam, vecs = spec.eigenvalues, spec.eigenfunctions
        rot = np.zeros(lam.size, dtype=bool)
        if prev_idx.size and lam.size:
            lam, vecs, rot = _rotate_clusters(prev, lam, vecs, w)
        O = (prev * w) @ vecs.T
        pairs = _greedy_match(O) if O.size else []
        taken = np.zeros(rank, dtype=bool)
        placed = {}
        for r, c in pairs:
            g = int(prev_idx[r])
            placed[c] = g
            taken[g] = True
            col = np.sort(np.abs(O[:, c]))[::-1]
            if col.size > 1 and col[0] > 0.1 and col[0] - col[1] < AMBIGUITY_TOL:
                ambiguous.append(j)
        free = iter(np.flatnonzero(~taken))
        for c in range(lam.size):
            g = placed.get(c)
            if g is None:
                g = int(next(free))
            flip = c in placed and O[np.flatnonzero(prev_idx == g)[0], c] < 0
            sign = -1.0 if flip else 1.0
            lambdas[j, g] = lam[c]
            funcs[j, g] = sign * vecs[c]
            source[j, g] = c
            flipped[j, g] = flip
            rotated[j, g] = rot[c]

    return SpectralField(
        pgrid=pgrid,
        quad=quad,
        lambdas=lambdas,
        eigenfunctions=funcs,
        source_index=source,
        flipped=flipped,
        rotated=rotated,
        thresholds=np.array([s.threshold_used for s in spectra]),
        discarded_mass=np.array([s.discarded_mass for s in spectra]),
        discarded_signed=np.array([s.discarded_signed for s in spectra]),
        ambiguous_steps=tuple(sorted(set(ambiguous))),
    )


@dataclass(frozen=True)
class ContinuityReport:
    max_lambda_jump: tuple[float, ...]
    min_matched_overlap: float | None

    def to_dict(self) -> dict[str, Any]:
        return {"max_lambda_jump": list(self.max_lambda_jump), "min_matched_overlap": self.min_matched_overlap}


def continuity_report(fld: SpectralField) -> ContinuityReport:
    """Largest consecutive-fiber eigenvalue jump per curve and the smallest matched overlap.

    A curve is matched across a step when it is active on both fibers. With a
    single fiber both lists are empty and the overlap is ``None``.
    """
    m = fld.pgrid.size
    if m < 2:
        return ContinuityReport((), None)
    jumps = np.abs(np.diff(fld.lambdas, axis=0)).max(axis=0)
    w = fld.quad.weights
    active = fld.source_index >= 0
    both = active[:-1] & active[1:]
    overlaps = np.einsum("jnp,jnp,p->jn", fld.eigenfunctions[:-1], fld.eigenfunctions[1:], w)
    matched = np.abs(overlaps[both])
    return ContinuityReport(
        tuple(float(v) for v in jumps),
        float(matched.min()) if matched.size else None,
    )
