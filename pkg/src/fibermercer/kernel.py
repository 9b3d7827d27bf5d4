"""Parameterized kernels K(omega, t, s): definitions, grid realization, PIKT files and validation.

Built-in variants
-----------------
``separable``
    ``a(omega) * phi(t) * phi(s)`` with ``a`` a polynomial in omega and ``phi``
    drawn from :class:`Factor`.
``gaussian_bandwidth``
    ``exp(-(t - s)**2 / (2 * sigma(omega)**2))`` with affine ``sigma > 0``.
``brownian_scaled``
    ``a(omega) * min(t, s)`` with affine ``a >= 0``.
``low_rank_synthetic``
    ``sum_n lam_n(omega) * phi_n(t) * phi_n(s)`` with ``phi_n = sqrt(2) sin(n pi t)``
    on [0, 1] and polynomial profiles ``lam_n``.
``tabulated``
    A :class:`DiscreteKernel` read from a PIKT file; exists only on its own grids.

All polynomial coefficient tuples are in ascending order (constant term first).
Every built-in evaluates the (t, s)-dependent factor in a form that is exactly
symmetric under t <-> s, so discretized fibers are bitwise symmetric.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .errors import (
    GridMismatch,
    InvalidArgument,
    ParseError,
    UnsupportedOperation,
)
from .grid import Interval, ParameterGrid, QuadratureRule, check_same_pgrid, check_same_quadrature

__all__ = [
    "Factor",
    "KernelSpec",
    "DiscreteKernel",
    "ValidationReport",
    "VARIANTS",
    "eval_kernel",
    "discretize",
    "load_tabulated",
    "write_tabulated",
    "format_real",
    "validate_kernel",
]

VARIANTS = ("separable", "gaussian_bandwidth", "brownian_scaled", "low_rank_synthetic", "tabulated")
FACTOR_KINDS = ("constant", "sin", "polynomial")


def format_real(x: float) -> str:
    """17 significant digits; round-trips every binary64 value exactly."""
    return format(float(x), ".16e")


def _polyval(coefficients: tuple[float, ...], x):
    # Horner, ascending coefficients
    out = np.zeros_like(np.asarray(x, dtype=np.float64))
    for c in reversed(coefficients):
        out = out * x + c
    return out


def _coeffs(values, name: str, max_len: int | None = None) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except TypeError as exc:
        raise InvalidArgument(f"{name} must be a sequence of reals") from exc
    if not out:
        raise InvalidArgument(f"{name} needs at least one coefficient")
    if not all(math.isfinite(v) for v in out):
        raise InvalidArgument(f"{name} coefficients must be finite")
    if max_len is not None and len(out) > max_len:
        raise InvalidArgument(f"{name} is affine: at most {max_len} coefficients, got {len(out)}")
    return out


@dataclass(frozen=True)
class Factor:
    """Fiber factor phi(t): ``constant`` (1), ``sin`` (sin(k pi t)) or ``polynomial``."""

    kind: str = "constant"
    k: int = 1
    coefficients: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise InvalidArgument(f"unknown factor kind {self.kind!r}; expected one of {FACTOR_KINDS}")
        if self.kind == "sin" and (not isinstance(self.k, int) or self.k < 1):
            raise InvalidArgument(f"sin factor needs a positive integer k, got {self.k!r}")
        object.__setattr__(self, "coefficients", _coeffs(self.coefficients, "factor coefficients"))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            return np.ones_like(t)
        if self.kind == "sin":
            return np.sin(self.k * np.pi * t)
        return _polyval(self.coefficients, t)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant"}
        if self.kind == "sin":
            return {"kind": "sin", "k": self.k}
        return {"kind": "polynomial", "coefficients": list(self.coefficients)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Factor":
        d = dict(d)
        kind = d.pop("kind", "constant")
        allowed = {"constant": set(), "sin": {"k"}, "polynomial": {"coefficients"}}.get(kind)
        if allowed is None:
            raise InvalidArgument(f"unknown factor kind {kind!r}")
        extra = set(d) - allowed
        if extra:
            raise InvalidArgument(f"unknown keys for {kind} factor: {sorted(extra)}")
        if "coefficients" in d:
            d["coefficients"] = tuple(d["coefficients"])
        return cls(kind=kind, **d)


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Fiber matrices on a grid: ``values[j, i, k] = K(omega_j, t_i, t_k)``."""

    pgrid: ParameterGrid
    quad: QuadratureRule
    values: NDArray[np.float64]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        expected = (self.pgrid.size, self.quad.size, self.quad.size)
        if values.shape != expected:
            raise GridMismatch(f"kernel tensor has shape {values.shape}, grids need {expected}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("kernel tensor has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Descriptor of a kernel variant. Use the classmethod constructors."""

    variant: str
    amplitude: tuple[float, ...] = (1.0,)
    factor: Factor = field(default_factory=Factor)
    bandwidth: tuple[float, ...] = (1.0,)
    profiles: tuple[tuple[float, ...], ...] = ()
    table: DiscreteKernel | None = None
    s_interval: Interval = field(default_factory=lambda: Interval(0.0, 1.0))
    omega_interval: Interval = field(default_factory=lambda: Interval(0.0, 1.0))
    source: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "tabulated" and self.table is None:
            raise InvalidArgument("tabulated kernel needs a table")
        if self.variant == "low_rank_synthetic":
            if not self.profiles:
                raise InvalidArgument("low_rank_synthetic needs at least one eigenvalue profile")
            if self.s_interval != Interval(0.0, 1.0):
                raise InvalidArgument("low_rank_synthetic factors are orthonormal on S = [0, 1] only")

    # constructors -----------------------------------------------------------

    @classmethod
    def separable(cls, amplitude, factor: Factor | None = None, **kw) -> "KernelSpec":
        return cls("separable", amplitude=_coeffs(amplitude, "amplitude"), factor=factor or Factor(), **kw)

    @classmethod
    def gaussian(cls, bandwidth, **kw) -> "KernelSpec":
        return cls("gaussian_bandwidth", bandwidth=_coeffs(bandwidth, "bandwidth", 2), **kw)

    @classmethod
    def brownian(cls, amplitude=(1.0,), **kw) -> "KernelSpec":
        return cls("brownian_scaled", amplitude=_coeffs(amplitude, "amplitude", 2), **kw)

    @classmethod
    def low_rank(cls, profiles, **kw) -> "KernelSpec":
        profs = tuple(_coeffs(p, f"profile {n + 1}") for n, p in enumerate(profiles))
        return cls("low_rank_synthetic", profiles=profs, **kw)

    @classmethod
    def tabulated(cls, dk: DiscreteKernel, source: str | None = None) -> "KernelSpec":
        return cls(
            "tabulated",
            table=dk,
            s_interval=dk.quad.interval,
            omega_interval=dk.pgrid.interval,
            source=source,
        )

    @property
    def rank(self) -> int:
        return len(self.profiles)

    # (de)serialization for run configs ---------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"variant": self.variant}
        if self.variant == "separable":
            d.update(amplitude=list(self.amplitude), factor=self.factor.to_dict())
        elif self.variant == "gaussian_bandwidth":
            d["bandwidth"] = list(self.bandwidth)
        elif self.variant == "brownian_scaled":
            d["amplitude"] = list(self.amplitude)
        elif self.variant == "low_rank_synthetic":
            d["profiles"] = [list(p) for p in self.profiles]
        else:
            d["path"] = self.source
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any], s_interval: Interval, omega_interval: Interval,
                  base_dir: str | None = None) -> "KernelSpec":
        d = dict(d)
        variant = d.pop("variant", None)
        allowed = {
            "separable": {"amplitude", "factor"},
            "gaussian_bandwidth": {"bandwidth"},
            "brownian_scaled": {"amplitude"},
            "low_rank_synthetic": {"profiles"},
            "tabulated": {"path"},
        }.get(variant)
        if allowed is None:
            raise InvalidArgument(f"unknown kernel variant {variant!r}; expected one of {VARIANTS}")
        extra = set(d) - allowed
        if extra:
            raise InvalidArgument(f"unknown keys for {variant} kernel: {sorted(extra)}")
        kw = dict(s_interval=s_interval, omega_interval=omega_interval)
        if variant == "separable":
            return cls.separable(d.get("amplitude", (1.0,)), Factor.from_dict(d.get("factor", {})), **kw)
        if variant == "gaussian_bandwidth":
            return cls.gaussian(d.get("bandwidth", (1.0,)), **kw)
        if variant == "brownian_scaled":
            return cls.brownian(d.get("amplitude", (1.0,)), **kw)
        if variant == "low_rank_synthetic":
            return cls.low_rank(d.get("profiles", ()), **kw)
        if "path" not in d:
            raise InvalidArgument("tabulated kernel needs a 'path'")
        path = d["path"]
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return cls.tabulated(load_tabulated(path), source=d["path"])


def _low_rank_factor(n: int, t):
    return math.sqrt(2.0) * np.sin(n * np.pi * t)


def _evaluate(spec: KernelSpec, omega, t, s):
    """Vectorized K(omega, t, s) with numpy broadcasting; no range checks."""
    omega = np.asarray(omega, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    v = spec.variant
    if v == "separable":
        return _polyval(spec.amplitude, omega) * (spec.factor(t) * spec.factor(s))
    if v == "gaussian_bandwidth":
        sigma = _polyval(spec.bandwidth, omega)
        if np.any(sigma <= 0):
            raise InvalidArgument("gaussian bandwidth sigma(omega) must be > 0 on the grid")
        return np.exp(-((t - s) ** 2) / (2.0 * sigma**2))
    if v == "brownian_scaled":
        a = _polyval(spec.amplitude, omega)
        if np.any(a < 0):
            raise InvalidArgument("brownian amplitude a(omega) must be >= 0 on the grid")
        return a * np.minimum(t, s)
    if v == "low_rank_synthetic":
        out = 0.0
        for n, profile in enumerate(spec.profiles, start=1):
            lam = _polyval(profile, omega)
            if np.any(lam < 0):
                raise InvalidArgument(f"eigenvalue profile {n} is negative on the grid")
            out = out + lam * (_low_rank_factor(n, t) * _low_rank_factor(n, s))
        return out
    raise UnsupportedOperation("tabulated kernels exist only on their grid; use discretize")


def eval_kernel(spec: KernelSpec, omega: float, t: float, s: float) -> float:
    """Evaluate an analytic kernel at a single point."""
    if spec.variant == "tabulated":
        raise UnsupportedOperation("tabulated kernels exist only on their grid; use discretize")
    if not spec.omega_interval.contains(omega):
        raise InvalidArgument(f"omega={omega} outside {spec.omega_interval}")
    for name, x in (("t", t), ("s", s)):
        if not spec.s_interval.contains(x):
            raise InvalidArgument(f"{name}={x} outside {spec.s_interval}")
    return float(_evaluate(spec, omega, t, s))


def discretize(spec: KernelSpec, quad: QuadratureRule, pgrid: ParameterGrid) -> DiscreteKernel:
    """Realize ``spec`` on the product grid; tabulated kernels pass through unchanged."""
    if spec.variant == "tabulated":
        table = spec.table
        check_same_quadrature(table.quad, quad, "tabulated kernel nodes and requested quadrature")
        check_same_pgrid(table.pgrid, pgrid, "tabulated kernel parameter grid and requested grid")
        return DiscreteKernel(pgrid, quad, table.values)
    if quad.nodes[0] < spec.s_interval.lo or quad.nodes[-1] > spec.s_interval.hi:
        raise InvalidArgument("quadrature nodes fall outside the kernel's S interval")
    if pgrid.points[0] < spec.omega_interval.lo or pgrid.points[-1] > spec.omega_interval.hi:
        raise InvalidArgument("parameter points fall outside the kernel's Omega interval")
    omega = pgrid.points[:, None, None]
    t = quad.nodes[None, :, None]
    s = quad.nodes[None, None, :]
    values = np.broadcast_to(_evaluate(spec, omega, t, s), (pgrid.size, quad.size, quad.size))
    return DiscreteKernel(pgrid, quad, values)


# ---------------------------------------------------------------------------
# PIKT text format
#
#   line 1          PIKT 1 M P
#   line 2          M parameter points
#   line 3          M parameter weights
#   line 4          P nodes
#   line 5          P weights
#   lines 6..       M blocks of P lines with P values (row i is t_i)
# ---------------------------------------------------------------------------


def write_tabulated(dk: DiscreteKernel, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(pikt_text(dk))


def pikt_text(dk: DiscreteKernel) -> str:
    def row(values) -> str:
        return " ".join(format_real(v) for v in values)

    m, p, _ = dk.shape
    lines = [
        f"PIKT 1 {m} {p}",
        row(dk.pgrid.points),
        row(dk.pgrid.weights),
        row(dk.quad.nodes),
        row(dk.quad.weights),
    ]
    for j in range(m):
        lines.extend(row(dk.values[j, i]) for i in range(p))
    return "\n".join(lines) + "\n"


def _parse_reals(text: str, count: int, path: str, lineno: int, what: str) -> NDArray[np.float64]:
    tokens = text.split()
    if len(tokens) != count:
        raise ParseError(f"expected {count} {what}, found {len(tokens)}", path, lineno)
    try:
        values = np.array([float(tok) for tok in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad real in {what}: {exc}", path, lineno) from None
    if not np.all(np.isfinite(values)):
        raise ParseError(f"non-finite value in {what}", path, lineno)
    return values


def read_pikt_lines(path) -> list[str]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError as exc:
        raise ParseError(f"non-ASCII byte at offset {exc.start}", os.fspath(path)) from None
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def parse_grid_header(lines: list[str], path: str, magic: str, ncounts: int):
    """Parse the shared 5-line header; returns (counts, pgrid, quad)."""
    if not lines:
        raise ParseError("empty file", path, 1)
    head = lines[0].split()
    if len(head) != 2 + ncounts or head[0] != magic or head[1] != "1":
        raise ParseError(f"header must read '{magic} 1' followed by {ncounts} counts", path, 1)
    try:
        counts = [int(tok) for tok in head[2:]]
    except ValueError:
        raise ParseError("counts in header must be integers", path, 1) from None
    if counts[0] < 1 or counts[-1] < 1 or any(c < 0 for c in counts):
        raise ParseError("grid counts in header must be positive", path, 1)
    m, p = counts[0], counts[-1]

    def line(k: int) -> str:
        if k > len(lines):
            raise ParseError("unexpected end of file", path, k)
        return lines[k - 1]

    points = _parse_reals(line(2), m, path, 2, "parameter points")
    pweights = _parse_reals(line(3), m, path, 3, "parameter weights")
    nodes = _parse_reals(line(4), p, path, 4, "nodes")
    weights = _parse_reals(line(5), p, path, 5, "node weights")
    try:
        pgrid = ParameterGrid(points, pweights, Interval.hull(points, pweights))
    except InvalidArgument as exc:
        raise ParseError(str(exc), path, 2) from None
    try:
        quad = QuadratureRule(nodes, weights, Interval.hull(nodes, weights))
    except InvalidArgument as exc:
        raise ParseError(str(exc), path, 4) from None
    return counts, pgrid, quad, line


def parse_blocks(lines, line, path: str, nblocks: int, nrows: int, ncols: int, start: int = 6):
    out = np.empty((nblocks, nrows, ncols))
    k = start
    for b in range(nblocks):
        for r in range(nrows):
            out[b, r] = _parse_reals(line(k), ncols, path, k, "values")
            k += 1
    if len(lines) >= k:
        raise ParseError("trailing content after last block", path, k)
    return out


def load_tabulated(path) -> DiscreteKernel:
    """Read a PIKT file. Grid intervals are inferred from the symmetric hull of the points."""
    path = os.fspath(path)
    lines = read_pikt_lines(path)
    (m, p), pgrid, quad, line = parse_grid_header(lines, path, "PIKT", 2)
    values = parse_blocks(lines, line, path, m, p, p)
    return DiscreteKernel(pgrid, quad, values)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValidationReport:
    """Per-fiber defects for symmetry, positive semidefiniteness and integrability.

    ``hs_constant[j]`` is the weighted squared Frobenius norm of fiber j, i.e. the
    bound constant C(omega_j) for the operator norm of T on that fiber.
    """

    symmetry_defect: NDArray[np.float64]
    psd_min_eigenvalue: NDArray[np.float64]
    psd_max_eigenvalue: NDArray[np.float64]
    hs_constant: NDArray[np.float64]
    hs_ess_sup: float
    tol_sym: float
    tol_psd: float
    verdicts: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def failed_conditions(self) -> list[str]:
        return [k for k, v in self.verdicts.items() if not v]

    def to_dict(self) -> dict[str, Any]:
        return {
            "symmetry_defect": self.symmetry_defect.tolist(),
            "psd_min_eigenvalue": self.psd_min_eigenvalue.tolist(),
            "psd_max_eigenvalue": self.psd_max_eigenvalue.tolist(),
            "hs_constant": self.hs_constant.tolist(),
            "hs_ess_sup": self.hs_ess_sup,
            "tolerances": {"tol_sym": self.tol_sym, "tol_psd": self.tol_psd},
            "verdicts": dict(self.verdicts),
            "passed": self.passed,
        }


def weighted_fibers(dk: DiscreteKernel) -> NDArray[np.float64]:
    """``D^1/2 K_j D^1/2`` for every fiber, from the symmetrized tensor."""
    sym = 0.5 * (dk.values + np.swapaxes(dk.values, 1, 2))
    root = np.sqrt(dk.quad.weights)
    return root[None, :, None] * sym * root[None, None, :]


def symmetry_defects(dk: DiscreteKernel) -> NDArray[np.float64]:
    return np.abs(dk.values - np.swapaxes(dk.values, 1, 2)).max(axis=(1, 2))


def validate_kernel(dk: DiscreteKernel, tol_sym: float = 1e-12, tol_psd: float = 1e-12) -> ValidationReport:
    """Check the discrete analogues of measurability, symmetry, PSD and square integrability.

    PSD passes on fiber j iff its smallest weighted eigenvalue is at least
    ``-tol_psd * max(1, largest eigenvalue)``.
    """
    if not (tol_sym > 0 and tol_psd > 0):
        raise InvalidArgument("tolerances must be > 0")
    sym = symmetry_defects(dk)
    eig = np.linalg.eigvalsh(weighted_fibers(dk))
    lo, hi = eig[:, 0], eig[:, -1]
    w = dk.quad.weights
    hs = np.einsum("i,k,jik->j", w, w, dk.values**2)
    hs_sup = float(hs.max())
    verdicts = {
        "finite": bool(np.all(np.isfinite(dk.values))),
        "symmetry": bool(np.all(sym <= tol_sym)),
        "psd": bool(np.all(lo >= -tol_psd * np.maximum(1.0, hi))),
        "integrability": math.isfinite(hs_sup),
    }
    return ValidationReport(sym, lo, hi, hs, hs_sup, float(tol_sym), float(tol_psd), verdicts)
