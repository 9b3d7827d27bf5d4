"""Discretizations of the fiber measure space (S, nu) and the parameter space (Omega, mu).

Both spaces are bounded intervals of the real line. The fiber space carries a
quadrature rule; the parameter space carries a midpoint grid whose maximum over
points stands in for the essential supremum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import GridMismatch, InvalidArgument

__all__ = [
    "Interval",
    "QuadratureRule",
    "ParameterGrid",
    "gauss_legendre",
    "trapezoid_rule",
    "parameter_grid",
    "check_same_quadrature",
    "check_same_pgrid",
]


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise InvalidArgument(f"interval bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise InvalidArgument(f"interval needs lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    @classmethod
    def hull(cls, points: NDArray[np.float64], weights: NDArray[np.float64]) -> "Interval":
        """Best-guess interval for a tabulated rule.

        Assumes the rule is symmetric about its interval center (true for every
        rule this package builds) and widens to cover the points otherwise.
        """
        center = 0.5 * (points[0] + points[-1])
        half = 0.5 * float(np.sum(weights))
        lo = min(center - half, float(points[0]))
        hi = max(center + half, float(points[-1]))
        if not lo < hi:
            hi = lo + max(half, 1.0) * 2.0
        return cls(lo, hi)


def _frozen_array(values, name: str) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise InvalidArgument(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _check_points(points, weights, interval: Interval, what: str):
    if points.shape != weights.shape:
        raise InvalidArgument(f"{what}: {points.size} points but {weights.size} weights")
    if np.any(np.diff(points) <= 0):
        raise InvalidArgument(f"{what}: points must be strictly increasing")
    if np.any(weights <= 0):
        raise InvalidArgument(f"{what}: weights must be strictly positive")
    if points[0] < interval.lo or points[-1] > interval.hi:
        raise InvalidArgument(f"{what}: points fall outside [{interval.lo}, {interval.hi}]")


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and positive weights discretizing the fiber measure nu."""

    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]
    interval: Interval

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen_array(self.nodes, "nodes"))
        object.__setattr__(self, "weights", _frozen_array(self.weights, "weights"))
        _check_points(self.nodes, self.weights, self.interval, "quadrature rule")

    @property
    def size(self) -> int:
        return self.nodes.size

    def same_as(self, other: "QuadratureRule") -> bool:
        return np.array_equal(self.nodes, other.nodes) and np.array_equal(self.weights, other.weights)


@dataclass(frozen=True, eq=False)
class ParameterGrid:
    """Sample points of Omega. The weights feed mu-integrals only, never the ess-sup."""

    points: NDArray[np.float64]
    weights: NDArray[np.float64]
    interval: Interval

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_array(self.points, "points"))
        object.__setattr__(self, "weights", _frozen_array(self.weights, "weights"))
        _check_points(self.points, self.weights, self.interval, "parameter grid")

    @property
    def size(self) -> int:
        return self.points.size

    def same_as(self, other: "ParameterGrid") -> bool:
        return np.array_equal(self.points, other.points) and np.array_equal(self.weights, other.weights)


def _require_count(n, minimum: int, name: str) -> int:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise InvalidArgument(f"{name} must be an integer, got {n!r}")
    if n < minimum:
        raise InvalidArgument(f"{name} must be >= {minimum}, got {n}")
    return int(n)


def gauss_legendre(n: int, interval: Interval) -> QuadratureRule:
    """n-point Gauss-Legendre rule mapped to ``interval``; exact up to degree 2n-1."""
    n = _require_count(n, 1, "n")
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * interval.length
    nodes = interval.lo + half * (x + 1.0)
    return QuadratureRule(nodes, half * w, interval)


def trapezoid_rule(n: int, interval: Interval) -> QuadratureRule:
    n = _require_count(n, 2, "n")
    nodes = np.linspace(interval.lo, interval.hi, n)
    h = interval.length / (n - 1)
    weights = np.full(n, h)
    weights[0] = weights[-1] = 0.5 * h
    return QuadratureRule(nodes, weights, interval)


def parameter_grid(m: int, interval: Interval) -> ParameterGrid:
    """Midpoints of ``m`` equal cells, each weighted by the cell length."""
    m = _require_count(m, 1, "m")
    h = interval.length / m
    points = interval.lo + h * (np.arange(m) + 0.5)
    return ParameterGrid(points, np.full(m, h), interval)


def check_same_quadrature(a: QuadratureRule, b: QuadratureRule, what: str = "quadrature rules"):
    if a is not b and not a.same_as(b):
        raise GridMismatch(f"{what} differ")


def check_same_pgrid(a: ParameterGrid, b: ParameterGrid, what: str = "parameter grids"):
    if a is not b and not a.same_as(b):
        raise GridMismatch(f"{what} differ")
