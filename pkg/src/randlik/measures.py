"""Discrete priors on boxes, density fields and the Hellinger metric.

A prior restricted to a compact box is represented by a tensor grid of
nodes with trapezoidal quadrature weights multiplied by the prior density
and renormalized, so that expectations against the prior are finite sums.
Densities with respect to that prior live on the same nodes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_DIM = 4
MAX_NODES = 2_000_000


class CapacityError(ValueError):
    """Requested object exceeds the desk-scale limits of the library."""


class GridMismatchError(ValueError):
    """Two objects that must share a grid refer to different grids."""


@dataclass(frozen=True)
class PriorSpec:
    """Prior density on the box, up to normalization.

    ``kind`` is ``"uniform"`` or ``"truncated-gaussian"``. For the latter,
    ``mean`` and ``variance`` hold per-axis values (diagonal covariance).
    """

    kind: str = "uniform"
    mean: tuple[float, ...] | None = None
    variance: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated-gaussian"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "truncated-gaussian":
            if self.mean is None or self.variance is None:
                raise ValueError("truncated-gaussian prior needs mean and variance")
            if len(self.mean) != len(self.variance):
                raise ValueError("mean and variance lengths differ")
            if any(not v > 0 for v in self.variance):
                raise ValueError("truncated-gaussian variances must be positive")

    @classmethod
    def uniform(cls) -> "PriorSpec":
        return cls("uniform")

    @classmethod
    def truncated_gaussian(cls, mean, variance) -> "PriorSpec":
        return cls(
            "truncated-gaussian",
            tuple(float(m) for m in np.atleast_1d(mean)),
            tuple(float(v) for v in np.atleast_1d(variance)),
        )

    def density(self, nodes: np.ndarray) -> np.ndarray:
        """Unnormalized prior density at ``nodes`` of shape (n, m)."""
        if self.kind == "uniform":
            return np.ones(nodes.shape[0])
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.shape[0] != nodes.shape[1]:
            raise ValueError("prior dimension does not match the box")
        return np.exp(-0.5 * np.sum((nodes - mean) ** 2 / var, axis=1))


@dataclass(frozen=True, eq=False)
class ParameterGrid:
    """Tensor grid over a box with prior quadrature weights summing to one."""

    lower: np.ndarray
    upper: np.ndarray
    points_per_axis: tuple[int, ...]
    nodes: np.ndarray
    weights: np.ndarray
    prior: PriorSpec = field(default_factory=PriorSpec)
    grid_id: str = ""

    @property
    def dim(self) -> int:
        return len(self.points_per_axis)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def axis(self, k: int) -> np.ndarray:
        return np.linspace(self.lower[k], self.upper[k], self.points_per_axis[k])

    def lp_norm(self, values: np.ndarray, p: float) -> float:
        """Prior L^p norm of node values; ``p = inf`` is the grid maximum."""
        values = np.abs(np.asarray(values, dtype=float))
        if math.isinf(p):
            return float(values.max())
        return float(np.dot(self.weights, values**p) ** (1.0 / p))


def _grid_id(lower, upper, points, prior: PriorSpec) -> str:
    h = hashlib.sha1()
    h.update(np.asarray(lower, dtype=float).tobytes())
    h.update(np.asarray(upper, dtype=float).tobytes())
    h.update(np.asarray(points, dtype=np.int64).tobytes())
    h.update(repr(prior).encode())
    return h.hexdigest()[:16]


def trapezoid_weights(n: int, length: float) -> np.ndarray:
    w = np.full(n, length / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def build_grid(prior: PriorSpec, box, points_per_axis) -> ParameterGrid:
    """Trapezoidal tensor grid on ``box`` weighted by the prior density.

    Parameters
    ----------
    prior : PriorSpec
    box : sequence of (lower, upper) pairs, one per axis
    points_per_axis : int or sequence of int
        Number of nodes per axis (at least 2). A scalar applies to all axes.
    """
    box = [tuple(map(float, b)) for b in box]
    if len(box) == 0:
        raise ValueError("box must have at least one axis")
    m = len(box)
    if m > MAX_DIM:
        raise CapacityError(f"parameter dimension {m} exceeds the limit of {MAX_DIM}")
    if np.isscalar(points_per_axis):
        points = (int(points_per_axis),) * m
    else:
        points = tuple(int(k) for k in points_per_axis)
    if len(points) != m:
        raise ValueError("points_per_axis length does not match the box")
    if any(k < 2 for k in points):
        raise ValueError("need at least 2 points per axis")
    lower = np.array([b[0] for b in box])
    upper = np.array([b[1] for b in box])
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("box bounds must be finite")
    if np.any(upper < lower):
        raise ValueError("empty box: upper bound below lower bound")
    if np.any(upper == lower):
        raise ValueError("zero-volume box")
    total = math.prod(points)
    if total > MAX_NODES:
        raise CapacityError(f"{total} grid nodes exceed the limit of {MAX_NODES}")

    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(lower, upper, points)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([a.ravel() for a in mesh], axis=1)
    wmesh = np.meshgrid(
        *[trapezoid_weights(k, hi - lo) for lo, hi, k in zip(lower, upper, points)],
        indexing="ij",
    )
    weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    weights = weights * prior.density(nodes)
    weights = weights / weights.sum()
    return ParameterGrid(
        lower=lower,
        upper=upper,
        points_per_axis=points,
        nodes=nodes,
        weights=weights,
        prior=prior,
        grid_id=_grid_id(lower, upper, points, prior),
    )


@dataclass(frozen=True, eq=False)
class DensityField:
    """Density with respect to the grid prior, possibly unnormalized.

    The represented unnormalized density is ``values * exp(-log_shift)``;
    ``norm_const`` is the prior integral of ``values``. The shift keeps
    ``values`` in floating-point range and cancels in every normalized
    quantity.
    """

    grid_id: str
    values: np.ndarray
    norm_const: float
    log_shift: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")
        if np.any(self.values < 0):
            raise ValueError("density values must be non-negative")
        if not (np.isfinite(self.norm_const) and self.norm_const > 0):
            raise ValueError(f"normalization constant must be positive, got {self.norm_const}")

    @property
    def normalized(self) -> np.ndarray:
        return self.values / self.norm_const

    @property
    def log_Z(self) -> float:
        """Log of the normalizer of the unshifted density."""
        return math.log(self.norm_const) - self.log_shift

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)


def density_field(grid: ParameterGrid, values, log_shift: float = 0.0) -> DensityField:
    """Wrap node values as a density field, computing its normalizer."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.size,):
        raise ValueError(f"expected {grid.size} node values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("density values must be finite")
    return DensityField(grid.grid_id, values, float(np.dot(grid.weights, values)), log_shift)


def _check_on_grid(grid: ParameterGrid, *fields: DensityField) -> None:
    for f in fields:
        if f.grid_id != grid.grid_id:
            raise GridMismatchError(f"density lives on grid {f.grid_id}, not {grid.grid_id}")


def _node_values(grid: ParameterGrid, f) -> np.ndarray:
    if callable(f):
        vals = np.asarray(f(grid.nodes), dtype=float)
        if vals.shape != (grid.size,):
            vals = np.array([float(f(x)) for x in grid.nodes])
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), (grid.size,))
    return vals


def expectation(grid: ParameterGrid, density: DensityField, f) -> float:
    """Expectation of ``f`` under the normalized density.

    ``f`` is an array of node values, a scalar, or a callable taking the
    (n, m) node array (or a single node).
    """
    _check_on_grid(grid, density)
    vals = _node_values(grid, f)
    return float(np.dot(grid.weights * density.normalized, vals))


def hellinger(grid: ParameterGrid, a: DensityField, b: DensityField) -> float:
    """Hellinger distance between the normalized densities ``a`` and ``b``."""
    _check_on_grid(grid, a, b)
    diff = np.sqrt(a.normalized) - np.sqrt(b.normalized)
    d2 = 0.5 * float(np.dot(grid.weights, diff * diff))
    if not math.isfinite(d2):
        raise ValueError("non-finite Hellinger distance")
    return min(1.0, math.sqrt(max(d2, 0.0)))


def hellinger_lipschitz_gap(grid: ParameterGrid, a: DensityField, b: DensityField, f):
    """Both sides of the Hellinger bound on differences of expectations.

    Returns ``(lhs, rhs)`` with ``lhs = |E_a f - E_b f|`` and
    ``rhs = 2 sqrt(E_a f^2 + E_b f^2) d_H(a, b)``.
    """
    vals = _node_values(grid, f)
    if not np.all(np.isfinite(vals)):
        raise ValueError("f must be finite at every node")
    lhs = abs(expectation(grid, a, vals) - expectation(grid, b, vals))
    second = expectation(grid, a, vals**2) + expectation(grid, b, vals**2)
    rhs = 2.0 * math.sqrt(second) * hellinger(grid, a, b)
    return lhs, rhs


# Elementary inequalities used throughout the bound proofs. Each returns
# (lhs, rhs) arrays so callers can count violations.


def young_cauchy_schwarz(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return (a - b) ** 2, 2 * a**2 + 2 * b**2


def diff_square_bound(a, b):
    """(a-b)^2 <= (a^2-b^2)^2 / (a^2+b^2), for a b >= 0 and (a, b) != 0."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return (a - b) ** 2, (a**2 - b**2) ** 2 / (a**2 + b**2)


def exp_lipschitz(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(np.exp(a) - np.exp(b)), (np.exp(a) + np.exp(b)) * np.abs(a - b)


def reciprocal_cubic_bound(a, b):
    """1/((a+b)ab) <= max(a^-3, b^-3) for positive a, b."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return 1.0 / ((a + b) * a * b), np.maximum(a**-3.0, b**-3.0)


def power_mean_bound(s, p: float):
    """|sum s_j|^p <= N^(p-1) sum |s_j|^p along the last axis."""
    s = np.asarray(s, float)
    n = s.shape[-1]
    return np.abs(s.sum(axis=-1)) ** p, n ** (p - 1) * np.sum(np.abs(s) ** p, axis=-1)


def count_violations(lhs, rhs, slack: float = 1e-12) -> int:
    """Number of entries with ``lhs > rhs`` beyond a relative rounding slack."""
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    return int(np.count_nonzero(lhs > rhs + slack * np.maximum(1.0, np.abs(rhs))))


def reweighted(grid: ParameterGrid, factor: Callable | Sequence[float]) -> ParameterGrid:
    """Same nodes, prior weights multiplied node-wise by ``factor``, renormalized.

    Used to move densities to an equivalent reference measure: a density
    ``v`` on ``grid`` corresponds to ``v / factor`` on the result.
    """
    fac = _node_values(grid, factor)
    if np.any(fac <= 0):
        raise ValueError("reweighting factor must be positive")
    w = grid.weights * fac
    w = w / w.sum()
    return ParameterGrid(
        lower=grid.lower,
        upper=grid.upper,
        points_per_axis=grid.points_per_axis,
        nodes=grid.nodes,
        weights=w,
        prior=grid.prior,
        grid_id=grid.grid_id + "-rw" + hashlib.sha1(fac.tobytes()).hexdigest()[:8],
    )
