"""Deterministic forward models and the Gaussian quadratic misfit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class ForwardEvaluationError(ArithmeticError):
    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Diagonal observational noise covariance."""

    gamma_diag: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma_diag, dtype=float))
        if g.ndim != 1 or g.size == 0:
            raise ValueError("gamma_diag must be a non-empty vector")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValueError("gamma_diag entries must be positive and finite")
        object.__setattr__(self, "gamma_diag", g)

    @classmethod
    def isotropic(cls, data_dim: int, variance: float = 1.0) -> "NoiseModel":
        return cls(np.full(int(data_dim), float(variance)))

    @property
    def data_dim(self) -> int:
        return self.gamma_diag.shape[0]

    @property
    def c_gamma(self) -> float:
        """Largest eigenvalue of the inverse covariance."""
        return 1.0 / float(self.gamma_diag.min())

    def whiten(self, residual) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        if r.shape[-1] != self.data_dim:
            raise ValueError(f"residual length {r.shape[-1]} != data dimension {self.data_dim}")
        return r / np.sqrt(self.gamma_diag)


@dataclass(frozen=True, eq=False)
class Observation:
    y: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if not np.all(np.isfinite(y)):
            raise ValueError("observation must be finite")
        object.__setattr__(self, "y", y)


@dataclass(frozen=True, eq=False)
class ForwardModelSpec:
    """A forward map from parameters in R^m to data in R^J.

    kinds:
      ``affine``            G(u) = A u + b
      ``componentwise``     G(u)_j = maps[j]((A u + b)_j), or one vectorized map
      ``ode-observed``      G(u) = observations of a deterministic ODE solve;
                            ``ode`` holds a :class:`randlik.probode.RandomOdeForwardModel`
    """

    kind: str
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None
    maps: Callable | Sequence[Callable] | None = None
    ode: Any = None
    options: dict = field(default_factory=dict)

    @classmethod
    def affine(cls, matrix, offset=None) -> "ForwardModelSpec":
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        b = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        if b.shape != (A.shape[0],):
            raise ValueError("offset length must equal the number of matrix rows")
        return cls("affine", matrix=A, offset=b)

    @classmethod
    def componentwise(cls, matrix, offset, maps) -> "ForwardModelSpec":
        spec = cls.affine(matrix, offset)
        if not callable(maps) and len(maps) != spec.data_dim:
            raise ValueError("need one scalar map per data component")
        return cls("componentwise", matrix=spec.matrix, offset=spec.offset, maps=maps)

    @classmethod
    def ode_observed(cls, model, **options) -> "ForwardModelSpec":
        return cls("ode-observed", ode=model, options=options)

    @property
    def data_dim(self) -> int:
        if self.kind == "ode-observed":
            return self.ode.data_dim
        return self.matrix.shape[0]

    @property
    def param_dim(self) -> int | None:
        if self.kind == "ode-observed":
            return None
        return self.matrix.shape[1]

    def evaluate(self, u) -> np.ndarray:
        """Forward map at one parameter (shape (m,)) or at many (shape (n, m))."""
        u = np.asarray(u, dtype=float)
        single = u.ndim <= 1
        U = np.atleast_2d(u.reshape(1, -1) if single else u)
        if self.kind == "ode-observed":
            from .probode import solve_deterministic

            out = solve_deterministic(self.ode, U, **self.options)
        else:
            if U.shape[1] != self.matrix.shape[1]:
                raise ValueError(f"parameter dimension {U.shape[1]} != {self.matrix.shape[1]}")
            out = U @ self.matrix.T + self.offset
            if self.kind == "componentwise":
                if callable(self.maps):
                    out = np.asarray(self.maps(out), dtype=float)
                else:
                    out = np.column_stack([g(out[:, j]) for j, g in enumerate(self.maps)])
            elif self.kind != "affine":
                raise ValueError(f"unknown forward model kind {self.kind!r}")
        bad = ~np.all(np.isfinite(out), axis=1)
        if np.any(bad):
            node = U[int(np.argmax(bad))]
            raise ForwardEvaluationError(f"non-finite forward output at u={node.tolist()}", node)
        return out[0] if single else out


def evaluate_forward(spec: ForwardModelSpec, u) -> np.ndarray:
    return spec.evaluate(u)


def quadratic_misfit(residual, noise: NoiseModel):
    """Half the squared whitened residual norm; vectorized over leading axes."""
    w = noise.whiten(residual)
    return 0.5 * np.sum(w * w, axis=-1)


def misfit_error_bound_check(phi: float, g, g_approx, noise: NoiseModel, y=None):
    """Pointwise misfit error against the forward-model error.

    Returns ``(lhs, rhs)`` where ``lhs = |Phi - Phi_N|`` is computed from the
    two residuals ``g - y`` and ``g_approx - y`` (``y`` defaults to zero)
    and ``rhs = 2 c_gamma (sqrt(phi) |g - g_approx| + |g - g_approx|^2)``.
    """
    g = np.asarray(g, dtype=float)
    ga = np.asarray(g_approx, dtype=float)
    y = np.zeros_like(g) if y is None else np.asarray(y, dtype=float)
    if g.shape != ga.shape or g.shape != y.shape or g.shape[-1] != noise.data_dim:
        raise ValueError("dimension mismatch between g, g_approx, y and noise")
    lhs = np.abs(quadratic_misfit(g - y, noise) - quadratic_misfit(ga - y, noise))
    err = np.linalg.norm(g - ga, axis=-1)
    rhs = 2.0 * noise.c_gamma * (np.sqrt(phi) * err + err**2)
    return lhs, rhs


def moment_misfit_error_check(phi: float, phi_n, forward_err, q: float, noise: NoiseModel):
    """Moment form of the misfit error bound over an ensemble at fixed u.

    ``phi_n`` and ``forward_err`` hold per-realization values of Phi_N(u)
    and |G(u) - G_N(u)|. Returns empirical ``(lhs, rhs)`` with
    ``lhs = E|Phi - Phi_N|^q ^(1/q)`` and
    ``rhs = 4 c_gamma (phi^(q/2) E|dG|^q + E|dG|^(2q))^(1/q)``.
    """
    phi_n = np.asarray(phi_n, dtype=float).ravel()
    err = np.asarray(forward_err, dtype=float).ravel()
    if phi_n.size == 0:
        raise ValueError("empty ensemble")
    if phi_n.shape != err.shape:
        raise ValueError("phi_n and forward_err must have equal length")
    if q < 1:
        raise ValueError("q must be at least 1")
    lhs = float(np.mean(np.abs(phi - phi_n) ** q) ** (1.0 / q))
    rhs = 4.0 * noise.c_gamma * float(
        (phi ** (q / 2) * np.mean(err**q) + np.mean(err ** (2 * q))) ** (1.0 / q)
    )
    return lhs, rhs


def potential_values(spec: ForwardModelSpec, nodes, obs: Observation, noise: NoiseModel):
    """Exact misfit at each node (rows of ``nodes``)."""
    return quadratic_misfit(spec.evaluate(np.atleast_2d(nodes)) - obs.y, noise)


def corollary_constant(phi_moment_s: float, s: float, noise: NoiseModel) -> float:
    """Constant 8 c_gamma (E[Phi^s]^(1/2) + 1)^(1/s) scaling the L^s misfit error."""
    if s < 1:
        raise ValueError("s must be at least 1")
    return 8.0 * noise.c_gamma * (math.sqrt(phi_moment_s) + 1.0) ** (1.0 / s)
