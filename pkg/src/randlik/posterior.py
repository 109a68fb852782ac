"""Exact, sample and marginal posteriors on a parameter grid, and the
computable constants of the Hellinger convergence bounds.

Every posterior has density ``exp(-Phi) / Z`` with respect to the grid
prior. Potentials are shifted by their minimum before exponentiation and
the shift is carried in ``DensityField.log_shift``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import (
    DensityField,
    GridMismatchError,
    ParameterGrid,
    density_field,
    hellinger,
)


class NormalizationError(ArithmeticError):
    pass


class ExponentMismatchError(ValueError):
    pass


class HeavyTailError(ArithmeticError):
    """Monte Carlo estimate of an exponential moment is dominated by one draw."""


@dataclass(frozen=True, eq=False)
class PotentialField:
    grid_id: str
    phi_values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.phi_values, dtype=float)
        if v.ndim != 1:
            raise ValueError("potential must be a vector of node values")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential must be finite at every node")
        object.__setattr__(self, "phi_values", v)


@dataclass(frozen=True, eq=False)
class RandomPotentialEnsemble:
    """M realizations of the random potential, one row each."""

    grid_id: str
    phi_n_values: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.phi_n_values, dtype=float))
        if v.shape[0] < 1:
            raise ValueError("ensemble needs at least one realization")
        if not np.all(np.isfinite(v)):
            raise ValueError("random potential must be finite")
        object.__setattr__(self, "phi_n_values", v)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def count(self) -> int:
        return self.phi_n_values.shape[0]

    def realization(self, k: int) -> PotentialField:
        return PotentialField(self.grid_id, self.phi_n_values[k])


def potential_field(grid: ParameterGrid, values) -> PotentialField:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.size,):
        raise ValueError(f"expected {grid.size} node values, got shape {values.shape}")
    return PotentialField(grid.grid_id, values)


def random_ensemble(grid: ParameterGrid, values, provenance=()) -> RandomPotentialEnsemble:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != grid.size:
        raise ValueError(f"expected {grid.size} node values per realization")
    return RandomPotentialEnsemble(grid.grid_id, values, provenance)


def _check(grid: ParameterGrid, *items) -> None:
    for it in items:
        if it.grid_id != grid.grid_id:
            raise GridMismatchError(f"field lives on grid {it.grid_id}, not {grid.grid_id}")


def _gibbs(grid: ParameterGrid, phi: np.ndarray, shift: bool = True) -> DensityField:
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise OverflowError("potential is not finite")
    m = float(phi.min()) if shift else 0.0
    with np.errstate(over="raise"):
        try:
            vals = np.exp(-(phi - m))
        except FloatingPointError as exc:
            raise OverflowError("exp(-Phi) overflows; enable shifting") from exc
    if not np.dot(grid.weights, vals) > 0:
        raise NormalizationError("normalization constant is zero: all posterior mass lost")
    return density_field(grid, vals, log_shift=m)


def exact_posterior(grid: ParameterGrid, potential: PotentialField, shift: bool = True) -> DensityField:
    _check(grid, potential)
    return _gibbs(grid, potential.phi_values, shift)


def sample_posterior(grid: ParameterGrid, realization: PotentialField, shift: bool = True) -> DensityField:
    """Posterior built from one realization of the random potential."""
    _check(grid, realization)
    return _gibbs(grid, realization.phi_values, shift)


def marginal_posterior(grid: ParameterGrid, ensemble: RandomPotentialEnsemble) -> DensityField:
    """Node-wise ensemble mean of exp(-Phi_N), normalized by the mean of Z_N^S."""
    _check(grid, ensemble)
    phi = ensemble.phi_n_values
    m = float(phi.min())
    vals = np.exp(-(phi - m)).mean(axis=0)
    if not np.dot(grid.weights, vals) > 0:
        raise NormalizationError("averaged normalizer is zero")
    return density_field(grid, vals, log_shift=m)


def hellinger_to_exact(grid: ParameterGrid, exact: DensityField, approx: DensityField) -> float:
    return hellinger(grid, exact, approx)


def _sqrt_normalized_rows(grid: ParameterGrid, phi: np.ndarray) -> np.ndarray:
    """sqrt of normalized Gibbs densities for each row of ``phi`` (rows shifted separately)."""
    e = np.exp(-(phi - phi.min(axis=-1, keepdims=True)))
    z = e @ grid.weights
    if np.any(~(z > 0)):
        raise NormalizationError("a realization has zero normalization constant")
    return np.sqrt(e / z[..., None])


def sample_hellingers(grid: ParameterGrid, exact: DensityField, ensemble: RandomPotentialEnsemble):
    """d_H(mu, mu_N^S) for every realization in the ensemble."""
    _check(grid, exact, ensemble)
    ref = np.sqrt(exact.normalized)
    diff = _sqrt_normalized_rows(grid, ensemble.phi_n_values) - ref
    d2 = 0.5 * (diff * diff) @ grid.weights
    return np.sqrt(np.clip(d2, 0.0, 1.0))


def mean_square_hellinger(grid: ParameterGrid, exact: DensityField, ensemble: RandomPotentialEnsemble):
    """Root mean square sample-posterior distance and its delta-method standard error."""
    d2 = sample_hellingers(grid, exact, ensemble) ** 2
    rms = math.sqrt(float(d2.mean()))
    if ensemble.count < 2 or rms == 0.0:
        return rms, 0.0
    se_d2 = float(d2.std(ddof=1)) / math.sqrt(ensemble.count)
    return rms, se_d2 / (2.0 * rms)


def marginal_hellinger(grid: ParameterGrid, exact: DensityField, ensemble: RandomPotentialEnsemble):
    """d_H(mu, mu_N^M) with a delete-one jackknife standard error."""
    _check(grid, exact, ensemble)
    marg = marginal_posterior(grid, ensemble)
    value = hellinger(grid, exact, marg)
    M = ensemble.count
    if M < 2:
        return value, 0.0
    phi = ensemble.phi_n_values
    e = np.exp(-(phi - phi.min()))
    loo = (e.sum(axis=0) - e) / (M - 1)
    z = loo @ grid.weights
    diff = np.sqrt(loo / z[:, None]) - np.sqrt(exact.normalized)
    theta = np.sqrt(np.clip(0.5 * (diff * diff) @ grid.weights, 0.0, 1.0))
    se = math.sqrt((M - 1) / M * float(np.sum((theta - theta.mean()) ** 2)))
    return value, se


# Bound constants


@dataclass(frozen=True)
class BoundConstants:
    """Constants and exponent settings of the two Hellinger bounds.

    ``exponents`` holds p1, p2, p3, q1, q2 and their conjugates (key with
    a ``_conj`` suffix); ``math.inf`` stands for an essential supremum.
    """

    kind: str
    grid_id: str
    C0: float
    C3: float
    C4: float | None
    Z: float
    C1: float
    C2: float
    C: float
    D1: float
    D2: float
    exponents: dict = field(default_factory=dict)
    p_star: float | None = None
    rho_star: float | None = None
    diagnostics: dict = field(default_factory=dict)


def conjugate(p: float) -> float:
    if p == math.inf:
        return 1.0
    if p == 1.0:
        return math.inf
    if p < 1.0:
        raise ValueError("Hoelder exponents must be at least 1")
    return p / (p - 1.0)


def marginal_constant(C1: float, C2: float, C3: float, Z: float) -> float:
    return (C1 / Z + C3 * max(Z**-3.0, C3**3)) * C2**2


def _log_lp_norm_exp(grid: ParameterGrid, log_f: np.ndarray, p: float) -> float:
    """log of the prior L^p norm of exp(log_f), evaluated without overflow."""
    if p == math.inf:
        return float(np.max(log_f))
    a = p * log_f + np.log(grid.weights)
    top = float(a.max())
    return (top + math.log(float(np.sum(np.exp(a - top))))) / p


def _common(grid, potential, ensemble, C3):
    _check(grid, potential, ensemble)
    phi = potential.phi_values
    phin = ensemble.phi_n_values
    C0 = max(0.0, -float(phi.min()), -float(phin.min()))
    post = exact_posterior(grid, potential)
    Z = post.Z
    if not (C3 > 0 and 1.0 / C3 < Z < C3):
        raise ValueError(f"C3={C3!r} violates C3^-1 < Z < C3 with Z={Z!r}")
    # marginal hypothesis (c): C3^-1 <= E_nu[Z_N^S] <= C3
    zs = np.exp(-phin) @ grid.weights
    mean_zs = float(zs.mean())
    if not 1.0 / C3 <= mean_zs <= C3:
        raise ValueError(f"ensemble mean normalizer {mean_zs!r} outside [1/C3, C3] for C3={C3!r}")
    return phi, phin, C0, Z, zs


def _sample_hypothesis_b(phi, phin, Z, zs, q1: float, grid: ParameterGrid) -> float:
    """Normalizer-weighted density moment that D2 must dominate, at q2 = infinity."""
    zfac = zs * np.maximum(Z**-3.0, zs**-3.0)
    inner = (zfac[:, None] * (np.exp(-phi) + np.exp(-phin)) ** 2)
    if q1 == math.inf:
        return float(inner.max())
    return float(np.max(np.mean(inner**q1, axis=0) ** (1.0 / q1)))


def bounded_potential_constants(grid: ParameterGrid, potential: PotentialField,
                                ensemble: RandomPotentialEnsemble, C3: float,
                                p_star: float = 2.0) -> BoundConstants:
    """Constants for potentials bounded below with uniformly bounded prior means.

    Exponents: p1 = p*, p2 = p3 = q1 = q2 = infinity. Raises if C3 fails the
    two-sided normalizer conditions, if exp(Phi) overflows in L^p*, or if
    the empirical left side of the sample hypothesis (b) exceeds D2.
    """
    if not p_star >= 1.0:
        raise ValueError("p_star must be at least 1")
    phi, phin, C0, Z, zs = _common(grid, potential, ensemble, C3)
    C4 = float(np.max(phin @ grid.weights))
    log_c1 = _log_lp_norm_exp(grid, phi, p_star)
    if log_c1 > 709.0:
        raise OverflowError(f"||exp(Phi)|| in L^{p_star} overflows")
    C1 = math.exp(log_c1)
    C2 = 2.0 * math.exp(C0)
    D1 = 4.0 * math.exp(C0)
    D2 = 4.0 * math.exp(3.0 * C0) * max(C3**-3.0, math.exp(3.0 * C4))
    exps = {
        "p1": p_star, "p1_conj": conjugate(p_star),
        "p2": math.inf, "p2_conj": 1.0,
        "p3": math.inf, "p3_conj": 1.0,
        "q1": math.inf, "q1_conj": 1.0,
        "q2": math.inf, "q2_conj": 1.0,
    }
    hyp_b = _sample_hypothesis_b(phi, phin, Z, zs, math.inf, grid)
    if hyp_b > D2 * (1.0 + 1e-12):
        raise ValueError(f"sample hypothesis (b) fails: {hyp_b!r} > D2={D2!r}")
    return BoundConstants(
        kind="bounded", grid_id=grid.grid_id, C0=C0, C3=C3, C4=C4, Z=Z,
        C1=C1, C2=C2, C=marginal_constant(C1, C2, C3, Z), D1=D1, D2=D2,
        exponents=exps, p_star=p_star,
        diagnostics={"sample_hypothesis_b": hyp_b, "mean_Z_N": float(zs.mean())},
    )


def exponential_potential_constants(grid: ParameterGrid, potential: PotentialField,
                                    ensemble: RandomPotentialEnsemble, C3: float,
                                    rho_star: float = 4.0) -> BoundConstants:
    """Constants for random potentials with a finite exponential moment of order rho*.

    Exponents: p1 = rho*, p2 = p3 = infinity, q1 = rho*/2, q2 = infinity.
    The moment E_nu[exp(rho* Phi_N)] is a Monte Carlo estimate; if a single
    realization carries more than half of it the estimate is not trusted
    and :class:`HeavyTailError` is raised.
    """
    if not rho_star > 2.0:
        raise ValueError("rho_star must exceed 2")
    phi, phin, C0, Z, zs = _common(grid, potential, ensemble, C3)
    a = rho_star * phin + np.log(grid.weights)
    top = float(a.max())
    per_real = np.exp(a - top).sum(axis=1)
    total = float(per_real.sum())
    share = float(per_real.max()) / total
    if ensemble.count > 1 and share > 0.5:
        raise HeavyTailError(
            f"one realization carries {share:.0%} of the estimated exponential moment"
        )
    log_moment = top + math.log(total / ensemble.count)
    if log_moment / rho_star * 2.0 > 709.0:
        raise OverflowError("exponential moment overflows")
    C1 = math.exp(log_moment / rho_star)
    C2 = 2.0 * math.exp(C0)
    D1 = 4.0 * math.exp(C0)
    D2 = 4.0 * math.exp(2.0 * C0) * (C3**-3.0 * math.exp(C0) + C1**2)
    q1 = rho_star / 2.0
    exps = {
        "p1": rho_star, "p1_conj": conjugate(rho_star),
        "p2": math.inf, "p2_conj": 1.0,
        "p3": math.inf, "p3_conj": 1.0,
        "q1": q1, "q1_conj": conjugate(q1),
        "q2": math.inf, "q2_conj": 1.0,
    }
    return BoundConstants(
        kind="exponential", grid_id=grid.grid_id, C0=C0, C3=C3, C4=None, Z=Z,
        C1=C1, C2=C2, C=marginal_constant(C1, C2, C3, Z), D1=D1, D2=D2,
        exponents=exps, rho_star=rho_star,
        diagnostics={"moment_max_share": share, "mean_Z_N": float(zs.mean()),
                     "sample_hypothesis_b": _sample_hypothesis_b(phi, phin, Z, zs, q1, grid)},
    )


# absolute floor for rounding in Hellinger distances of numerically equal densities
ROUNDING_FLOOR = 1e-12


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    slack: float = 0.0

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + self.slack + ROUNDING_FLOOR

    def __iter__(self):
        return iter((self.lhs, self.rhs))


def _check_exponents(grid: ParameterGrid, constants: BoundConstants, keys) -> None:
    if constants.grid_id != grid.grid_id:
        raise GridMismatchError("constants were computed on another grid")
    for k in keys:
        if constants.exponents.get(k) != math.inf:
            raise ExponentMismatchError(f"only {k} = infinity is supported, got {constants.exponents.get(k)!r}")


def verify_marginal_bound(grid: ParameterGrid, exact: PotentialField,
                          ensemble: RandomPotentialEnsemble, constants: BoundConstants) -> BoundCheck:
    """Marginal-posterior distance against C ||E_nu|Phi - Phi_N| ||_{L^r}, r = 2 p1'.

    The slack is the change in the right side when the node-wise ensemble
    mean is raised by three standard errors.
    """
    _check_exponents(grid, constants, ("p2", "p3"))
    _check(grid, exact, ensemble)
    post = exact_posterior(grid, exact)
    lhs = hellinger(grid, post, marginal_posterior(grid, ensemble))
    err = np.abs(ensemble.phi_n_values - exact.phi_values)
    mean = err.mean(axis=0)
    se = err.std(axis=0, ddof=1) / math.sqrt(ensemble.count) if ensemble.count > 1 else 0 * mean
    r = 2.0 * constants.exponents["p1_conj"] * constants.exponents["p3_conj"]
    rhs = constants.C * grid.lp_norm(mean, r)
    hi = constants.C * grid.lp_norm(mean + 3.0 * se, r)
    return BoundCheck(lhs, rhs, hi - rhs)


def verify_sample_bound(grid: ParameterGrid, exact: PotentialField,
                        ensemble: RandomPotentialEnsemble, constants: BoundConstants) -> BoundCheck:
    """RMS sample-posterior distance against (D1 + D2) ||E_nu|Phi - Phi_N|^(2 q1')^(1/(2 q1'))||_{L^(2 q2')}."""
    _check_exponents(grid, constants, ("q2",))
    _check(grid, exact, ensemble)
    post = exact_posterior(grid, exact)
    lhs, _ = mean_square_hellinger(grid, post, ensemble)
    a = 2.0 * constants.exponents["q1_conj"]
    err = np.abs(ensemble.phi_n_values - exact.phi_values) ** a
    mean = err.mean(axis=0)
    se = err.std(axis=0, ddof=1) / math.sqrt(ensemble.count) if ensemble.count > 1 else 0 * mean
    r = 2.0 * constants.exponents["q2_conj"]
    k = constants.D1 + constants.D2
    rhs = k * grid.lp_norm(mean ** (1.0 / a), r)
    hi = k * grid.lp_norm((mean + 3.0 * se) ** (1.0 / a), r)
    return BoundCheck(lhs, rhs, hi - rhs)
