"""Random sketches and the randomized quadratic misfit.

The randomized misfit replaces the squared whitened residual norm by an
average of squared projections onto N random sketch vectors with mean
zero and identity covariance::

    Phi_N(u) = 1/(2N) sum_i (sigma_i . w(u))^2,   w(u) = Gamma^{-1/2} (y - G(u))
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .forward import NoiseModel, quadratic_misfit
from .rng import stream


@dataclass(frozen=True)
class SketchDistribution:
    """Law of the i.i.d. sketch entries.

    ``ell-sparse`` entries are ``+-sqrt(s)`` with probability ``1/(2s)``
    each and zero otherwise, where ``s = 1/(1 - ell)``.
    """

    kind: str = "ell-sparse"
    ell: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ell-sparse", "gaussian"):
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.kind == "ell-sparse" and not 0.0 <= self.ell < 1.0:
            raise ValueError("ell must lie in [0, 1)")

    @classmethod
    def ell_sparse(cls, ell: float) -> "SketchDistribution":
        return cls("ell-sparse", float(ell))

    @classmethod
    def gaussian(cls) -> "SketchDistribution":
        return cls("gaussian", 0.0)

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - self.ell) if self.kind == "ell-sparse" else math.nan

    @property
    def fourth_moment(self) -> float:
        """E[sigma_j^4]: (sqrt s)^4 * (1/s) = s for ell-sparse, 3 for Gaussian."""
        return self.scale if self.kind == "ell-sparse" else 3.0

    @property
    def bounded(self) -> bool:
        return self.kind == "ell-sparse"

    def draw(self, gen: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "gaussian":
            return gen.standard_normal(shape)
        s = self.scale
        r = gen.random(shape)
        root = math.sqrt(s)
        out = np.zeros(shape)
        out[r < 0.5 / s] = root
        out[(r >= 0.5 / s) & (r < 1.0 / s)] = -root
        return out

    def outcomes(self):
        """Support points and probabilities of one ell-sparse entry."""
        if self.kind != "ell-sparse":
            raise ValueError("only ell-sparse sketches have finite support")
        s = self.scale
        root = math.sqrt(s)
        return np.array([root, 0.0, -root]), np.array([0.5 / s, 1.0 - 1.0 / s, 0.5 / s])


@dataclass(frozen=True, eq=False)
class SketchEnsemble:
    dist: SketchDistribution
    data_dim: int
    count: int
    vectors: np.ndarray
    seed: int

    def gram(self) -> np.ndarray:
        """(1/N) sum_i sigma_i sigma_i^T."""
        return self.vectors.T @ self.vectors / self.count


def sample_ensemble(dist: SketchDistribution, data_dim: int, count: int, seed: int) -> SketchEnsemble:
    if data_dim < 1 or count < 1:
        raise ValueError("data_dim and count must be positive")
    vectors = dist.draw(stream(seed), (int(count), int(data_dim)))
    return SketchEnsemble(dist, int(data_dim), int(count), vectors, int(seed))


def randomized_misfit(ensemble: SketchEnsemble, residual, noise: NoiseModel):
    """Randomized misfit for one residual (J,) or a stack of residuals (..., J)."""
    r = np.asarray(residual, dtype=float)
    if r.shape[-1] != ensemble.data_dim or noise.data_dim != ensemble.data_dim:
        raise ValueError("residual, noise and ensemble dimensions differ")
    w = noise.whiten(r)
    if w.ndim > 1 and ensemble.count > ensemble.data_dim:
        # quadratic form with the sketch Gram matrix: O(J^2) per node
        val = 0.5 * np.einsum("...j,jk,...k->...", w, ensemble.gram(), w)
        return np.maximum(val, 0.0)
    proj = w @ ensemble.vectors.T
    return 0.5 * np.mean(proj * proj, axis=-1)


def misfit_realizations(dist: SketchDistribution, whitened, count: int, seeds) -> np.ndarray:
    """Randomized misfits for many independent ensembles at once.

    ``whitened`` is the (n_nodes, J) array of whitened residuals, computed
    once and reused; row ``k`` of the result uses ``sample_ensemble(dist, J,
    count, seeds[k])``.
    """
    w = np.asarray(whitened, dtype=float)
    J = w.shape[-1]
    out = np.empty((len(seeds), w.shape[0]))
    for k, seed in enumerate(seeds):
        v = dist.draw(stream(seed), (int(count), J))
        if count > J:
            g = v.T @ v / count
            out[k] = 0.5 * np.einsum("nj,jk,nk->n", w, g, w)
        else:
            proj = w @ v.T
            out[k] = 0.5 * np.mean(proj * proj, axis=-1)
    return np.maximum(out, 0.0)


def variance_bound_check(dist: SketchDistribution, residual, noise: NoiseModel,
                         draws: int = 100_000, seed: int = 0):
    """Empirical single-sketch variance of the misfit against its bound.

    Returns ``(empirical_var, bound)`` where the bound is
    ``(J^3 E[sigma_j^4] - 1) Phi^2``. Only bounded (ell-sparse) sketches
    are accepted.
    """
    if not dist.bounded:
        raise ValueError("the variance bound is only established for ell-sparse sketches")
    w = noise.whiten(np.asarray(residual, dtype=float))
    J = w.shape[0]
    phi = float(quadratic_misfit(residual, noise))
    sig = dist.draw(stream(seed), (int(draws), J))
    x = 0.5 * (sig @ w) ** 2
    # shifting by a sample keeps the variance of a constant sample exactly zero
    var = float(np.var(x - x[0], ddof=1)) if draws > 1 else 0.0
    bound = (J**3 * dist.fourth_moment - 1.0) * phi**2
    return var, bound


def enumerate_sketches(dist: SketchDistribution, data_dim: int):
    """All 3^J single-sketch outcomes with their probabilities."""
    pts, probs = dist.outcomes()
    idx = np.array(list(itertools.product(range(3), repeat=data_dim)), dtype=int)
    return pts[idx], np.prod(probs[idx], axis=1)


def exact_misfit_expectation(dist: SketchDistribution, residual, noise: NoiseModel, count: int = 1):
    """E[Phi_N] by exhaustive enumeration of all sketch outcomes (small J, N)."""
    return exact_sketch_expectation(
        dist, noise.data_dim, count, lambda phi_n: phi_n, residual, noise
    )


def exact_sketch_expectation(dist, data_dim, count, func, residual, noise):
    """E[func(Phi_N(residual))] over the exact law of N i.i.d. sketches.

    ``residual`` may be (J,) or (n, J); ``func`` maps an array of Phi_N
    values (one per residual) to an array of the same shape.
    """
    pts, probs = enumerate_sketches(dist, data_dim)
    w = noise.whiten(np.asarray(residual, dtype=float))
    single = np.einsum("oj,...j->o...", pts, w) ** 2 / 2.0
    total = 0.0
    for combo in itertools.product(range(len(probs)), repeat=count):
        p = math.prod(probs[i] for i in combo)
        if p == 0.0:
            continue
        phi_n = sum(single[i] for i in combo) / count
        total = total + p * func(phi_n)
    return total
