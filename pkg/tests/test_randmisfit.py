import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from randlik.forward import NoiseModel, quadratic_misfit
from randlik.measures import count_violations
from randlik.randmisfit import (
    SketchDistribution,
    enumerate_sketches,
    exact_misfit_expectation,
    exact_sketch_expectation,
    misfit_realizations,
    randomized_misfit,
    sample_ensemble,
    variance_bound_check,
)
from randlik.rng import mix64, stream


class TestSketchDistribution:
    @pytest.mark.parametrize("ell", [-0.1, 1.0, 1.5])
    def test_rejects_ell(self, ell):
        with pytest.raises(ValueError):
            SketchDistribution.ell_sparse(ell)

    def test_rejects_kind(self):
        with pytest.raises(ValueError):
            SketchDistribution("cauchy")

    @pytest.mark.parametrize("ell", [0.0, 0.25, 0.5, 0.9])
    def test_three_point_law(self, ell):
        d = SketchDistribution.ell_sparse(ell)
        pts, probs = d.outcomes()
        assert probs.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.dot(probs, pts) == pytest.approx(0.0, abs=1e-15)
        assert np.dot(probs, pts**2) == pytest.approx(1.0, abs=1e-14)
        assert np.dot(probs, pts**4) == pytest.approx(d.fourth_moment, rel=1e-14)
        assert d.fourth_moment == pytest.approx(1.0 / (1.0 - ell), rel=1e-15)

    def test_gaussian_has_no_finite_support(self):
        with pytest.raises(ValueError):
            SketchDistribution.gaussian().outcomes()


class TestSampleEnsemble:
    def test_rademacher(self):
        e = sample_ensemble(SketchDistribution.ell_sparse(0.0), 7, 50, seed=3)
        assert set(np.unique(e.vectors)) == {-1.0, 1.0}

    def test_sparse_statistics(self):
        e = sample_ensemble(SketchDistribution.ell_sparse(0.9), 1000, 1000, seed=4)
        v = e.vectors
        assert abs(np.mean(v == 0) - 0.9) < 0.002
        assert abs(np.mean(v**2) - 1.0) < 0.01
        assert set(np.unique(v)) <= {-math.sqrt(10), 0.0, math.sqrt(10)}

    def test_deterministic(self):
        d = SketchDistribution.ell_sparse(0.5)
        a = sample_ensemble(d, 6, 9, seed=77)
        b = sample_ensemble(d, 6, 9, seed=77)
        np.testing.assert_array_equal(a.vectors, b.vectors)
        c = sample_ensemble(d, 6, 9, seed=78)
        assert not np.array_equal(a.vectors, c.vectors)

    @pytest.mark.parametrize("J,N", [(0, 3), (3, 0)])
    def test_rejects_empty(self, J, N):
        with pytest.raises(ValueError):
            sample_ensemble(SketchDistribution.ell_sparse(0.0), J, N, 1)


class TestRandomizedMisfit:
    def test_zero_residual(self):
        e = sample_ensemble(SketchDistribution.ell_sparse(0.3), 4, 5, 1)
        assert randomized_misfit(e, np.zeros(4), NoiseModel.isotropic(4)) == 0.0

    @given(st.floats(-100, 100), st.integers(0, 2**63), st.integers(1, 40))
    def test_one_dimensional_collapse(self, r, seed, N):
        noise = NoiseModel.isotropic(1, 0.3)
        e = sample_ensemble(SketchDistribution.ell_sparse(0.0), 1, N, seed)
        phin = randomized_misfit(e, np.array([r]), noise)
        assert phin == pytest.approx(quadratic_misfit(np.array([r]), noise), rel=1e-14, abs=0)

    def test_dimension_mismatch(self):
        e = sample_ensemble(SketchDistribution.ell_sparse(0.3), 4, 5, 1)
        with pytest.raises(ValueError):
            randomized_misfit(e, np.zeros(3), NoiseModel.isotropic(3))

    @pytest.mark.parametrize("N", [3, 30])
    def test_stacked_matches_single(self, N):
        e = sample_ensemble(SketchDistribution.ell_sparse(0.5), 5, N, 9)
        noise = NoiseModel(np.linspace(0.5, 2, 5))
        R = stream(1).normal(size=(6, 5))
        stacked = randomized_misfit(e, R, noise)
        for i in range(6):
            assert stacked[i] == pytest.approx(randomized_misfit(e, R[i], noise), rel=1e-12)

    def test_unbiased_monte_carlo(self):
        J, N, M = 20, 8, 100_000
        noise = NoiseModel.isotropic(J)
        r = stream(20).normal(size=J)
        phi = float(quadratic_misfit(r, noise))
        dist = SketchDistribution.ell_sparse(0.5)
        sig = dist.draw(stream(21), (M, N, J))
        phin = 0.5 * np.mean((sig @ r) ** 2, axis=1)
        se = phin.std(ddof=1) / math.sqrt(M)
        assert abs(phin.mean() - phi) < 3 * se

    @pytest.mark.parametrize("J", [1, 2, 3])
    @pytest.mark.parametrize("ell", [0.0, 0.5, 0.8])
    def test_unbiased_exhaustive(self, J, ell):
        noise = NoiseModel(np.linspace(0.5, 1.5, J))
        r = stream(J).normal(size=J)
        dist = SketchDistribution.ell_sparse(ell)
        phi = float(quadratic_misfit(r, noise))
        for N in (1, 2):
            assert abs(exact_misfit_expectation(dist, r, noise, N) - phi) < 1e-12

    def test_enumeration_probabilities(self):
        pts, probs = enumerate_sketches(SketchDistribution.ell_sparse(0.5), 3)
        assert pts.shape == (27, 3)
        assert probs.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(pts.T @ (pts * probs[:, None]), np.eye(3), atol=1e-14)

    def test_exact_second_moment(self):
        # Var of one sketch term: E[x^2] - phi^2 with x = (sigma.w)^2 / 2
        dist = SketchDistribution.ell_sparse(0.5)
        noise = NoiseModel.isotropic(2)
        w = np.array([1.0, 2.0])
        second = exact_sketch_expectation(dist, 2, 1, lambda x: x * x, w, noise)
        # E[(s1 w1 + s2 w2)^4] / 4 = (s (w1^4 + w2^4) + 6 w1^2 w2^2) / 4
        assert second == pytest.approx((2 * (1 + 16) + 6 * 4) / 4, rel=1e-14)


class TestScaleBound:
    def test_rademacher_pair_counterexample(self):
        # J = 2, sigma = (1, 1), w = (1, 1): Phi_N = 2 while s Phi = 1
        dist = SketchDistribution.ell_sparse(0.0)
        from randlik.randmisfit import SketchEnsemble

        e = SketchEnsemble(dist, 2, 1, np.array([[1.0, 1.0]]), 0)
        noise = NoiseModel.isotropic(2)
        r = np.array([1.0, 1.0])
        phin = randomized_misfit(e, r, noise)
        phi = float(quadratic_misfit(r, noise))
        assert phin == 2.0 and dist.scale * phi == 1.0

    @pytest.mark.parametrize("ell", [0.0, 0.5, 0.9])
    def test_dimension_scaled_bound(self, ell):
        gen = stream(107)
        dist = SketchDistribution.ell_sparse(ell)
        lhs, rhs = [], []
        for _ in range(2000):
            J = int(gen.integers(1, 9))
            N = int(gen.integers(1, 9))
            noise = NoiseModel(gen.uniform(0.1, 3, J))
            r = gen.normal(0, 2, J)
            e = sample_ensemble(dist, J, N, int(gen.integers(2**63)))
            lhs.append(randomized_misfit(e, r, noise))
            rhs.append(J * dist.scale * quadratic_misfit(r, noise))
        assert count_violations(np.array(lhs), np.array(rhs)) == 0


class TestVarianceBound:
    def test_zero_residual(self):
        var, bound = variance_bound_check(SketchDistribution.ell_sparse(0.5), np.zeros(3),
                                          NoiseModel.isotropic(3))
        assert var == 0.0 and bound == 0.0

    def test_one_dimensional_collapse(self):
        var, bound = variance_bound_check(SketchDistribution.ell_sparse(0.0), np.array([1.7]),
                                          NoiseModel.isotropic(1))
        assert var == 0.0 and bound == 0.0

    def test_five_dimensional(self):
        noise = NoiseModel.isotropic(5)
        r = stream(55).normal(size=5)
        phi = float(quadratic_misfit(r, noise))
        dist = SketchDistribution.ell_sparse(0.5)
        assert dist.fourth_moment == 2.0
        var, bound = variance_bound_check(dist, r, noise, draws=1_000_000, seed=5)
        assert bound == pytest.approx((125 * 2 - 1) * phi**2, rel=1e-14)
        assert var <= bound * 1.05

    def test_gaussian_rejected(self):
        with pytest.raises(ValueError):
            variance_bound_check(SketchDistribution.gaussian(), np.ones(2), NoiseModel.isotropic(2))


class TestMisfitRealizations:
    @pytest.mark.parametrize("N", [2, 12])
    def test_matches_sample_ensemble(self, N):
        dist = SketchDistribution.ell_sparse(0.5)
        noise = NoiseModel(np.linspace(0.2, 1, 6))
        R = stream(2).normal(size=(10, 6))
        seeds = [mix64(5, i) for i in range(4)]
        got = misfit_realizations(dist, noise.whiten(R), N, seeds)
        for k, seed in enumerate(seeds):
            want = randomized_misfit(sample_ensemble(dist, 6, N, seed), R, noise)
            np.testing.assert_allclose(got[k], want, rtol=1e-12, atol=1e-15)

    def test_independent_across_index(self):
        dist = SketchDistribution.ell_sparse(0.5)
        w = np.ones((1, 4))
        phin = misfit_realizations(dist, w, 1, [mix64(9, i) for i in range(100_000)])[:, 0]
        assert abs(np.corrcoef(phin[:-1], phin[1:])[0, 1]) < 0.01

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.integers(1, 10))
    def test_nonnegative(self, w, N):
        out = misfit_realizations(SketchDistribution.ell_sparse(0.3), w, N, [1, 2, 3])
        assert np.all(out >= 0)
