import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randlik.forward import NoiseModel, quadratic_misfit
from randlik.measures import PriorSpec, build_grid, expectation, hellinger
from randlik.posterior import (
    BoundConstants,
    ExponentMismatchError,
    HeavyTailError,
    NormalizationError,
    bounded_potential_constants,
    conjugate,
    exact_posterior,
    exponential_potential_constants,
    hellinger_to_exact,
    marginal_hellinger,
    marginal_posterior,
    mean_square_hellinger,
    potential_field,
    random_ensemble,
    sample_hellingers,
    sample_posterior,
    verify_marginal_bound,
    verify_sample_bound,
)
from randlik.randmisfit import (
    SketchDistribution,
    enumerate_sketches,
    exact_sketch_expectation,
    misfit_realizations,
)
from randlik.rng import mix64, stream


@pytest.fixture(scope="module")
def unit_grid():
    return build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 201)


def sketch_setup(grid, J=20, N=32, M=2000, ell=0.5, seed=1, variance=0.01):
    """Affine toy problem G(u) = a u with its sketched potentials."""
    a = np.linspace(0.5, 1.5, J)
    y = 0.4 * a + 0.1 * stream(12345).standard_normal(J)
    noise = NoiseModel.isotropic(J, variance)
    res = grid.nodes[:, :1] * a - y
    phi = quadratic_misfit(res, noise)
    w = noise.whiten(res)
    phin = misfit_realizations(SketchDistribution.ell_sparse(ell), w, N,
                               [mix64(seed, i) for i in range(M)])
    return potential_field(grid, phi), random_ensemble(grid, phin)


class TestExactPosterior:
    def test_zero_potential(self, unit_grid):
        post = exact_posterior(unit_grid, potential_field(unit_grid, np.zeros(unit_grid.size)))
        np.testing.assert_array_equal(post.values, 1.0)
        assert post.Z == pytest.approx(1.0, rel=1e-15)

    @pytest.mark.parametrize("c", [-3.0, 0.5, 40.0])
    def test_constant_potential(self, unit_grid, c):
        post = exact_posterior(unit_grid, potential_field(unit_grid, np.full(unit_grid.size, c)))
        np.testing.assert_allclose(post.normalized, 1.0, rtol=1e-14)
        assert post.Z == pytest.approx(math.exp(-c), rel=1e-14)

    def test_symmetric_mean(self):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 1001)
        phi = 0.5 * (g.nodes[:, 0] - 0.5) ** 2
        post = exact_posterior(g, potential_field(g, phi))
        assert abs(expectation(g, post, lambda x: x[:, 0]) - 0.5) < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-500, 500))
    def test_shift_invariance(self, c):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 51)
        phi = 3 * np.sin(5 * g.nodes[:, 0]) ** 2
        a = exact_posterior(g, potential_field(g, phi))
        b = exact_posterior(g, potential_field(g, phi + c))
        np.testing.assert_allclose(a.normalized, b.normalized, rtol=1e-12)
        assert b.log_Z == pytest.approx(a.log_Z - c, abs=1e-9)

    def test_large_potential_needs_shift(self, unit_grid):
        pot = potential_field(unit_grid, np.full(unit_grid.size, -800.0))
        assert exact_posterior(unit_grid, pot).log_Z == pytest.approx(800.0)
        with pytest.raises(OverflowError):
            exact_posterior(unit_grid, pot, shift=False)

    def test_mass_lost(self, unit_grid):
        pot = potential_field(unit_grid, np.full(unit_grid.size, 800.0))
        with pytest.raises(NormalizationError):
            exact_posterior(unit_grid, pot, shift=False)

    def test_nonfinite_potential(self, unit_grid):
        v = np.zeros(unit_grid.size)
        v[0] = np.nan
        with pytest.raises(ValueError):
            potential_field(unit_grid, v)


class TestSamplePosterior:
    def test_identical_potential(self, unit_grid):
        phi = unit_grid.nodes[:, 0] ** 2
        pot = potential_field(unit_grid, phi)
        a = exact_posterior(unit_grid, pot)
        b = sample_posterior(unit_grid, random_ensemble(unit_grid, phi).realization(0))
        np.testing.assert_array_equal(a.values, b.values)
        assert hellinger_to_exact(unit_grid, a, b) == 0.0

    def test_rademacher_collapse(self, unit_grid):
        noise = NoiseModel.isotropic(1, 0.05)
        res = unit_grid.nodes[:, :1] - 0.3
        phi = quadratic_misfit(res, noise)
        phin = misfit_realizations(SketchDistribution.ell_sparse(0.0), noise.whiten(res), 5,
                                   list(range(20)))
        ens = random_ensemble(unit_grid, phin)
        post = exact_posterior(unit_grid, potential_field(unit_grid, phi))
        assert np.max(sample_hellingers(unit_grid, post, ens)) < 1e-7


class TestMarginalPosterior:
    def test_single_realization(self, unit_grid):
        phin = stream(2).uniform(0, 3, (1, unit_grid.size))
        ens = random_ensemble(unit_grid, phin)
        a = marginal_posterior(unit_grid, ens)
        b = sample_posterior(unit_grid, ens.realization(0))
        np.testing.assert_allclose(a.normalized, b.normalized, rtol=1e-14)

    def test_identical_realizations(self, unit_grid):
        row = stream(3).uniform(0, 3, unit_grid.size)
        ens = random_ensemble(unit_grid, np.tile(row, (7, 1)))
        a = marginal_posterior(unit_grid, ens)
        b = sample_posterior(unit_grid, ens.realization(0))
        np.testing.assert_allclose(a.normalized, b.normalized, rtol=1e-14)

    def test_three_node_mixture(self):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 3)
        phin = np.array([[0.0, 1.0, 2.0], [2.0, 0.5, 0.0]])
        vals = [(math.exp(-0.0) + math.exp(-2.0)) / 2,
                (math.exp(-1.0) + math.exp(-0.5)) / 2,
                (math.exp(-2.0) + math.exp(-0.0)) / 2]
        Z = 0.25 * vals[0] + 0.5 * vals[1] + 0.25 * vals[2]
        marg = marginal_posterior(g, random_ensemble(g, phin))
        np.testing.assert_allclose(marg.normalized, np.array(vals) / Z, rtol=0, atol=1e-14)
        zs = [0.25 * math.exp(-r[0]) + 0.5 * math.exp(-r[1]) + 0.25 * math.exp(-r[2]) for r in phin]
        assert marg.Z == pytest.approx(sum(zs) / 2, rel=1e-14)

    @pytest.mark.parametrize("J,N", [(2, 1), (2, 2), (3, 1)])
    def test_converges_to_exhaustive_mean(self, J, N):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 5)
        dist = SketchDistribution.ell_sparse(0.5)
        noise = NoiseModel.isotropic(J, 0.5)
        res = g.nodes[:, :1] * np.linspace(1, 2, J) - 0.7
        exact = exact_sketch_expectation(dist, J, N, lambda x: np.exp(-x), res, noise)
        # exhaustive expectation against a direct product over all outcomes
        pts, probs = enumerate_sketches(dist, J)
        w = noise.whiten(res)
        brute = np.zeros(g.size)
        for combo in itertools.product(range(len(probs)), repeat=N):
            phin = sum(0.5 * (w @ pts[i]) ** 2 for i in combo) / N
            brute += math.prod(probs[i] for i in combo) * np.exp(-phin)
        np.testing.assert_allclose(exact, brute, rtol=0, atol=1e-12)
        phin = misfit_realizations(dist, w, N, [mix64(N, i) for i in range(200_000)])
        mc = np.exp(-phin).mean(axis=0)
        np.testing.assert_allclose(mc, exact, rtol=0.01)


class TestDistances:
    def test_mean_square_zero(self, unit_grid):
        phi = unit_grid.nodes[:, 0]
        post = exact_posterior(unit_grid, potential_field(unit_grid, phi))
        rms, se = mean_square_hellinger(unit_grid, post, random_ensemble(unit_grid, np.tile(phi, (5, 1))))
        assert rms < 1e-15 and se < 1e-15

    def test_range(self, unit_grid):
        phi = 10 * unit_grid.nodes[:, 0]
        post = exact_posterior(unit_grid, potential_field(unit_grid, phi))
        ens = random_ensemble(unit_grid, stream(4).uniform(0, 50, (30, unit_grid.size)))
        rms, se = mean_square_hellinger(unit_grid, post, ens)
        assert 0.0 <= rms <= 1.0 and se > 0

    def test_vectorized_matches_loop(self, unit_grid):
        pot, ens = sketch_setup(unit_grid, M=20)
        post = exact_posterior(unit_grid, pot)
        vec = sample_hellingers(unit_grid, post, ens)
        loop = [hellinger(unit_grid, post, sample_posterior(unit_grid, ens.realization(k)))
                for k in range(ens.count)]
        np.testing.assert_allclose(vec, loop, rtol=1e-10, atol=1e-14)

    def test_sketch_rate(self, unit_grid):
        rms = {}
        for N in (16, 64):
            pot, ens = sketch_setup(unit_grid, N=N, M=2000, seed=N)
            rms[N] = mean_square_hellinger(unit_grid, exact_posterior(unit_grid, pot), ens)[0]
        assert abs(rms[16] / rms[64] / 2 - 1) < 0.3

    def test_jackknife_se_positive(self, unit_grid):
        pot, ens = sketch_setup(unit_grid, M=100)
        value, se = marginal_hellinger(unit_grid, exact_posterior(unit_grid, pot), ens)
        assert 0 < value < 1 and 0 < se < value


def bounded_transcription(w, phi, phin, C3, p):
    # independent evaluation of the bounded-potential constants
    C0 = max(0.0, -min(phi), -min(min(r) for r in phin))
    Z = sum(wi * math.exp(-f) for wi, f in zip(w, phi))
    C4 = max(sum(wi * f for wi, f in zip(w, r)) for r in phin)
    C1 = sum(wi * math.exp(p * f) for wi, f in zip(w, phi)) ** (1 / p)
    C2 = 2 * math.exp(C0)
    C = (C1 / Z + C3 * max(Z**-3, C3**3)) * C2**2
    D1 = 4 * math.exp(C0)
    D2 = 4 * math.exp(3 * C0) * max(C3**-3, math.exp(3 * C4))
    return dict(C0=C0, Z=Z, C4=C4, C1=C1, C2=C2, C=C, D1=D1, D2=D2)


class TestBoundConstants:
    def test_zero_potentials(self, unit_grid):
        z = np.zeros(unit_grid.size)
        c = bounded_potential_constants(unit_grid, potential_field(unit_grid, z),
                                        random_ensemble(unit_grid, np.zeros((3, unit_grid.size))), C3=2.0)
        assert (c.C0, c.C2, c.D1) == (0.0, 2.0, 4.0)
        assert c.Z == pytest.approx(1.0, rel=1e-15)

    def test_quadratic_misfits_have_zero_C0(self, unit_grid):
        pot, ens = sketch_setup(unit_grid, M=50)
        Z = exact_posterior(unit_grid, pot).Z
        c = bounded_potential_constants(unit_grid, pot, ens, C3=2 * max(Z, 1 / Z))
        assert c.C0 == 0.0

    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_double_entry(self, p):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 5)
        phi = [0.3, 0.1, 0.0, 0.2, 0.5]
        phin = [[0.4, 0.0, 0.1, 0.3, 0.6], [0.2, 0.2, 0.0, 0.1, 0.4], [0.3, 0.1, 0.05, 0.2, 0.5]]
        c = bounded_potential_constants(g, potential_field(g, phi), random_ensemble(g, phin), 3.0, p)
        ref = bounded_transcription(g.weights.tolist(), phi, phin, 3.0, p)
        for k, v in ref.items():
            assert abs(getattr(c, k) - v) <= 1e-12 * max(1.0, abs(v)), k
        assert c.exponents["p1_conj"] == pytest.approx(p / (p - 1))
        assert c.exponents["p2"] == c.exponents["p3"] == c.exponents["q2"] == math.inf

    def test_negative_potential_sets_C0(self):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 5)
        phi = [0.0, -0.2, 0.0, 0.0, 0.0]
        phin = [[0.0, -0.3, 0.0, 0.0, 0.0]] * 2
        c = bounded_potential_constants(g, potential_field(g, phi), random_ensemble(g, phin), 3.0)
        assert c.C0 == pytest.approx(0.3)

    @pytest.mark.parametrize("C3", [0.5, 1.0, -1.0])
    def test_two_sided_condition(self, unit_grid, C3):
        z = np.zeros(unit_grid.size)
        with pytest.raises(ValueError):
            bounded_potential_constants(unit_grid, potential_field(unit_grid, z),
                                        random_ensemble(unit_grid, np.zeros((2, unit_grid.size))), C3)

    def test_conjugate(self):
        assert conjugate(math.inf) == 1.0 and conjugate(1.0) == math.inf
        assert conjugate(4.0) == pytest.approx(4 / 3)
        with pytest.raises(ValueError):
            conjugate(0.5)

    def test_exponential_constants(self, unit_grid):
        pot, ens = sketch_setup(unit_grid, M=200, variance=4.0)
        Z = exact_posterior(unit_grid, pot).Z
        c = exponential_potential_constants(unit_grid, pot, ens, C3=2 * max(Z, 1 / Z), rho_star=4.0)
        assert c.exponents["q1"] == 2.0 and c.exponents["q1_conj"] == 2.0
        moment = np.mean(np.exp(4.0 * ens.phi_n_values) @ unit_grid.weights)
        assert c.C1 == pytest.approx(moment ** 0.25, rel=1e-10)
        assert c.D2 == pytest.approx(4 * (c.C3**-3 + c.C1**2), rel=1e-14)

    def test_heavy_tail(self):
        g = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 5)
        phin = np.zeros((10, 5))
        phin[3] = 5.0
        phin[:, 0] = 0.0
        with pytest.raises(HeavyTailError):
            exponential_potential_constants(g, potential_field(g, np.zeros(5)),
                                            random_ensemble(g, phin), C3=200.0)

    def test_rho_star_range(self, unit_grid):
        z = np.zeros(unit_grid.size)
        with pytest.raises(ValueError):
            exponential_potential_constants(unit_grid, potential_field(unit_grid, z),
                                            random_ensemble(unit_grid, z[None]), 2.0, rho_star=2.0)


class TestVerifyBounds:
    def test_identical_collapse(self, unit_grid):
        phi = 3 * unit_grid.nodes[:, 0] ** 2
        pot = potential_field(unit_grid, phi)
        ens = random_ensemble(unit_grid, np.tile(phi, (4, 1)))
        Z = exact_posterior(unit_grid, pot).Z
        c = bounded_potential_constants(unit_grid, pot, ens, 2 * max(Z, 1 / Z))
        for check in (verify_marginal_bound(unit_grid, pot, ens, c),
                      verify_sample_bound(unit_grid, pot, ens, c)):
            assert check.lhs < 1e-15 and check.rhs == 0.0 and check.holds

    def test_rademacher_collapse(self, unit_grid):
        noise = NoiseModel.isotropic(1, 0.05)
        res = unit_grid.nodes[:, :1] - 0.3
        pot = potential_field(unit_grid, quadratic_misfit(res, noise))
        ens = random_ensemble(unit_grid, misfit_realizations(
            SketchDistribution.ell_sparse(0.0), noise.whiten(res), 3, list(range(10))))
        Z = exact_posterior(unit_grid, pot).Z
        c = bounded_potential_constants(unit_grid, pot, ens, 2 * max(Z, 1 / Z))
        m = verify_marginal_bound(unit_grid, pot, ens, c)
        s = verify_sample_bound(unit_grid, pot, ens, c)
        assert m.lhs < 1e-7 and s.lhs < 1e-7
        assert m.rhs < 1e-9 and s.rhs < 1e-9

    @pytest.mark.slow
    def test_sketch_experiment(self, unit_grid):
        pot, ens = sketch_setup(unit_grid, J=20, N=32, M=2000)
        Z = exact_posterior(unit_grid, pot).Z
        c = bounded_potential_constants(unit_grid, pot, ens, 2 * max(Z, 1 / Z))
        m = verify_marginal_bound(unit_grid, pot, ens, c)
        s = verify_sample_bound(unit_grid, pot, ens, c)
        assert m.holds and s.holds and m.lhs > 0 and s.lhs > 0

    def test_exponent_mismatch(self, unit_grid):
        z = np.zeros(unit_grid.size)
        pot, ens = potential_field(unit_grid, z), random_ensemble(unit_grid, np.zeros((2, unit_grid.size)))
        c = bounded_potential_constants(unit_grid, pot, ens, 2.0)
        bad = BoundConstants(**{**c.__dict__, "exponents": {**c.exponents, "p2": 2.0, "q2": 3.0}})
        with pytest.raises(ExponentMismatchError):
            verify_marginal_bound(unit_grid, pot, ens, bad)
        with pytest.raises(ExponentMismatchError):
            verify_sample_bound(unit_grid, pot, ens, bad)
