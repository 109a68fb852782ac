"""Built-in verification suite run by ``randlik verify``.

Each check raises ``AssertionError`` on failure and otherwise returns a
one-line summary. Trial counts are fixed so the suite is deterministic.
"""

from __future__ import annotations

import math
import time
from importlib import resources
from typing import Callable

import numpy as np

from ..forward import NoiseModel, misfit_error_bound_check, quadratic_misfit
from ..measures import (
    PriorSpec,
    build_grid,
    count_violations,
    density_field,
    diff_square_bound,
    exp_lipschitz,
    hellinger,
    hellinger_lipschitz_gap,
    power_mean_bound,
    reciprocal_cubic_bound,
    young_cauchy_schwarz,
)
from ..posterior import exact_posterior, potential_field, sample_posterior
from ..probode import (
    NoiseProcess,
    ObservationTimes,
    RandomOdeForwardModel,
    Stepper,
    linear_problem,
    solve_randomized,
    solve_randomized_batch,
)
from ..randmisfit import SketchDistribution, exact_misfit_expectation, misfit_realizations
from ..rng import stream
from .config import parse_config
from .runner import run_experiment

FUZZ_TRIALS = 100_000


def _expect_none(name: str, lhs, rhs) -> str:
    bad = count_violations(lhs, rhs)
    assert bad == 0, f"{name}: {bad} of {np.size(lhs)} trials violate the bound"
    return f"{np.size(lhs)} trials, 0 violations"


# Elementary inequalities


def check_young_cauchy_schwarz():
    g = stream(101)
    a, b = g.normal(0, 10, (2, FUZZ_TRIALS))
    return _expect_none("young_cauchy_schwarz", *young_cauchy_schwarz(a, b))


def check_diff_square_bound():
    """Same-sign pairs: the bound needs a*b >= 0."""
    g = stream(102)
    a = 10.0 ** g.uniform(-3, 3, FUZZ_TRIALS)
    b = 10.0 ** g.uniform(-3, 3, FUZZ_TRIALS)
    sign = np.where(g.random(FUZZ_TRIALS) < 0.5, -1.0, 1.0)
    return _expect_none("diff_square_bound", *diff_square_bound(sign * a, sign * b))


def check_exp_lipschitz():
    g = stream(103)
    a, b = g.uniform(-30, 30, (2, FUZZ_TRIALS))
    return _expect_none("exp_lipschitz", *exp_lipschitz(a, b))


def check_reciprocal_cubic():
    g = stream(104)
    a, b = 10.0 ** g.uniform(-3, 3, (2, FUZZ_TRIALS))
    return _expect_none("reciprocal_cubic_bound", *reciprocal_cubic_bound(a, b))


def check_power_mean():
    g = stream(105)
    total = 0
    for p in (1.0, 1.5, 2.0, 3.0):
        for n in (1, 2, 5, 17):
            s = g.normal(0, 3, (FUZZ_TRIALS // 16, n))
            _expect_none(f"power_mean_bound p={p} N={n}", *power_mean_bound(s, p))
            total += s.shape[0]
    return f"{total} trials, 0 violations"


# Misfit and sketch bounds


def misfit_error_violations(trials: int = FUZZ_TRIALS, seed: int = 106,
                            gamma_range: tuple[float, float] = (0.01, 2.0)):
    """Pointwise misfit error bound with diagonal noise entries drawn from ``gamma_range``."""
    g = stream(seed)
    batch = 100
    lhs_all, rhs_all = [], []
    for _ in range(trials // batch):
        J = int(g.integers(1, 9))
        noise = NoiseModel(g.uniform(*gamma_range, J))
        y = g.normal(0, 2, (batch, J))
        gv = g.normal(0, 2, (batch, J))
        ga = gv + g.normal(0, 1, (batch, J)) * 10.0 ** g.uniform(-4, 1, (batch, 1))
        phi = quadratic_misfit(gv - y, noise)
        lhs, rhs = misfit_error_bound_check(phi, gv, ga, noise, y)
        lhs_all.append(lhs)
        rhs_all.append(rhs)
    lhs, rhs = np.concatenate(lhs_all), np.concatenate(rhs_all)
    return count_violations(lhs, rhs), lhs.size


def check_misfit_error_bound():
    bad, n = misfit_error_violations()
    assert bad == 0, f"misfit_error_bound: {bad} of {n} trials violate the bound"
    return f"{n} trials, 0 violations"


def sketch_bound_violations(factor: str = "Js", trials: int = 20_000, seed: int = 107, max_J: int = 8):
    """Violations of Phi_N <= c Phi for ell-sparse sketches.

    ``factor="s"`` uses c = s; ``factor="Js"`` uses the Cauchy-Schwarz
    constant c = J s (from |sigma|^2 <= J s).
    """
    g = stream(seed)
    noise_cache = {}
    batch = 50
    bad = 0
    n = 0
    for t in range(trials // batch):
        J = int(g.integers(1, max_J + 1))
        dist = SketchDistribution.ell_sparse(float(g.choice([0.0, 0.25, 0.5, 0.9])))
        noise = noise_cache.setdefault(J, NoiseModel.isotropic(J))
        r = g.normal(0, 1, (batch, J))
        N = int(g.integers(1, 5))
        phi = quadratic_misfit(r, noise)
        phin = misfit_realizations(dist, r, N, [seed * 1_000_003 + t])[0]
        c = dist.scale * (J if factor == "Js" else 1)
        bad += count_violations(phin, c * phi)
        n += batch
    return bad, n


def check_sketch_scale_bound():
    bad, n = sketch_bound_violations("Js")
    assert bad == 0, f"Phi_N <= J s Phi violated in {bad} of {n} trials"
    return f"{n} trials, 0 violations"


def check_hellinger_lipschitz(trials: int = 10_000, seed: int = 108):
    g = stream(seed)
    grid = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 41)
    lhs, rhs = np.empty(trials), np.empty(trials)
    for t in range(trials):
        a = density_field(grid, np.exp(g.normal(0, 2, grid.size)))
        b = density_field(grid, np.exp(g.normal(0, 2, grid.size)))
        f = g.normal(0, 1, grid.size) * 10.0 ** g.uniform(-2, 2)
        lhs[t], rhs[t] = hellinger_lipschitz_gap(grid, a, b, f)
    return _expect_none("hellinger_lipschitz_gap", lhs, rhs)


# Exact oracles


def check_rademacher_collapse():
    grid = build_grid(PriorSpec.uniform(), [(0.0, 1.0)], 101)
    noise = NoiseModel.isotropic(1, 0.3)
    r = (0.7 - 1.3 * grid.nodes[:, 0])[:, None]
    pot = potential_field(grid, quadratic_misfit(r, noise))
    exact = exact_posterior(grid, pot)
    dist = SketchDistribution.ell_sparse(0.0)
    for N in (1, 2, 7):
        phin = misfit_realizations(dist, noise.whiten(r), N, list(range(20)))
        assert np.array_equal(phin, np.broadcast_to(pot.phi_values, phin.shape)), "Phi_N != Phi"
        for row in phin:
            d = hellinger(grid, exact, sample_posterior(grid, potential_field(grid, row)))
            assert d == 0.0, f"d_H = {d!r} for a J=1 Rademacher sketch"
    return "Phi_N == Phi and d_H == 0 for 60 realizations"


def _plain_euler(lam: float, z0: np.ndarray, T: float, N: int, times):
    out = []
    z = z0.copy()
    k = 0
    for t in times:
        x = t * N / T
        if abs(x - round(x)) < 1e-9:
            target, s = round(x), 0.0
        else:
            target = math.floor(x)
            s = t - (target * T) / N
        while k < target:
            z = z + (T / N) * (lam * z)
            k += 1
        out.append(z + s * (lam * z) if s > 0 else z)
    return np.concatenate(out, axis=-1)


def check_zero_noise_collapse():
    prob = linear_problem(-1.0)
    obs = ObservationTimes((1 / 3, 0.5, 1.0))
    U = np.linspace(0.5, 1.5, 11)[:, None]
    for N in (8, 37, 256):
        for noise in (NoiseProcess("zero"), NoiseProcess("gaussian-increment", 1.0, 0.0)):
            m = RandomOdeForwardModel(prob, Stepper("explicit-euler"), noise, N, obs)
            ref = _plain_euler(-1.0, U.copy(), 1.0, N, obs.times)
            assert np.array_equal(solve_randomized(m, U, seed=N), ref), f"N={N}: not bitwise equal"
            assert np.array_equal(solve_randomized_batch(m, U, [1, 2])[1], ref), f"N={N}: batch differs"
    return "bitwise equal to a plain Euler loop"


def check_sketch_unbiased():
    g = stream(109)
    worst = 0.0
    for J in (1, 2, 3):
        noise = NoiseModel(g.uniform(0.2, 2.0, J))
        for ell in (0.0, 0.5, 0.8):
            dist = SketchDistribution.ell_sparse(ell)
            r = g.normal(0, 1, (5, J))
            for N in (1, 2):
                got = exact_misfit_expectation(dist, r, noise, N)
                worst = max(worst, float(np.max(np.abs(got - quadratic_misfit(r, noise)))))
    assert worst <= 1e-12, f"exhaustive E[Phi_N] differs from Phi by {worst:.3g}"
    return f"max |E Phi_N - Phi| = {worst:.2e}"


def gaussian_shift_error(shift: float = 0.8, sd: float = 1.0, points: int = 2001) -> float:
    grid = build_grid(PriorSpec.uniform(), [(-12.0, 12.0)], points)
    x = grid.nodes[:, 0]
    a = density_field(grid, np.exp(-0.5 * (x / sd) ** 2))
    b = density_field(grid, np.exp(-0.5 * ((x - shift) / sd) ** 2))
    closed = math.sqrt(1.0 - math.exp(-(shift**2) / (8.0 * sd**2)))
    return abs(hellinger(grid, a, b) - closed)


def check_gaussian_shift():
    err = max(gaussian_shift_error(s, sd) for s in (0.1, 0.8, 3.0) for sd in (0.5, 1.0, 2.0))
    assert err <= 1e-4, f"Gaussian-shift Hellinger off by {err:.3g}"
    return f"max error {err:.2e}"


# Shipped bound-verification configs


def shipped_configs() -> dict[str, str]:
    root = resources.files("randlik") / "configs"
    return {p.name: p.read_text(encoding="utf-8") for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".cfg")}


def check_bound_configs():
    ran = []
    for name, text in shipped_configs().items():
        cfg = parse_config(text, name)
        if cfg.kind != "bound-verify":
            continue
        recs = run_experiment(cfg, workers=1)
        by = {(r.refinement, r.metric): r.value for r in recs}
        for N in cfg.sweep:
            for side in ("marginal", "sample"):
                lhs, rhs = by[(N, f"{side}_lhs")], by[(N, f"{side}_rhs")]
                assert lhs <= rhs, f"{name}: {side} bound fails at N={N}: {lhs!r} > {rhs!r}"
        ran.append(name)
    assert ran, "no bound-verify configs shipped"
    return f"{', '.join(ran)}: all bounds hold"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("young_cauchy_schwarz", check_young_cauchy_schwarz),
    ("diff_square_bound", check_diff_square_bound),
    ("exp_lipschitz", check_exp_lipschitz),
    ("reciprocal_cubic_bound", check_reciprocal_cubic),
    ("power_mean_bound", check_power_mean),
    ("misfit_error_bound", check_misfit_error_bound),
    ("sketch_scale_bound", check_sketch_scale_bound),
    ("hellinger_lipschitz_gap", check_hellinger_lipschitz),
    ("rademacher_collapse", check_rademacher_collapse),
    ("zero_noise_collapse", check_zero_noise_collapse),
    ("sketch_unbiased_exhaustive", check_sketch_unbiased),
    ("gaussian_shift_hellinger", check_gaussian_shift),
    ("bound_verify_configs", check_bound_configs),
]


def run_suite(echo=print) -> tuple[bool, str | None, float]:
    """Run every check; return (all passed, first failure, seconds)."""
    t0 = time.perf_counter()
    first = None
    for name, fn in CHECKS:
        t = time.perf_counter()
        try:
            detail = fn()
            echo(f"PASS {name}: {detail} ({time.perf_counter() - t:.1f}s)")
        except AssertionError as exc:
            echo(f"FAIL {name}: {exc}")
            first = first or f"{name}: {exc}"
    return first is None, first, time.perf_counter() - t0
