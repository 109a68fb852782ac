"""Build problems from configs and run convergence sweeps."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..forward import ForwardModelSpec, NoiseModel, quadratic_misfit
from ..measures import ParameterGrid, PriorSpec, build_grid
from ..posterior import (
    PotentialField,
    bounded_potential_constants,
    exact_posterior,
    marginal_hellinger,
    mean_square_hellinger,
    potential_field,
    random_ensemble,
    verify_marginal_bound,
    verify_sample_bound,
)
from ..probode import (
    NoiseProcess,
    ObservationTimes,
    RandomOdeForwardModel,
    Stepper,
    linear_problem,
    model_error_bound,
    solve_randomized_batch,
    strong_error_estimate,
)
from ..randmisfit import SketchDistribution, misfit_realizations
from ..rng import point_seed, realization_seeds, stream
from .config import ConfigError, ExperimentConfig
from .records import ConvergenceRecord, monotone_violations

log = logging.getLogger(__name__)

METRICS = {
    "sketch-rate": ("rms_hellinger",),
    "ode-strong-rate": ("strong_error", "strong_error_bound"),
    "ode-posterior-rate": ("rms_hellinger",),
    "bound-verify": ("marginal_hellinger", "marginal_lhs", "marginal_rhs", "sample_lhs", "sample_rhs"),
}


class ExperimentError(RuntimeError):
    def __init__(self, message: str, refinement: int | None = None):
        super().__init__(message)
        self.refinement = refinement


def worker_count() -> int:
    raw = os.environ.get("RANDLIK_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RANDLIK_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("RANDLIK_THREADS must be at least 1")
    return n


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a sweep point needs: grid, forward map, data and exact potential."""

    config: ExperimentConfig
    grid: ParameterGrid | None
    forward: ForwardModelSpec
    ode: RandomOdeForwardModel | None
    noise: NoiseModel
    y: np.ndarray | None
    potential: PotentialField | None
    residual: np.ndarray | None


def _prior(cfg: ExperimentConfig) -> PriorSpec:
    kind = cfg["prior.kind"]
    if kind == "uniform":
        return PriorSpec.uniform()
    if kind == "truncated-gaussian":
        if cfg["prior.mean"] is None or cfg["prior.variance"] is None:
            raise ConfigError("truncated-gaussian prior needs prior.mean and prior.variance")
        return PriorSpec.truncated_gaussian(cfg["prior.mean"], cfg["prior.variance"])
    raise ConfigError(f"unknown prior.kind {kind!r}")


def _ode_model(cfg: ExperimentConfig, num_steps: int) -> RandomOdeForwardModel:
    if cfg["forward.kind"] != "ode-linear":
        raise ConfigError(f"unknown ode forward kind {cfg['forward.kind']!r}")
    prob = linear_problem(
        rate=cfg["ode.rate"], horizon=cfg["ode.horizon"], initial=cfg["ode.initial"],
        tau_star=cfg["ode.tau_star"], state_bound=cfg["ode.state_bound"],
    )
    noise = NoiseProcess(cfg["noise.kind"], cfg["noise.p"], cfg["noise.amplitude"])
    return RandomOdeForwardModel(prob, Stepper(cfg["ode.stepper"]), noise, num_steps,
                                 ObservationTimes(cfg["ode.obs_times"]))


def build_problem(cfg: ExperimentConfig) -> Problem:
    ode = None
    if cfg["forward.kind"] == "affine":
        if cfg["forward.matrix"] is None:
            raise ConfigError("affine forward model needs forward.matrix")
        A = np.asarray(cfg["forward.matrix"]).reshape(-1, cfg["forward.param_dim"])
        forward = ForwardModelSpec.affine(A, cfg["forward.offset"])
    else:
        ode = _ode_model(cfg, cfg.sweep[0])
        forward = ForwardModelSpec.ode_observed(ode)
    J = forward.data_dim
    var = cfg["likelihood.variance"]
    noise = NoiseModel(np.full(J, var[0]) if len(var) == 1 else np.asarray(var))
    if cfg.kind == "ode-strong-rate":
        return Problem(cfg, None, forward, ode, noise, None, None, None)
    grid = build_grid(_prior(cfg), list(zip(cfg["prior.lower"], cfg["prior.upper"])), cfg["prior.points"])
    if cfg["observation.y"] is not None:
        y = np.asarray(cfg["observation.y"])
    else:
        y = forward.evaluate(np.asarray(cfg["observation.truth"]))
        y = y + cfg["observation.noise_std"] * stream(cfg["observation.seed"]).standard_normal(J)
    if y.shape != (J,):
        raise ConfigError(f"observation has length {y.shape[0]}, data dimension is {J}")
    residual = y - forward.evaluate(grid.nodes)
    phi = quadratic_misfit(residual, noise)
    return Problem(cfg, grid, forward, ode, noise, y, potential_field(grid, phi), residual)


def random_potentials(problem: Problem, refinement: int, seeds) -> np.ndarray:
    """Realizations (len(seeds), nodes) of the random potential at one refinement."""
    cfg = problem.config
    if problem.ode is None:
        dist = SketchDistribution(cfg["sketch.kind"], cfg["sketch.ell"])
        return misfit_realizations(dist, problem.noise.whiten(problem.residual), refinement, seeds)
    model = problem.ode.with_steps(refinement)
    G = solve_randomized_batch(model, problem.grid.nodes, seeds)
    return quadratic_misfit(problem.y - G, problem.noise)


def run_point(problem: Problem, index: int) -> list[ConvergenceRecord]:
    cfg = problem.config
    N = cfg.sweep[index]
    M = cfg.realizations
    seed = point_seed(cfg.master_seed, index)
    eid = cfg.experiment_id

    def rec(metric, value, stderr, used=M):
        return ConvergenceRecord(eid, N, metric, float(value), float(stderr), int(used))

    if cfg.kind == "ode-strong-rate":
        model = problem.ode.with_steps(N)
        n = cfg["strong.moment"]
        mean, se = strong_error_estimate(model, np.asarray(cfg["strong.parameter"]), n, M, seed)
        return [rec("strong_error", mean, se), rec("strong_error_bound", model_error_bound(model, n), 0.0, 0)]

    grid, pot = problem.grid, problem.potential
    ens = random_ensemble(grid, random_potentials(problem, N, realization_seeds(seed, M)),
                          provenance=(cfg.master_seed, index))
    exact = exact_posterior(grid, pot)
    if cfg.kind in ("sketch-rate", "ode-posterior-rate"):
        rms, se = mean_square_hellinger(grid, exact, ens)
        return [rec("rms_hellinger", rms, se)]

    c3 = cfg["bounds.c3"] or 2.0 * max(exact.Z, 1.0 / exact.Z)
    consts = bounded_potential_constants(grid, pot, ens, c3, cfg["bounds.p_star"])
    mh, mh_se = marginal_hellinger(grid, exact, ens)
    mb = verify_marginal_bound(grid, pot, ens, consts)
    sb = verify_sample_bound(grid, pot, ens, consts)
    _, rms_se = mean_square_hellinger(grid, exact, ens)
    return [
        rec("marginal_hellinger", mh, mh_se),
        rec("marginal_lhs", mb.lhs, mh_se),
        rec("marginal_rhs", mb.rhs, mb.slack / 3.0),
        rec("sample_lhs", sb.lhs, rms_se),
        rec("sample_rhs", sb.rhs, sb.slack / 3.0),
    ]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[ConvergenceRecord]:
    """One record per (sweep point, metric), ordered by sweep index then metric."""
    problem = build_problem(cfg)
    workers = worker_count() if workers is None else workers

    def task(i):
        try:
            return run_point(problem, i)
        except (ArithmeticError, ValueError) as exc:
            raise ExperimentError(f"sweep point N={cfg.sweep[i]}: {exc}", cfg.sweep[i]) from exc

    idx = range(len(cfg.sweep))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(task, idx))
    else:
        chunks = [task(i) for i in idx]
    records = [r for chunk in chunks for r in chunk]
    for metric in METRICS[cfg.kind]:
        if metric.endswith(("_rhs", "_bound")):
            continue
        bad = monotone_violations([r for r in records if r.metric == metric])
        if bad:
            log.warning("%s: %s rises beyond 3 stderr at N=%s", cfg.experiment_id, metric, bad)
    return records


def csv_comments(cfg: ExperimentConfig) -> list[str]:
    return [f"claim: {cfg.claim}", f"experiment: {cfg.experiment_id} ({cfg.kind})",
            f"master_seed: {cfg.master_seed}"]

