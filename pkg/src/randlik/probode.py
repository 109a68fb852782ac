"""Deterministic and randomized one-step ODE integration.

The randomized integrator perturbs every step of a deterministic one-step
method by an independent random increment::

    Z(t_{k+1}) = Psi^tau(Z(t_k)) + xi_k(tau)
    Z(t)       = Psi^(t - t_k)(Z(t_k)) + xi_k(t - t_k),   t_k < t < t_{k+1}

Parameters ``u`` may be batched: states carry shape ``(..., n, d)`` for
``n`` parameter rows, and the increments do not depend on ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import mix64, stream

N_REF = 2**16
_BRIDGE_STREAM = 0xB41D6E


class BlowUpError(ArithmeticError):
    """A trajectory left the finite floating-point range."""

    def __init__(self, time: float):
        super().__init__(f"non-finite state at t={time:.17g}")
        self.time = time


@dataclass(frozen=True, eq=False)
class OdeProblem:
    """Initial value problem dz/dt = f(z; u), z(0) = z0(u) on [0, T].

    ``vector_field(z, u)`` and ``initial_state(u)`` must broadcast over
    leading axes: ``u`` has shape ``(n, m)`` and ``z`` shape ``(..., n, d)``.
    ``exact_solution(t, u)``, when given, returns the ``(n, d)`` exact state.
    ``lipschitz_data`` is ``(tau_star, C_F)`` for the exact flow and
    ``truncation_data`` maps a stepper order ``q`` to ``C_Psi``.
    """

    state_dim: int
    vector_field: Callable
    initial_state: Callable
    horizon: float
    exact_solution: Callable | None = None
    lipschitz_data: tuple[float, float] | None = None
    truncation_data: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.lipschitz_data is not None:
            tau_star, c_f = self.lipschitz_data
            if not (0 < tau_star <= 1 and c_f >= 1):
                raise ValueError("need 0 < tau_star <= 1 and C_F >= 1")
        for q, c_psi in self.truncation_data.items():
            if c_psi < 1 or int(q) < 1:
                raise ValueError("need C_Psi >= 1 and q >= 1")


@dataclass(frozen=True)
class Stepper:
    kind: str = "explicit-euler"

    def __post_init__(self):
        if self.kind not in ("explicit-euler", "rk4"):
            raise ValueError(f"unknown stepper {self.kind!r}")

    @property
    def order(self) -> int:
        return 1 if self.kind == "explicit-euler" else 4

    def step(self, f: Callable, z, u, tau):
        if self.kind == "explicit-euler":
            return z + tau * f(z, u)
        k1 = f(z, u)
        k2 = f(z + 0.5 * tau * k1, u)
        k3 = f(z + 0.5 * tau * k2, u)
        k4 = f(z + tau * k3, u)
        return z + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class NoiseProcess:
    """Per-step perturbations with per-coordinate variance C^2 tau^(2p+1).

    ``gaussian-increment``: xi_k is a Brownian path scaled so that
    ``Var xi_k(t) = C^2 tau^(2p) t``; interior values are filled in by
    Brownian-bridge refinement from the step endpoint.
    ``uniform-increment``: xi_k(tau) is uniform on ``[-a, a]`` with
    ``a = sqrt(3) C tau^(p+1/2)``, interpolated linearly inside the step.
    ``zero``: no perturbation.
    """

    kind: str = "gaussian-increment"
    regularity_p: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian-increment", "uniform-increment", "zero"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.regularity_p < 0.5:
            raise ValueError("regularity p must be at least 1/2")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0.0

    @property
    def max_moment(self) -> float:
        return math.inf

    def step_scale(self, tau: float) -> float:
        return self.amplitude * tau ** (self.regularity_p + 0.5)

    def moment_constant(self, r: float, state_dim: int) -> float:
        """A constant C_xi with E[sup_t |xi_k(t)|^r] <= (C_xi tau^(p+1/2))^r.

        Gaussian: Doob's L^r maximal inequality for the norm of the
        Brownian path (r = 1 uses the r = 2 value via Jensen). Uniform:
        almost-sure bound of the linear path. Clamped below by 1.
        """
        d = state_dim
        if self.is_zero:
            return 1.0
        if self.kind == "uniform-increment":
            return max(1.0, math.sqrt(3.0 * d) * self.amplitude)
        r = max(float(r), 2.0)
        log_chi = 0.5 * r * math.log(2.0) + math.lgamma((d + r) / 2.0) - math.lgamma(d / 2.0)
        return max(1.0, (r / (r - 1.0)) * math.exp(log_chi / r) * self.amplitude)

    def sample(self, seed: int, n_steps: int, tau: float, state_dim: int, interior=None):
        """Endpoint increments (n_steps, d) and interior path values.

        ``interior`` maps a step index to increasing offsets in (0, tau);
        the result maps the same keys to arrays (len(offsets), d). Interior
        values use their own per-step substream, so adding observation
        times never changes endpoint draws.
        """
        d = state_dim
        interior = interior or {}
        if self.is_zero:
            return np.zeros((n_steps, d)), {k: np.zeros((len(v), d)) for k, v in interior.items()}
        gen = stream(seed)
        scale = self.step_scale(tau)
        if self.kind == "gaussian-increment":
            ends = scale * gen.standard_normal((n_steps, d))
        else:
            ends = math.sqrt(3.0) * scale * gen.uniform(-1.0, 1.0, (n_steps, d))
        bridge_root = mix64(seed, _BRIDGE_STREAM)
        fills = {}
        for k, offsets in interior.items():
            offsets = np.asarray(offsets, dtype=float)
            if self.kind == "uniform-increment":
                fills[k] = np.outer(offsets / tau, ends[k])
                continue
            rate = self.amplitude**2 * tau ** (2 * self.regularity_p)
            g = stream(mix64(bridge_root, k))
            vals = np.empty((len(offsets), d))
            s0, x0 = 0.0, np.zeros(d)
            for i, s in enumerate(offsets):
                frac = (s - s0) / (tau - s0)
                mean = x0 + frac * (ends[k] - x0)
                var = rate * (s - s0) * (tau - s) / (tau - s0)
                x0 = mean + math.sqrt(max(var, 0.0)) * g.standard_normal(d)
                s0 = s
                vals[i] = x0
            fills[k] = vals
        return ends, fills


@dataclass(frozen=True, eq=False)
class ObservationTimes:
    times: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in np.atleast_1d(self.times))
        if len(t) == 0:
            raise ValueError("need at least one observation time")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("observation times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True, eq=False)
class RandomOdeForwardModel:
    problem: OdeProblem
    stepper: Stepper
    noise: NoiseProcess
    num_steps: int
    obs: ObservationTimes

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be positive")
        T = self.problem.horizon
        if self.obs.times[0] < 0 or self.obs.times[-1] > T:
            raise ValueError("observation times must lie in [0, T]")
        if self.problem.lipschitz_data is not None:
            if not self.tau < self.problem.lipschitz_data[0]:
                raise ValueError("step size must be below tau_star")

    @property
    def tau(self) -> float:
        return self.problem.horizon / self.num_steps

    @property
    def data_dim(self) -> int:
        return self.problem.state_dim * len(self.obs)

    def with_steps(self, num_steps: int) -> "RandomOdeForwardModel":
        return RandomOdeForwardModel(self.problem, self.stepper, self.noise, num_steps, self.obs)

    def with_noise(self, noise: NoiseProcess) -> "RandomOdeForwardModel":
        return RandomOdeForwardModel(self.problem, self.stepper, noise, self.num_steps, self.obs)


def grid_time(k: int, n_steps: int, horizon: float) -> float:
    return (k * horizon) / n_steps


def locate(t: float, n_steps: int, horizon: float):
    """Step index k and offset s with t = t_k + s, s in [0, tau)."""
    k = int(round(t * n_steps / horizon))
    if abs(grid_time(k, n_steps, horizon) - t) <= 1e-12 * horizon:
        return k, 0.0
    k = int(math.floor(t * n_steps / horizon))
    return k, t - grid_time(k, n_steps, horizon)


def _interior_offsets(times: Sequence[float], n_steps: int, horizon: float, with_times=False):
    out: dict[int, list] = {}
    for t in times:
        k, s = locate(t, n_steps, horizon)
        if s > 0:
            out.setdefault(k, []).append((s, t) if with_times else s)
    return out


def _as_params(u) -> tuple[np.ndarray, bool]:
    u = np.asarray(u, dtype=float)
    if u.ndim <= 1:
        return u.reshape(1, -1), True
    return u, False


def _walk(model: RandomOdeForwardModel, U, ends=None, fills=None):
    """Yield (time, state) at grid and observation times in time order.

    ``ends``/``fills`` carry increments with a leading step axis; ``None``
    integrates the stepper alone.
    """
    prob, stepper = model.problem, model.stepper
    N, T, tau = model.num_steps, prob.horizon, model.tau
    f = prob.vector_field
    offsets = _interior_offsets(model.obs.times, N, T, with_times=True)
    z = np.asarray(prob.initial_state(U), dtype=float)
    if ends is not None:
        z = np.broadcast_to(z, ends.shape[1:-2] + z.shape[-2:]).copy()
    yield 0.0, z
    for k in range(N):
        for i, (s, t) in enumerate(offsets.get(k, ())):
            zs = stepper.step(f, z, U, s)
            if fills is not None:
                zs = zs + fills[k][:, i]
            yield t, zs
        z = stepper.step(f, z, U, tau)
        if ends is not None:
            z = z + ends[k]
        t_next = grid_time(k + 1, N, T)
        if not np.all(np.isfinite(z)):
            raise BlowUpError(t_next)
        yield t_next, z


def _observe(model: RandomOdeForwardModel, path):
    wanted = {}
    for j, t in enumerate(model.obs.times):
        k, s = locate(t, model.num_steps, model.problem.horizon)
        wanted.setdefault((k, s), []).append(j)
    found = [None] * len(model.obs)
    N, T = model.num_steps, model.problem.horizon
    for t, z in path:
        key = locate(t, N, T)
        for j in wanted.get(key, ()):
            found[j] = z
    # stack observation blocks: (..., n, |J| * d)
    return np.concatenate(found, axis=-1)


def _increments(model: RandomOdeForwardModel, seeds: Sequence[int]):
    """Stacked per-seed increments.

    Returns ends (N, M, 1, d) and fills {k: (M, n_offsets, 1, d)} so that
    ``fills[k][:, i]`` is the i-th interior value of step k for every seed.
    """
    d, N = model.problem.state_dim, model.num_steps
    offsets = _interior_offsets(model.obs.times, N, model.problem.horizon)
    ends, fills = [], {k: [] for k in offsets}
    for seed in seeds:
        e, f = model.noise.sample(seed, N, model.tau, d, offsets)
        ends.append(e)
        for k in offsets:
            fills[k].append(f[k])
    ends = np.stack(ends, axis=1)[:, :, None, :]
    fills = {k: np.stack(v, axis=0)[:, :, None, :] for k, v in fills.items()}
    return ends, fills


def solve_stepper(model: RandomOdeForwardModel, u) -> np.ndarray:
    """Noise-free numerical solve with the model's stepper at its step count."""
    U, single = _as_params(u)
    out = _observe(model, _walk(model, U))
    return out[0] if single else out


def solve_randomized(model: RandomOdeForwardModel, u, seed: int) -> np.ndarray:
    """One realization of the random forward map at ``u``.

    Returns the stacked observation vector (d * |J|,) for a single
    parameter, or (n, d * |J|) for a stack of parameters.
    """
    if model.noise.is_zero:
        return solve_stepper(model, u)
    U, single = _as_params(u)
    out = solve_randomized_batch(model, U, [seed])[0]
    return out[0] if single else out


def solve_randomized_batch(model: RandomOdeForwardModel, U, seeds: Sequence[int]) -> np.ndarray:
    """Realizations for many seeds at once, shape (len(seeds), n, d * |J|)."""
    U, _ = _as_params(U)
    if model.noise.is_zero:
        one = solve_stepper(model, U)
        return np.broadcast_to(one, (len(seeds),) + one.shape).copy()
    ends, fills = _increments(model, seeds)
    return _observe(model, _walk(model, U, ends, fills))


def reference_states(problem: OdeProblem, U, times, n_ref: int = N_REF, check: bool = True):
    """Exact (or high-accuracy reference) states at ``times``, shape (len(times), n, d).

    Without a registered exact solution, classical RK4 with at most
    ``horizon / n_ref`` per step is used, and the result is required to
    change by less than 1e-8 (relative) when the step count is doubled.
    """
    U, _ = _as_params(U)
    times = [float(t) for t in times]
    if problem.exact_solution is not None:
        return np.stack([np.asarray(problem.exact_solution(t, U), dtype=float) for t in times])
    ref = _rk4_through(problem, U, times, n_ref)
    if check:
        fine = _rk4_through(problem, U, times, 2 * n_ref)
        scale = max(1.0, float(np.max(np.abs(fine))))
        if float(np.max(np.abs(fine - ref))) >= 1e-8 * scale:
            raise ArithmeticError("reference solve is not converged at the requested resolution")
    return ref


def _rk4_through(problem: OdeProblem, U, times, n_ref: int):
    T = problem.horizon
    h_max = T / n_ref
    order = np.argsort(times, kind="stable")
    rk4 = Stepper("rk4")
    z = np.asarray(problem.initial_state(U), dtype=float)
    t = 0.0
    out = [None] * len(times)
    for idx in order:
        target = times[idx]
        n = int(math.ceil((target - t) / h_max - 1e-9))
        if n > 0:
            h = (target - t) / n
            for _ in range(n):
                z = rk4.step(problem.vector_field, z, U, h)
            if not np.all(np.isfinite(z)):
                raise BlowUpError(target)
            t = target
        out[idx] = z
    return np.stack(out)


def solve_deterministic(model: RandomOdeForwardModel, u, n_ref: int = N_REF, check: bool = True):
    """Exact forward map: the true solution observed at the model's times."""
    U, single = _as_params(u)
    states = reference_states(model.problem, U, model.obs.times, n_ref, check)
    out = np.concatenate(list(states), axis=-1)
    return out[0] if single else out


def union_times(model: RandomOdeForwardModel) -> list[float]:
    N, T = model.num_steps, model.problem.horizon
    grid = [grid_time(k, N, T) for k in range(N + 1)]
    return sorted(set(grid) | set(model.obs.times))


def sup_errors(model: RandomOdeForwardModel, u, seeds: Sequence[int], n_ref: int = N_REF):
    """sup over grid and observation times of |z(t) - Z(t)|, one per seed."""
    U, _ = _as_params(u)
    if U.shape[0] != 1:
        raise ValueError("sup_errors takes a single parameter")
    times = union_times(model)
    ref = reference_states(model.problem, U, times, n_ref)
    exact = {t: ref[i] for i, t in enumerate(times)}
    if model.noise.is_zero:
        path = _walk(model, U)
    else:
        ends, fills = _increments(model, seeds)
        path = _walk(model, U, ends, fills)
    sup = np.zeros(len(seeds))
    for t, z in path:
        e = np.linalg.norm(exact[t] - z, axis=-1)  # (..., 1)
        sup = np.maximum(sup, np.broadcast_to(e.reshape(-1), sup.shape))
    return sup


def strong_error_estimate(model: RandomOdeForwardModel, u, n: int = 1, num_seeds: int = 100,
                          seed: int = 0, n_ref: int = N_REF):
    """Monte Carlo estimate of E[sup_t |e(t)|^n] with its standard error.

    Seeds for the realizations are ``mix64(seed, i)``, i < num_seeds.
    """
    if n not in (1, 2):
        raise ValueError("moment order n must be 1 or 2")
    if num_seeds < 100:
        raise ValueError("need at least 100 seeds")
    seeds = [mix64(seed, i) for i in range(num_seeds)]
    vals = sup_errors(model, u, seeds, n_ref) ** n
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(num_seeds))


def strong_error_bound(C_F: float, tau_star: float, C_psi: float, q: int, C_xi: float,
                       p: float, T: float, n: int, N: int) -> float:
    """Upper bound on E[sup_t |e(t)|^n] for N steps of size T/N."""
    if not N > T / tau_star:
        raise ValueError(f"N={N} must exceed T/tau_star={T / tau_star:g}")
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    c_f_n = ((1.0 + tau_star * 2.0 ** (n - 1)) ** 2 * (1.0 + tau_star * C_F) ** n - 1.0) / tau_star
    c_bar = 2.0 * T * max((4.0 * C_psi) ** n, (2.0 * C_xi) ** n) * math.exp(T * c_f_n)
    pre = 3.0 ** (n - 1) * ((1.0 + C_F * tau_star) ** n * c_bar + C_psi**n * tau_star**n + T * C_xi**n)
    return pre * (T / N) ** (n * min(q, p - 0.5))


def model_error_bound(model: RandomOdeForwardModel, n: int = 1) -> float:
    """strong_error_bound with the constants registered on the model."""
    prob = model.problem
    if prob.lipschitz_data is None or model.stepper.order not in prob.truncation_data:
        raise ValueError("problem lacks Lipschitz or truncation data for this stepper")
    tau_star, c_f = prob.lipschitz_data
    q = model.stepper.order
    return strong_error_bound(
        C_F=c_f, tau_star=tau_star, C_psi=prob.truncation_data[q], q=q,
        C_xi=model.noise.moment_constant(n, prob.state_dim), p=model.noise.regularity_p,
        T=prob.horizon, n=n, N=model.num_steps,
    )


# Problems with closed-form solutions


def linear_problem(rate: float = -1.0, horizon: float = 1.0, initial=None,
                   tau_star: float = 0.25, state_bound: float = 2.0) -> OdeProblem:
    """Scalar dz/dt = rate * z.

    With ``initial=None`` the parameter is the initial state; otherwise the
    initial state is fixed and the parameter is ignored. The truncation
    constants hold on the region |z| <= ``state_bound``:
    |Psi^tau(v) - F^tau(v)| <= C_Psi tau^(q+1) with C_Psi = max(1, c |v|),
    c = rate^2 / 2 for Euler and |rate|^5 / 120 for RK4.
    """
    lam = float(rate)

    def f(z, u):
        return lam * z

    if initial is None:
        def z0(u):
            return np.asarray(u, dtype=float)[..., :1]
    else:
        def z0(u):
            return np.full(np.shape(u)[:-1] + (1,), float(initial))

    def exact(t, u):
        return z0(u) * math.exp(lam * t)

    c_f = max(1.0, lam)
    trunc = {
        1: max(1.0, 0.5 * lam**2 * state_bound),
        4: max(1.0, abs(lam) ** 5 / 120.0 * state_bound),
    }
    return OdeProblem(1, f, z0, horizon, exact, (tau_star, c_f), trunc, name="linear")


def rotation_problem(horizon: float = 2 * math.pi) -> OdeProblem:
    """dz/dt = (z2, -z1) with the parameter as initial state; no closed form registered."""

    def f(z, u):
        return np.stack([z[..., 1], -z[..., 0]], axis=-1)

    def z0(u):
        return np.asarray(u, dtype=float)[..., :2]

    return OdeProblem(2, f, z0, horizon, None, (1.0, 1.0), {}, name="rotation")


def constant_problem(state_dim: int = 1, horizon: float = 1.0) -> OdeProblem:
    """dz/dt = 0 with the parameter as initial state."""

    def f(z, u):
        return np.zeros_like(z)

    def z0(u):
        return np.asarray(u, dtype=float)[..., :state_dim]

    def exact(t, u):
        return z0(u)

    return OdeProblem(state_dim, f, z0, horizon, exact, (1.0, 1.0), {1: 1.0, 4: 1.0},
                      name="constant")
