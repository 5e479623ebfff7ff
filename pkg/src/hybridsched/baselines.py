"""Comparison methods and the iLQR reference solution.

Mode-sequence searchers (``random_shooting``, ``cem_categorical`` and the
hybrid scheduler wrapper) optimise over schedules; ``mppi_continuous`` and
``ilqr_oracle`` optimise the force sequence of a :class:`ControlLevelSystem`
directly, with the same objective as :func:`hybridsched.rollout.evaluate`::

    J(U) = sum_{k=0}^{T} (state_cost(x_k) + control_cost(u_k)) dt + final_cost(x_T)

where ``u_T`` repeats ``u_{T-1}``.  Every method reports how many rollouts it
spent so comparisons can be run at equal budget.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InvalidArgument
from .rollout import rollout_costs
from .schedule import as_schedule, constant_schedule
from .solvers import SolverConfig, solve_iterative
from .systems import ControlLevelSystem, HybridSystem

__all__ = [
    "BaselineConfig",
    "BaselineResult",
    "GapReport",
    "control_rollout_costs",
    "random_shooting",
    "cem_categorical",
    "refit_categorical",
    "mppi_weights",
    "mppi_continuous",
    "fd_jacobians",
    "ilqr_oracle",
    "ilqr",
    "hybrid_scheduler",
    "measure_gap",
    "run_method",
]

Method = Literal["random-shooting", "cem", "mppi", "ilqr", "hybrid"]


@dataclass(frozen=True)
class BaselineConfig:
    """Settings for one baseline run.

    ``iterations`` is the iteration budget (``None`` means 50 for CEM and
    100 otherwise); when ``budget`` (total rollouts) is given it overrides
    ``iterations`` for the sampling methods.
    """

    method: Method = "random-shooting"
    samples: int = 25
    iterations: int | None = None
    budget: int | None = None
    seed: int = 0
    resample_prob: float = 0.1
    elite_fraction: float = 0.1
    smoothing: float = 1e-3
    temperature: float = 0.1
    noise: float = 1.0
    ilqr_max_iterations: int = 200
    ilqr_tolerance: float = 1e-9
    fd_relative_step: float = 1e-5
    fd_min_step: float = 1e-8
    reg_min: float = 1e-6
    reg_max: float = 1e6
    line_search_steps: int = 11
    ilqr_restarts: int = 8

    def __post_init__(self):
        if self.samples < 1:
            raise InvalidArgument("samples must be >= 1")
        if self.iterations is not None and self.iterations < 0:
            raise InvalidArgument("iterations must be >= 0")
        if self.budget is not None and self.budget < 1:
            raise InvalidArgument("budget must be >= 1")
        if not 0 < self.elite_fraction <= 1:
            raise InvalidArgument("elite_fraction must lie in (0, 1]")
        if not 0 < self.resample_prob <= 1:
            raise InvalidArgument("resample_prob must lie in (0, 1]")
        if self.smoothing < 0:
            raise InvalidArgument("smoothing must be >= 0")
        if not self.temperature > 0:
            raise InvalidArgument("temperature must be positive")
        if not self.noise > 0:
            raise InvalidArgument("noise must be positive")

    def iteration_budget(self, per_iteration: int, overhead: int = 0) -> int:
        if self.budget is None:
            if self.iterations is None:
                return 50 if self.method == "cem" else 100
            return self.iterations
        return max(0, (self.budget - overhead) // per_iteration)


@dataclass
class BaselineResult:
    method: str
    solution: np.ndarray
    cost: float
    evaluations: int
    horizon: int
    history: list[float] = field(default_factory=list)
    converged: bool = True
    warning: str | None = None
    distribution: np.ndarray | None = None

    def __iter__(self):
        yield self.solution
        yield self.cost


@dataclass(frozen=True)
class GapReport:
    method: str
    horizon: int
    objective: float
    oracle: float

    @property
    def normalized_gap(self) -> float:
        return (self.objective - self.oracle) / self.horizon


def measure_gap(result: BaselineResult, oracle: BaselineResult, horizon: int | None = None) -> GapReport:
    """``(J_method - J_oracle) / H``; negative when the method beats the oracle."""
    horizon = result.horizon if horizon is None else horizon
    if result.horizon != horizon or oracle.horizon != horizon:
        raise InvalidArgument(
            f"horizon mismatch: method {result.horizon}, oracle {oracle.horizon}, requested {horizon}"
        )
    return GapReport(result.method, horizon, result.cost, oracle.cost)


# --------------------------------------------------------------------------
# mode-sequence searchers


def random_shooting(system: HybridSystem, config: BaselineConfig | None = None, initial=None) -> BaselineResult:
    """Predictive sampling over mode sequences with keep-best elitism.

    Without ``initial`` the first iteration draws fully random sequences;
    afterwards every sample copies the incumbent and redraws each position
    with probability ``resample_prob``.
    """
    config = config or BaselineConfig()
    rng = np.random.default_rng(config.seed)
    T, M, S = system.horizon, system.mode_count, config.samples
    evaluations = 0
    best, best_cost = None, math.inf
    if initial is not None:
        best = as_schedule(initial, M).copy()
        best_cost = float(rollout_costs(system, best[None, :])[0])
        evaluations += 1
    history = []
    for _ in range(config.iteration_budget(S, evaluations)):
        fresh = rng.integers(0, M, size=(S, T))
        if best is None:
            samples = fresh
        else:
            mask = rng.random((S, T)) < config.resample_prob
            samples = np.where(mask, fresh, best[None, :])
        costs = rollout_costs(system, samples)
        evaluations += S
        i = int(np.argmin(costs))
        if costs[i] < best_cost or best is None:
            best, best_cost = samples[i].copy(), float(costs[i])
        history.append(best_cost)
    if best is None:
        best = constant_schedule(system.default_mode, T).copy()
        best_cost = float(rollout_costs(system, best[None, :])[0])
        evaluations += 1
    return BaselineResult("random-shooting", as_schedule(best), best_cost, evaluations, T, history)


def refit_categorical(elites: np.ndarray, mode_count: int, smoothing: float) -> np.ndarray:
    """Per-step mode frequencies of ``elites`` ``(E, T)`` with additive smoothing."""
    E, T = elites.shape
    counts = np.zeros((T, mode_count))
    np.add.at(counts, (np.broadcast_to(np.arange(T), (E, T)), elites), 1.0)
    total = E + mode_count * smoothing
    if total <= 0:
        raise InvalidArgument("cannot refit a categorical from zero elites without smoothing")
    probs = (counts + smoothing) / total
    if np.any(probs.sum(axis=1) <= 0):
        raise InvalidArgument("categorical distribution collapsed")
    return probs


def cem_categorical(system: HybridSystem, config: BaselineConfig | None = None, initial=None) -> BaselineResult:
    """Cross-entropy method with an independent categorical per time step."""
    config = config or BaselineConfig(method="cem")
    rng = np.random.default_rng(config.seed)
    T, M, S = system.horizon, system.mode_count, config.samples
    probs = np.full((T, M), 1.0 / M)
    evaluations = 0
    best, best_cost = None, math.inf
    if initial is not None:
        best = as_schedule(initial, M).copy()
        best_cost = float(rollout_costs(system, best[None, :])[0])
        evaluations += 1
    n_elite = max(1, math.ceil(config.elite_fraction * S))
    history = []
    for _ in range(config.iteration_budget(S, evaluations)):
        cdf = np.cumsum(probs, axis=1)
        u = rng.random((S, T, 1)) * cdf[None, :, -1:]
        samples = np.minimum((u >= cdf[None, :, :]).sum(axis=2), M - 1)
        costs = rollout_costs(system, samples)
        evaluations += S
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost or best is None:
            best, best_cost = samples[order[0]].copy(), float(costs[order[0]])
        probs = refit_categorical(samples[order[:n_elite]], M, config.smoothing)
        history.append(best_cost)
    if best is None:
        best = constant_schedule(system.default_mode, T).copy()
        best_cost = float(rollout_costs(system, best[None, :])[0])
        evaluations += 1
    return BaselineResult("cem", as_schedule(best), best_cost, evaluations, T, history, distribution=probs)


def hybrid_scheduler(
    system: HybridSystem, config: SolverConfig | None = None, inner: str = "sampled", initial=None
) -> BaselineResult:
    """The iterative single-switch scheduler wrapped as a comparison method."""
    report = solve_iterative(system, initial, config, inner)
    return BaselineResult(
        "hybrid",
        report.final_schedule,
        report.final_cost,
        report.evaluations,
        system.horizon,
        [report.initial_cost, *report.cost_history],
        converged=report.termination == "fixed-point",
    )


# --------------------------------------------------------------------------
# continuous-control methods


def _require_controls(system) -> ControlLevelSystem:
    if not isinstance(system, ControlLevelSystem):
        raise InvalidArgument(f"{type(system).__name__} has no continuous-control variant")
    return system


def control_rollout_costs(system: ControlLevelSystem, controls: np.ndarray) -> np.ndarray:
    """Objective of each control sequence in ``controls`` ``(B, T, d)``.

    Accumulates in the same order as :func:`hybridsched.rollout.evaluate`, so a
    quantised sequence scores exactly like the matching schedule.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 2:
        controls = controls[..., None]
    B, T, _ = controls.shape
    if T != system.horizon:
        raise InvalidArgument(f"control sequence length {T} != horizon {system.horizon}")
    x = np.broadcast_to(system.initial_state, (B, system.state_dim)).copy()
    acc = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    dt = system.dt
    with np.errstate(all="ignore"):
        for k in range(T):
            u = controls[:, k]
            acc = acc + (system.state_cost(x) + system.control_cost(u)) * dt
            x = system.dynamics(x, u)
            ok = np.all(np.isfinite(x), axis=1)
            if not ok.all():
                alive &= ok
                x[~ok] = 0.0
        acc = acc + (system.state_cost(x) + system.control_cost(controls[:, T - 1])) * dt
        acc = acc + system.final_cost(x)
    acc[~alive | ~np.isfinite(acc)] = np.inf
    return acc


def _control_trajectory(system: ControlLevelSystem, U: np.ndarray) -> np.ndarray:
    X = np.empty((U.shape[0] + 1, system.state_dim))
    X[0] = system.initial_state
    with np.errstate(all="ignore"):
        for k in range(U.shape[0]):
            X[k + 1] = system.dynamics(X[k][None, :], U[k][None, :])[0]
    return X


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Normalised ``exp(-(J - J_min) / lambda)``; infinite costs get zero weight."""
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        raise InvalidArgument("all rollouts diverged")
    w = np.zeros_like(costs)
    w[finite] = np.exp(-(costs[finite] - costs[finite].min()) / temperature)
    return w / w.sum()


def mppi_continuous(system: HybridSystem, config: BaselineConfig | None = None, initial=None) -> BaselineResult:
    """Model-predictive path integral iterations on the force sequence.

    Each iteration perturbs the nominal with ``N(0, noise^2)`` noise, clips to
    the force bounds and replaces the nominal with the softmin-weighted mean
    of the clipped samples.  The returned cost is that of the final nominal.
    """
    system = _require_controls(system)
    config = config or BaselineConfig(method="mppi")
    rng = np.random.default_rng(config.seed)
    T, S, d = system.horizon, config.samples, system.control_dim
    U = np.zeros((T, d)) if initial is None else np.asarray(initial, dtype=float).reshape(T, d).copy()
    U = system.clip_controls(U)
    cost = float(control_rollout_costs(system, U[None])[0])
    evaluations = 1
    history = [cost]
    warning = None
    for _ in range(config.iteration_budget(S + 1, evaluations)):
        noise = rng.normal(0.0, config.noise, size=(S, T, d))
        samples = system.clip_controls(U[None] + noise)
        costs = control_rollout_costs(system, samples)
        evaluations += S
        if not np.isfinite(costs).any():
            warning = "all rollouts diverged"
            cost = math.inf
            break
        w = mppi_weights(costs, config.temperature)
        U = system.clip_controls(np.einsum("s,std->td", w, samples))
        cost = float(control_rollout_costs(system, U[None])[0])
        evaluations += 1
        history.append(cost)
    return BaselineResult("mppi", U, cost, evaluations, T, history, converged=warning is None, warning=warning)


def fd_jacobians(
    system: ControlLevelSystem,
    X: np.ndarray,
    U: np.ndarray,
    relative_step: float = 1e-5,
    min_step: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference ``df/dx`` ``(T, n, n)`` and ``df/du`` ``(T, n, d)`` along a trajectory."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    T, n = X.shape
    d = U.shape[1]
    Z = np.concatenate([X, U], axis=1)
    h = np.maximum(relative_step * np.abs(Z), min_step)
    eye = np.eye(n + d)
    plus = Z[:, None, :] + h[:, :, None] * eye[None]
    minus = Z[:, None, :] - h[:, :, None] * eye[None]
    both = np.concatenate([plus, minus], axis=1).reshape(-1, n + d)
    with np.errstate(all="ignore"):
        f = system.dynamics(both[:, :n], both[:, n:]).reshape(T, 2 * (n + d), n)
    J = (f[:, : n + d] - f[:, n + d :]) / (2 * h[:, :, None])
    J = np.transpose(J, (0, 2, 1))
    return J[:, :, :n], J[:, :, n:]


def _ilqr_cost_terms(system: ControlLevelSystem, X, U):
    """Quadratic expansion of the stage and final costs along ``(X, U)``."""
    T = U.shape[0]
    dt = system.dt
    lx, lxx, lu, luu = [], [], [], []
    for k in range(T):
        gx, hx = system.state_cost_derivatives(X[k])
        gu, hu = system.control_cost_derivatives(U[k])
        # u_{T-1} is also charged at the terminal index
        scale = 2.0 if k == T - 1 else 1.0
        lx.append(gx * dt)
        lxx.append(hx * dt)
        lu.append(scale * gu * dt)
        luu.append(scale * hu * dt)
    gx, hx = system.state_cost_derivatives(X[T])
    fx, fxx = system.final_cost_derivatives(X[T])
    return np.array(lx), np.array(lxx), np.array(lu), np.array(luu), gx * dt + fx, hx * dt + fxx


def ilqr_oracle(system: HybridSystem, config: BaselineConfig | None = None, initial=None) -> BaselineResult:
    """Best of several iLQR runs: zero controls, ``initial`` if given, and
    ``ilqr_restarts`` uniformly random control sequences drawn from ``seed``.

    The swing-up cost landscape has many local optima; a single start from
    zero force settles in a poor one.
    """
    system = _require_controls(system)
    config = config or BaselineConfig(method="ilqr")
    T, d = system.horizon, system.control_dim
    rng = np.random.default_rng(config.seed)
    starts = [np.zeros((T, d))]
    if initial is not None:
        starts.append(np.asarray(initial, dtype=float).reshape(T, d))
    starts += [rng.uniform(system.u_min, system.u_max, size=(T, d)) for _ in range(config.ilqr_restarts)]
    best = None
    evaluations = 0
    for U0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            run = ilqr(system, config, U0)
        evaluations += run.evaluations
        if best is None or run.cost < best.cost:
            best = run
    best.evaluations = evaluations
    if best.warning is not None:
        warnings.warn(f"ilqr_oracle: {best.warning}", RuntimeWarning, stacklevel=2)
    return best


def ilqr(system: HybridSystem, config: BaselineConfig | None = None, initial=None) -> BaselineResult:
    """Iterative LQR with finite-difference dynamics derivatives.

    Levenberg regularisation of ``Q_uu`` climbs a x10 ladder from ``reg_min``
    to ``reg_max``; the forward pass backtracks over ``alpha = 1, 1/2, ...``
    and clips controls to the force bounds.  Stops when the best step would
    improve the cost by less than ``ilqr_tolerance`` (relative; that step is
    not taken) or no step size improves at all.
    """
    system = _require_controls(system)
    config = config or BaselineConfig(method="ilqr")
    T, n, d = system.horizon, system.state_dim, system.control_dim
    U = np.zeros((T, d)) if initial is None else np.asarray(initial, dtype=float).reshape(T, d).copy()
    U = system.clip_controls(U)
    X = _control_trajectory(system, U)
    cost = float(control_rollout_costs(system, U[None])[0])
    evaluations = 1
    history = [cost]
    reg = config.reg_min
    alphas = 0.5 ** np.arange(config.line_search_steps)
    warning = None
    converged = False
    for _ in range(config.ilqr_max_iterations):
        fx, fu = fd_jacobians(system, X[:-1], U, config.fd_relative_step, config.fd_min_step)
        evaluations += 1
        lx, lxx, lu, luu, Vx_T, Vxx_T = _ilqr_cost_terms(system, X, U)
        while True:
            gains = _backward_pass(fx, fu, lx, lxx, lu, luu, Vx_T, Vxx_T, reg)
            if gains is not None:
                break
            reg *= 10.0
            if reg > config.reg_max:
                break
        if gains is None:
            warning = "backward pass not positive definite at maximum regularisation"
            break
        kff, Kfb = gains
        # all line-search candidates in one batch
        cand_U = np.empty((alphas.size, T, d))
        x = np.broadcast_to(system.initial_state, (alphas.size, n)).copy()
        with np.errstate(all="ignore"):
            for k in range(T):
                du = alphas[:, None] * kff[k][None, :] + (x - X[k]) @ Kfb[k].T
                cand_U[:, k] = system.clip_controls(U[k][None, :] + du)
                x = system.dynamics(x, cand_U[:, k])
        cand_cost = control_rollout_costs(system, cand_U)
        evaluations += alphas.size
        improving = np.flatnonzero(cand_cost < cost)
        if improving.size == 0:
            reg *= 10.0
            if reg > config.reg_max:
                converged = True
                break
            continue
        j = improving[0]
        new_cost = float(cand_cost[j])
        if cost - new_cost < config.ilqr_tolerance * max(1.0, abs(new_cost)):
            # below the tolerance the step is rounding noise; keep the incumbent
            converged = True
            break
        U = cand_U[j]
        X = _control_trajectory(system, U)
        cost = new_cost
        history.append(cost)
        reg = max(config.reg_min, reg / 10.0)
    if warning is not None:
        warnings.warn(f"ilqr: {warning}", RuntimeWarning, stacklevel=2)
    return BaselineResult("ilqr", U, cost, evaluations, T, history, converged=converged, warning=warning)


def _backward_pass(fx, fu, lx, lxx, lu, luu, Vx, Vxx, reg):
    T, n, d = fu.shape
    kff = np.empty((T, d))
    Kfb = np.empty((T, d, n))
    for k in range(T - 1, -1, -1):
        A, B = fx[k], fu[k]
        Qx = lx[k] + A.T @ Vx
        Qu = lu[k] + B.T @ Vx
        Qxx = lxx[k] + A.T @ Vxx @ A
        Quu = luu[k] + B.T @ Vxx @ B
        Qux = B.T @ Vxx @ A
        Quu_reg = Quu + reg * np.eye(d)
        try:
            L = np.linalg.cholesky(Quu_reg)
        except np.linalg.LinAlgError:
            return None
        kk = -np.linalg.solve(L.T, np.linalg.solve(L, Qu))
        KK = -np.linalg.solve(L.T, np.linalg.solve(L, Qux))
        kff[k], Kfb[k] = kk, KK
        Vx = Qx + KK.T @ Quu @ kk + KK.T @ Qu + Qux.T @ kk
        Vxx = Qxx + KK.T @ Quu @ KK + KK.T @ Qux + Qux.T @ KK
        Vxx = 0.5 * (Vxx + Vxx.T)
    return kff, Kfb


def run_method(
    method: str,
    system: HybridSystem,
    config: BaselineConfig | None = None,
    solver: SolverConfig | None = None,
    initial=None,
) -> BaselineResult:
    """Dispatch by method name; ``hybrid`` uses ``solver`` with ``config.budget`` as rollout cap."""
    config = config or BaselineConfig(method=method)
    if method == "hybrid":
        solver = solver or SolverConfig(seed=config.seed)
        if config.budget is not None:
            solver = SolverConfig(**{**solver.__dict__, "max_evaluations": config.budget, "seed": config.seed})
        return hybrid_scheduler(system, solver, initial=initial)
    table = {
        "random-shooting": random_shooting,
        "cem": cem_categorical,
        "mppi": mppi_continuous,
        "ilqr": ilqr_oracle,
    }
    if method not in table:
        raise InvalidArgument(f"unknown method {method!r}")
    return table[method](system, config, initial)
