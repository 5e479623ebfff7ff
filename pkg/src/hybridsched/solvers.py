"""Single-switch search, iterative refinement and the receding-horizon loop.

The single-switch problem asks for the tuple ``(m, mu, nu)`` whose stitch into
a base schedule lowers the objective most.  Two inner solvers are provided:

* :func:`solve_single_switch_exhaustive` scores all ``Z`` candidates and
  returns the best one (ties go to the lexicographically smallest tuple);
* :func:`solve_single_switch_sampled` draws batches of ``N`` candidates
  without replacement and stops at the first improving candidate (or the
  best of the first improving batch), giving up after ``ceil(Z / N)``
  batches.

:func:`solve_iterative` stitches accepted switches one at a time until no
candidate improves the cost by more than ``tolerance``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .errors import CandidateSpaceExhausted, InvalidArgument
from .io import csv_text
from .rollout import evaluate, rollout_costs
from .schedule import CandidateSpace, SwitchTuple, as_schedule, constant_schedule, stitch, stitch_many
from .seeding import derive_seed
from .systems import HybridSystem

__all__ = [
    "SolverConfig",
    "SolveReport",
    "RolloutObjective",
    "solve_single_switch_exhaustive",
    "solve_single_switch_sampled",
    "solve_iterative",
    "MPCState",
    "mpc_step",
    "run_mpc",
    "MPCResult",
    "shift_warm_start",
]

Policy = Literal["first-improvement", "best-of-batch"]
Inner = Literal["sampled", "exhaustive"]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the single-switch and iterative solvers.

    ``max_evaluations`` caps the total number of rollouts (``None`` means
    unbounded).  ``eval_chunk`` is the number of candidates rolled out per
    vectorised call; under first-improvement it also bounds how many
    candidates past the winner get evaluated.
    """

    batch_size: int = 25
    max_iterations: int = 1000
    tolerance: float = 1e-9
    policy: Policy = "first-improvement"
    seed: int = 0
    max_evaluations: int | None = None
    eval_chunk: int = 4096
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.tolerance < 0:
            raise InvalidArgument("tolerance must be >= 0")
        if self.max_iterations < 0:
            raise InvalidArgument("max_iterations must be >= 0")
        if self.policy not in ("first-improvement", "best-of-batch"):
            raise InvalidArgument(f"unknown acceptance policy {self.policy!r}")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise InvalidArgument("max_evaluations must be >= 1")
        if self.eval_chunk < 1 or self.workers < 1:
            raise InvalidArgument("eval_chunk and workers must be >= 1")


class RolloutObjective:
    """Cost of ``stitch(base, candidate)`` for batches of candidate indices.

    The base trajectory is rolled out once; each candidate resumes from the
    cached base state at the earliest switch start in its chunk, since all
    steps before that are shared with the base.  ``evaluations`` counts
    candidate rollouts only (the base rollout is not included).
    """

    def __init__(self, system: HybridSystem, base, space: CandidateSpace | None = None, *, chunk: int = 4096, workers: int = 1):
        self.system = system
        self.base = as_schedule(base, system.mode_count)
        if self.base.size != system.horizon:
            raise InvalidArgument(f"schedule length {self.base.size} != horizon {system.horizon}")
        self.space = space or CandidateSpace(system.mode_count, system.horizon)
        self.record = evaluate(system, self.base)
        self.base_cost = self.record.total_cost
        self.chunk = chunk
        self.workers = workers
        self.evaluations = 0

    def _chunk_costs(self, indices: np.ndarray) -> np.ndarray:
        modes, starts, durations = self.space.decode(indices)
        costs = np.full(indices.size, np.inf)
        last = self.record.states.shape[0] - 1
        # a switch starting after the base diverged cannot rescue it
        live = starts <= last if self.record.diverged else np.ones(indices.size, dtype=bool)
        if live.any():
            k0 = int(starts[live].min())
            schedules = stitch_many(self.base, modes[live], starts[live], durations[live])
            costs[live] = rollout_costs(
                self.system,
                schedules,
                start=k0,
                start_state=self.record.states[k0],
                start_cost=self.record.prefix_costs[k0],
            )
        return costs

    def __call__(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        self.evaluations += indices.size
        pieces = [indices[i : i + self.chunk] for i in range(0, indices.size, self.chunk)]
        if self.workers > 1 and len(pieces) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(self._chunk_costs, pieces))
        else:
            parts = [self._chunk_costs(p) for p in pieces]
        return np.concatenate(parts) if parts else np.empty(0)


def _best(indices: np.ndarray, costs: np.ndarray) -> int:
    """Position of the lowest cost, lowest index on ties."""
    return int(np.lexsort((indices, costs))[0])


def _objective(system, base, space, objective, config: SolverConfig):
    if objective is not None:
        return objective
    return RolloutObjective(system, base, space, chunk=config.eval_chunk, workers=config.workers)


def solve_single_switch_exhaustive(
    system: HybridSystem,
    base,
    config: SolverConfig | None = None,
    *,
    objective: Callable | None = None,
) -> tuple[SwitchTuple, float] | None:
    """Best single switch over all ``Z`` candidates, or ``None`` if none improves.

    Exactly ``Z`` candidate rollouts are performed.  ``objective`` replaces
    the rollout objective; it must expose ``base_cost``, ``space`` and map an
    index array to costs.
    """
    config = config or SolverConfig()
    space = CandidateSpace(system.mode_count, system.horizon)
    objective = _objective(system, base, space, objective, config)
    space = getattr(objective, "space", space)
    indices = np.arange(space.total, dtype=np.int64)
    # group by start so each chunk shares a long cached prefix
    _, starts, _ = space.decode(indices)
    indices = indices[np.argsort(starts, kind="stable")]
    costs = objective(indices)
    i = _best(indices, costs)
    if costs[i] < objective.base_cost - config.tolerance:
        return space.index_to_tuple(int(indices[i])), float(costs[i])
    return None


def solve_single_switch_sampled(
    system: HybridSystem,
    base,
    config: SolverConfig | None = None,
    space: CandidateSpace | None = None,
    *,
    objective: Callable | None = None,
) -> tuple[SwitchTuple, float] | None:
    """Search the candidate space in random batches of ``config.batch_size``.

    Returns ``None`` once ``ceil(Z / N)`` batches (that is, all of the
    space) produced no candidate beating the base by more than the
    tolerance, or when the evaluation budget runs out.  ``space`` keeps its
    draw state, so a second call continues where the first stopped.
    """
    config = config or SolverConfig()
    if space is None:
        space = CandidateSpace(system.mode_count, system.horizon, seed=config.seed)
    objective = _objective(system, base, space, objective, config)
    threshold = objective.base_cost - config.tolerance
    N = config.batch_size
    max_batches = math.ceil(space.total / N)
    budget = config.max_evaluations
    for _ in range(max_batches):
        n = N
        if budget is not None:
            n = min(n, budget - objective.evaluations)
            if n <= 0:
                return None
        try:
            batch = space.draw_indices(n)
        except CandidateSpaceExhausted:
            return None
        if config.policy == "first-improvement":
            step = min(config.eval_chunk, batch.size)
            for lo in range(0, batch.size, step):
                part = batch[lo : lo + step]
                costs = objective(part)
                hits = np.flatnonzero(costs < threshold)
                if hits.size:
                    j = int(hits[0])
                    return space.index_to_tuple(int(part[j])), float(costs[j])
        else:
            costs = objective(batch)
            i = _best(batch, costs)
            if costs[i] < threshold:
                return space.index_to_tuple(int(batch[i])), float(costs[i])
    return None


@dataclass
class SolveReport:
    final_schedule: np.ndarray
    initial_cost: float
    cost_history: list[float]
    accepted_switches: list[SwitchTuple]
    evaluations: int
    termination: str
    evaluation_history: list[int] = field(default_factory=list)

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1] if self.cost_history else self.initial_cost

    def to_csv(self) -> str:
        """``iter,accepted_mode,mu,nu,cost,evaluations``; row 0 is the initial schedule."""
        rows = [(0, None, None, None, self.initial_cost, self.evaluation_history[0])]
        for i, (sw, cost, ev) in enumerate(
            zip(self.accepted_switches, self.cost_history, self.evaluation_history[1:]), 1
        ):
            rows.append((i, sw.mode, sw.start, sw.duration, cost, ev))
        return csv_text(("iter", "accepted_mode", "mu", "nu", "cost", "evaluations"), rows)


def solve_iterative(
    system: HybridSystem,
    initial=None,
    config: SolverConfig | None = None,
    inner: Inner = "sampled",
    space: CandidateSpace | None = None,
) -> SolveReport:
    """Repeatedly find and stitch a single improving switch.

    Stops when the inner solver finds nothing (``fixed-point``), after
    ``config.max_iterations`` accepted switches (``iteration-cap``) or when
    ``config.max_evaluations`` rollouts have been spent (``exhausted``).
    The candidate space is reset after every accepted switch.
    """
    config = config or SolverConfig()
    if inner not in ("sampled", "exhaustive"):
        raise InvalidArgument(f"unknown inner solver {inner!r}")
    if initial is None:
        initial = constant_schedule(system.default_mode, system.horizon)
    if space is None:
        space = CandidateSpace(system.mode_count, system.horizon, seed=config.seed)
    schedule = as_schedule(initial, system.mode_count)
    budget = config.max_evaluations

    objective = RolloutObjective(system, schedule, space, chunk=config.eval_chunk, workers=config.workers)
    evaluations = 1
    report = SolveReport(schedule, objective.base_cost, [], [], evaluations, "fixed-point", [evaluations])

    while True:
        if len(report.accepted_switches) >= config.max_iterations:
            report.termination = "iteration-cap"
            break
        left = None if budget is None else budget - evaluations
        if left is not None and (left <= 0 or (inner == "exhaustive" and left < space.total)):
            report.termination = "exhausted"
            break
        if inner == "exhaustive":
            found = solve_single_switch_exhaustive(system, schedule, config, objective=objective)
        else:
            found = solve_single_switch_sampled(
                system, schedule, replace(config, max_evaluations=left), space, objective=objective
            )
        evaluations += objective.evaluations
        if found is None:
            if left is not None and objective.evaluations >= left:
                report.termination = "exhausted"
            break
        switch, cost = found
        schedule = stitch(schedule, switch)
        space.reset()
        objective = RolloutObjective(system, schedule, space, chunk=config.eval_chunk, workers=config.workers)
        evaluations += 1
        report.accepted_switches.append(switch)
        report.cost_history.append(cost)
        report.evaluation_history.append(evaluations)

    report.final_schedule = schedule
    report.evaluations = evaluations
    return report


@dataclass(frozen=True)
class MPCState:
    """Receding-horizon controller state.

    ``model`` is the planning model; its ``horizon`` is the planning horizon
    ``H``.  ``planner`` optionally replaces the hybrid scheduler: it is called
    as ``planner(model, warm_start, seed)`` and must return
    ``(schedule, cost, evaluations)``.
    """

    model: HybridSystem
    config: SolverConfig
    warm_start: np.ndarray
    inner: Inner = "sampled"
    planner: Callable | None = None
    step_index: int = 0
    last_plan: np.ndarray | None = None
    last_cost: float = float("nan")
    last_evaluations: int = 0
    last_flagged: bool = False

    @classmethod
    def create(cls, system: HybridSystem, horizon: int, config: SolverConfig | None = None, **kwargs) -> "MPCState":
        model = system.with_horizon(horizon)
        warm = constant_schedule(model.default_mode, horizon)
        return cls(model=model, config=config or SolverConfig(), warm_start=warm, **kwargs)


def shift_warm_start(plan, default_mode: int) -> np.ndarray:
    """Drop the executed first entry and append the default mode."""
    plan = np.asarray(plan, dtype=np.int64)
    return as_schedule(np.concatenate([plan[1:], [default_mode]]))


def mpc_step(state: MPCState, observed) -> tuple[int, MPCState]:
    """Re-plan from ``observed`` and return the mode to execute now."""
    observed = np.asarray(observed, dtype=float).reshape(-1)
    default = state.model.default_mode
    seed = derive_seed(state.config.seed, state.step_index)
    plan, cost, used = state.warm_start, float("inf"), 0
    if np.all(np.isfinite(observed)):
        model = state.model.with_initial_state(observed)
        if state.planner is None:
            report = solve_iterative(model, state.warm_start, replace(state.config, seed=seed), state.inner)
            plan, cost, used = report.final_schedule, report.final_cost, report.evaluations
        else:
            plan, cost, used = state.planner(model, state.warm_start, seed)
            plan = as_schedule(plan, model.mode_count)
    flagged = not np.isfinite(cost)
    mode = default if flagged else int(plan[0])
    executed_plan = plan if not flagged else constant_schedule(default, state.model.horizon)
    new_state = replace(
        state,
        warm_start=shift_warm_start(executed_plan, default),
        step_index=state.step_index + 1,
        last_plan=plan,
        last_cost=cost,
        last_evaluations=used,
        last_flagged=flagged,
    )
    return mode, new_state


@dataclass
class MPCResult:
    executed: np.ndarray
    states: np.ndarray
    cumulative_cost: float
    flagged_steps: list[int]
    evaluations: list[int]
    plans: list[np.ndarray]


def run_mpc(
    system: HybridSystem,
    horizon: int,
    episode_length: int,
    config: SolverConfig | None = None,
    inner: Inner = "sampled",
    planner: Callable | None = None,
) -> MPCResult:
    """Close the loop for ``episode_length`` steps on ``system`` itself.

    ``cumulative_cost`` is the objective of the executed mode sequence over
    the episode, i.e. ``evaluate`` on the episode-length system.
    """
    plant = system.with_horizon(episode_length)
    state = MPCState.create(system, horizon, config, inner=inner, planner=planner)
    x = plant.initial_state.copy()
    executed, states, flagged, used, plans = [], [x], [], [], []
    for t in range(episode_length):
        mode, state = mpc_step(state, x)
        executed.append(mode)
        plans.append(state.last_plan)
        used.append(state.last_evaluations)
        if state.last_flagged:
            flagged.append(t)
        with np.errstate(all="ignore"):
            x = plant.step_batch(x[None, :], t, np.array([mode]))[0]
        states.append(x)
    record = evaluate(plant, executed)
    return MPCResult(as_schedule(executed), np.array(states), record.total_cost, flagged, used, plans)
