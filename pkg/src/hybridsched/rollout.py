"""Forward simulation of mode schedules and the schedule objective.

The objective of a schedule ``K`` of length ``T`` is::

    J(K) = sum_{k=0}^{T} l(x_k, K(k)) * dt  +  terminal_cost(x_T)

with ``x_{k+1} = F_{K(k)}(x_k, k)``.  Only ``T`` modes exist, so the control
term at ``k = T`` reuses ``K(T - 1)``.  Costs are accumulated strictly left to
right in both the single and the batched path, so a batched rollout that
resumes from a cached prefix reproduces :func:`evaluate` bit for bit.

A rollout that produces a non-finite state is cut short and scored ``+inf``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .schedule import as_schedule
from .systems import HybridSystem

__all__ = ["TrajectoryRecord", "evaluate", "rollout_costs"]


@dataclass(frozen=True)
class TrajectoryRecord:
    states: np.ndarray
    modes: np.ndarray
    stage_costs: np.ndarray
    terminal_cost: float
    total_cost: float
    prefix_costs: np.ndarray

    @property
    def diverged(self) -> bool:
        return not np.isfinite(self.total_cost)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def evaluate(system: HybridSystem, schedule) -> TrajectoryRecord:
    """Roll ``schedule`` out from ``system.initial_state``.

    ``states`` has ``T + 1`` rows and ``stage_costs`` holds ``l(x_k) * dt`` for
    ``k = 0..T``; both are truncated at the first non-finite state.
    ``prefix_costs[k]`` is the running sum of the first ``k`` stage costs.
    """
    modes = as_schedule(schedule, system.mode_count)
    T = system.horizon
    if modes.size != T:
        raise InvalidArgument(f"schedule length {modes.size} != horizon {T}")
    dt = system.dt
    x = system.initial_state[None, :].copy()
    states = [x[0]]
    stage_costs = []
    prefix = [0.0]
    acc = np.zeros(1)
    with np.errstate(all="ignore"):
        for k in range(T + 1):
            m = modes[min(k, T - 1)][None]
            c = system.stage_cost_batch(x, m) * dt
            if not np.isfinite(c[0]):
                break
            acc = acc + c
            stage_costs.append(float(c[0]))
            prefix.append(float(acc[0]))
            if k == T:
                break
            x = system.step_batch(x, k, m)
            if not np.all(np.isfinite(x)):
                break
            states.append(x[0])
        complete = len(states) == T + 1 and len(stage_costs) == T + 1
        if complete:
            terminal = float(system.terminal_cost_batch(x)[0])
            total = float((acc + terminal)[0])
        else:
            terminal = float("inf")
            total = float("inf")
    if not np.isfinite(total):
        total = float("inf")
    return TrajectoryRecord(
        states=np.array(states),
        modes=modes,
        stage_costs=np.array(stage_costs),
        terminal_cost=terminal,
        total_cost=total,
        prefix_costs=np.array(prefix),
    )


def rollout_costs(
    system: HybridSystem,
    schedules: np.ndarray,
    *,
    start: int = 0,
    start_state: np.ndarray | None = None,
    start_cost: float = 0.0,
) -> np.ndarray:
    """Total cost of every row of ``schedules`` (shape ``(B, T)``).

    With ``start > 0`` the rollouts resume at step ``start`` from
    ``start_state`` with ``start_cost`` already accumulated; every row must
    agree with the schedule that produced that prefix on ``[0, start)``.
    """
    schedules = np.asarray(schedules, dtype=np.int64)
    B, T = schedules.shape
    if T != system.horizon:
        raise InvalidArgument(f"schedule length {T} != horizon {system.horizon}")
    if start_state is None:
        start_state = system.initial_state
    x = np.broadcast_to(np.asarray(start_state, dtype=float), (B, system.state_dim)).copy()
    acc = np.full(B, float(start_cost))
    alive = np.ones(B, dtype=bool)
    dt = system.dt
    with np.errstate(all="ignore"):
        for k in range(start, T):
            m = schedules[:, k]
            acc = acc + system.stage_cost_batch(x, m) * dt
            x = system.step_batch(x, k, m)
            ok = np.all(np.isfinite(x), axis=1)
            if not ok.all():
                alive &= ok
                x[~ok] = 0.0
        acc = acc + system.stage_cost_batch(x, schedules[:, T - 1]) * dt
        acc = acc + system.terminal_cost_batch(x)
    acc[~alive | ~np.isfinite(acc)] = np.inf
    return acc
