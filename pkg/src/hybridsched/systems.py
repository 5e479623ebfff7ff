"""Black-box hybrid systems.

Every system exposes ``M`` modes; mode ``m`` advances the state by one
discrete step of length ``dt``.  Solvers only ever call the batched methods
(``step_batch``, ``stage_cost_batch``, ``terminal_cost_batch``), which take a
``(B, n)`` state array and a ``(B,)`` mode array.  The scalar ``step`` /
``stage_cost`` / ``terminal_cost`` wrappers validate their input and are what
user code and tests normally reach for.

Systems whose modes are constant control levels (:class:`Cartpole`,
:class:`DoubleIntegrator`) additionally expose a continuous-control view
(``dynamics``, ``state_cost``, ``control_cost`` and their derivatives) used by
the MPPI and iLQR baselines.  Their stage cost is separable::

    l(x, u) = state_cost(x) + control_cost(u)
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numba import njit

from .errors import InvalidArgument, NonFiniteStateError

__all__ = [
    "HybridSystem",
    "ControlLevelSystem",
    "Cartpole",
    "DoubleIntegrator",
    "TableSystem",
    "build_cartpole",
]


def _as_state(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size != dim:
        raise InvalidArgument(f"expected a state of dimension {dim}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteStateError(f"non-finite state {arr}")
    return arr


@dataclass(frozen=True, eq=False)
class HybridSystem:
    """Base class; subclasses implement the three ``*_batch`` methods."""

    horizon: int
    dt: float
    mode_count: int
    initial_state: np.ndarray

    state_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidArgument("horizon must be >= 1")
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")
        if self.mode_count < 1:
            raise InvalidArgument("mode_count must be >= 1")
        x0 = np.array(self.initial_state, dtype=float).reshape(-1)
        x0.flags.writeable = False
        object.__setattr__(self, "initial_state", x0)

    @property
    def state_dim(self) -> int:
        return self.initial_state.size

    @property
    def default_mode(self) -> int:
        return 0

    def replace(self, **changes) -> "HybridSystem":
        return dataclasses.replace(self, **changes)

    def with_initial_state(self, x) -> "HybridSystem":
        return self.replace(initial_state=np.asarray(x, dtype=float))

    def with_horizon(self, horizon: int) -> "HybridSystem":
        return self.replace(horizon=int(horizon))

    # batched interface -------------------------------------------------

    def step_batch(self, x: np.ndarray, k: int, modes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stage_cost_batch(self, x: np.ndarray, modes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def terminal_cost_batch(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0])

    # checked scalar interface -------------------------------------------

    def _check_mode(self, m: int) -> int:
        if not 0 <= int(m) < self.mode_count:
            raise InvalidArgument(f"mode {m} outside [0, {self.mode_count - 1}]")
        return int(m)

    def step(self, x, k: int, m: int) -> np.ndarray:
        """Advance ``x`` from step ``k`` to ``k + 1`` under mode ``m``."""
        x = _as_state(x, self.state_dim)
        m = self._check_mode(m)
        if not 0 <= k < self.horizon:
            raise InvalidArgument(f"step index {k} outside [0, {self.horizon - 1}]")
        return self.step_batch(x[None, :], k, np.array([m]))[0]

    def stage_cost(self, x, m: int) -> float:
        x = _as_state(x, self.state_dim)
        return float(self.stage_cost_batch(x[None, :], np.array([self._check_mode(m)]))[0])

    def terminal_cost(self, x) -> float:
        x = _as_state(x, self.state_dim)
        return float(self.terminal_cost_batch(x[None, :])[0])


@dataclass(frozen=True, eq=False)
class ControlLevelSystem(HybridSystem):
    """Modes are ``mode_count`` force levels uniformly spaced on ``[u_min, u_max]``.

    The force is held constant over the step (zero-order hold).
    """

    u_min: float = -1.0
    u_max: float = 1.0

    control_dim: ClassVar[int] = 1

    def __post_init__(self):
        super().__post_init__()
        if self.mode_count < 2:
            raise InvalidArgument("mode_count must be >= 2 for a control-level system")
        if not self.u_min < self.u_max:
            raise InvalidArgument("u_min must be smaller than u_max")

    @property
    def levels(self) -> np.ndarray:
        m = np.arange(self.mode_count)
        return self.u_min + m * (self.u_max - self.u_min) / (self.mode_count - 1)

    @property
    def default_mode(self) -> int:
        # level closest to zero force, lowest index on ties
        return int(np.argmin(np.abs(self.levels)))

    def controls_for(self, schedule) -> np.ndarray:
        """Force sequence ``(T, 1)`` applied by a mode schedule."""
        return self.levels[np.asarray(schedule, dtype=np.int64)][:, None]

    def quantize(self, u) -> np.ndarray:
        """Nearest mode id for each control value."""
        u = np.asarray(u, dtype=float).reshape(-1)
        return np.argmin(np.abs(u[:, None] - self.levels[None, :]), axis=1)

    # continuous-control view ---------------------------------------------

    def dynamics(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state_cost(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def control_cost(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def final_cost(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state_cost_derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def control_cost_derivatives(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def final_cost_derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def clip_controls(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.u_min, self.u_max)

    # hybrid view -------------------------------------------------------

    def step_batch(self, x, k, modes):
        return self.dynamics(x, self.levels[modes][:, None])

    def stage_cost_batch(self, x, modes):
        return self.state_cost(x) + self.control_cost(self.levels[modes][:, None])

    def terminal_cost_batch(self, x):
        return self.final_cost(x)


@njit(cache=True)
def _cartpole_accel(theta, theta_dot, force, mc, mp, l, g):
    s = math.sin(theta)
    c = math.cos(theta)
    total = mc + mp
    temp = (force + mp * l * theta_dot * theta_dot * s) / total
    theta_acc = (g * s - c * temp) / (l * (4.0 / 3.0 - mp * c * c / total))
    p_acc = temp - mp * l * theta_acc * c / total
    return theta_acc, p_acc


@njit(cache=True)
def _cartpole_rk4(x, force, dt, substeps, mc, mp, l, g):
    out = np.empty_like(x)
    h = dt / substeps
    for i in range(x.shape[0]):
        th, p, thd, pd = x[i, 0], x[i, 1], x[i, 2], x[i, 3]
        f = force[i]
        for _ in range(substeps):
            a1, b1 = _cartpole_accel(th, thd, f, mc, mp, l, g)
            th2, p2, thd2, pd2 = th + 0.5 * h * thd, p + 0.5 * h * pd, thd + 0.5 * h * a1, pd + 0.5 * h * b1
            a2, b2 = _cartpole_accel(th2, thd2, f, mc, mp, l, g)
            th3, p3, thd3, pd3 = th + 0.5 * h * thd2, p + 0.5 * h * pd2, thd + 0.5 * h * a2, pd + 0.5 * h * b2
            a3, b3 = _cartpole_accel(th3, thd3, f, mc, mp, l, g)
            th4, p4, thd4, pd4 = th + h * thd3, p + h * pd3, thd + h * a3, pd + h * b3
            a4, b4 = _cartpole_accel(th4, thd4, f, mc, mp, l, g)
            th = th + (h / 6.0) * (thd + 2.0 * thd2 + 2.0 * thd3 + thd4)
            p = p + (h / 6.0) * (pd + 2.0 * pd2 + 2.0 * pd3 + pd4)
            thd = thd + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            pd = pd + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[i, 0], out[i, 1], out[i, 2], out[i, 3] = th, p, thd, pd
    return out


@dataclass(frozen=True, eq=False)
class Cartpole(ControlLevelSystem):
    """Cart-pole with the pole angle measured from upright (``theta = 0``).

    State order is ``(theta, p, theta_dot, p_dot)``.  One step integrates the
    continuous dynamics over ``dt`` with ``substeps`` fixed RK4 substeps.
    ``theta`` is not wrapped.
    """

    horizon: int = 100
    dt: float = 0.05
    mode_count: int = 5
    initial_state: np.ndarray = field(default_factory=lambda: np.array([0.5 * math.pi, 0.0, 0.0, 0.0]))
    u_min: float = -10.0
    u_max: float = 10.0
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.81
    substeps: int = 8
    angle_weight: float = 4.0
    position_weight: float = 0.1
    velocity_weight: float = 0.1
    control_weight: float = 1.0

    state_names: ClassVar[tuple[str, ...]] = ("theta", "p", "theta_dot", "p_dot")

    def __post_init__(self):
        super().__post_init__()
        if self.state_dim != 4:
            raise InvalidArgument("cartpole initial_state must have 4 entries")
        if min(self.cart_mass, self.pole_mass, self.pole_half_length, self.gravity) <= 0:
            raise InvalidArgument("cartpole physical parameters must be positive")
        if self.substeps < 1:
            raise InvalidArgument("substeps must be >= 1")

    def derivative(self, x: np.ndarray, force: np.ndarray) -> np.ndarray:
        theta, _, theta_dot, p_dot = x.T
        s, c = np.sin(theta), np.cos(theta)
        mc, mp, l, g = self.cart_mass, self.pole_mass, self.pole_half_length, self.gravity
        total = mc + mp
        temp = (force + mp * l * theta_dot**2 * s) / total
        theta_acc = (g * s - c * temp) / (l * (4.0 / 3.0 - mp * c**2 / total))
        p_acc = temp - mp * l * theta_acc * c / total
        return np.stack([theta_dot, p_dot, theta_acc, p_acc], axis=1)

    def dynamics(self, x, u):
        x = np.ascontiguousarray(x, dtype=float)
        force = np.ascontiguousarray(np.asarray(u, dtype=float).reshape(x.shape[0], -1)[:, 0])
        return _cartpole_rk4(
            x, force, self.dt, self.substeps, self.cart_mass, self.pole_mass, self.pole_half_length, self.gravity
        )

    def state_cost(self, x):
        theta, p, theta_dot, p_dot = x.T
        return (
            self.angle_weight * (np.cos(theta) - 1.0) ** 2
            + self.position_weight * p**2
            + self.velocity_weight * (theta_dot**2 + p_dot**2)
        )

    def control_cost(self, u):
        return self.control_weight * np.sum(np.asarray(u) ** 2, axis=-1)

    def final_cost(self, x):
        return self.angle_weight * (np.cos(x[:, 0]) - 1.0) ** 2

    def _angle_derivatives(self, theta):
        # exact gradient, Gauss-Newton curvature 2a sin^2 (never negative)
        s, c = np.sin(theta), np.cos(theta)
        a = self.angle_weight
        return -2.0 * a * (c - 1.0) * s, 2.0 * a * s * s

    def state_cost_derivatives(self, x):
        x = np.asarray(x, dtype=float)
        d1, d2 = self._angle_derivatives(x[0])
        wp, wv = self.position_weight, self.velocity_weight
        grad = np.array([d1, 2 * wp * x[1], 2 * wv * x[2], 2 * wv * x[3]])
        hess = np.diag([d2, 2 * wp, 2 * wv, 2 * wv])
        return grad, hess

    def control_cost_derivatives(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        return 2 * self.control_weight * u, 2 * self.control_weight * np.eye(u.size)

    def final_cost_derivatives(self, x):
        d1, d2 = self._angle_derivatives(float(np.asarray(x)[0]))
        grad = np.zeros(4)
        hess = np.zeros((4, 4))
        grad[0], hess[0, 0] = d1, d2
        return grad, hess


@dataclass(frozen=True, eq=False)
class DoubleIntegrator(ControlLevelSystem):
    """Point mass ``(p, v)`` under a held acceleration, explicit Euler.

    ``p' = p + v dt`` and ``v' = v + a dt``.  Costs are quadratic:
    ``q_pos p^2 + q_vel v^2`` per step, ``r a^2`` for the control and
    ``qf_pos p^2 + qf_vel v^2`` at the end of the horizon.
    """

    horizon: int = 50
    dt: float = 0.1
    mode_count: int = 3
    initial_state: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    u_min: float = -1.0
    u_max: float = 1.0
    q_pos: float = 1.0
    q_vel: float = 0.1
    r: float = 0.1
    qf_pos: float = 10.0
    qf_vel: float = 1.0

    state_names: ClassVar[tuple[str, ...]] = ("p", "v")

    def __post_init__(self):
        super().__post_init__()
        if self.state_dim != 2:
            raise InvalidArgument("double integrator initial_state must have 2 entries")

    @property
    def A(self) -> np.ndarray:
        return np.array([[1.0, self.dt], [0.0, 1.0]])

    @property
    def B(self) -> np.ndarray:
        return np.array([[0.0], [self.dt]])

    def dynamics(self, x, u):
        a = np.asarray(u, dtype=float).reshape(x.shape[0], -1)[:, 0]
        p, v = x[:, 0], x[:, 1]
        return np.stack([p + v * self.dt, v + a * self.dt], axis=1)

    def state_cost(self, x):
        return self.q_pos * x[:, 0] ** 2 + self.q_vel * x[:, 1] ** 2

    def control_cost(self, u):
        return self.r * np.sum(np.asarray(u) ** 2, axis=-1)

    def final_cost(self, x):
        return self.qf_pos * x[:, 0] ** 2 + self.qf_vel * x[:, 1] ** 2

    def state_cost_derivatives(self, x):
        Q = np.diag([self.q_pos, self.q_vel])
        return 2 * Q @ np.asarray(x, dtype=float), 2 * Q

    def control_cost_derivatives(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        return 2 * self.r * u, 2 * self.r * np.eye(u.size)

    def final_cost_derivatives(self, x):
        Qf = np.diag([self.qf_pos, self.qf_vel])
        return 2 * Qf @ np.asarray(x, dtype=float), 2 * Qf


@dataclass(frozen=True, eq=False)
class TableSystem(HybridSystem):
    """Finite-state system: ``next = transitions[state, mode]``, cost ``costs[state]``.

    The state vector holds the state id as a single float.  There is no
    terminal cost.  Stage costs do not depend on the mode.
    """

    horizon: int = 6
    dt: float = 1.0
    mode_count: int = 0
    initial_state: np.ndarray = field(default_factory=lambda: np.zeros(1))
    transitions: np.ndarray = field(default_factory=lambda: np.zeros((1, 1), dtype=np.int64))
    costs: np.ndarray = field(default_factory=lambda: np.zeros(1))

    state_names: ClassVar[tuple[str, ...]] = ("state",)

    def __post_init__(self):
        table = np.array(self.transitions, dtype=np.int64)
        costs = np.array(self.costs, dtype=float).reshape(-1)
        if table.ndim != 2 or table.shape[0] != costs.size:
            raise InvalidArgument("transition table must be (states, modes) with one cost per state")
        if table.min() < 0 or table.max() >= costs.size:
            raise InvalidArgument("transition table references an unknown state id")
        table.flags.writeable = False
        costs.flags.writeable = False
        object.__setattr__(self, "transitions", table)
        object.__setattr__(self, "costs", costs)
        if self.mode_count == 0:
            object.__setattr__(self, "mode_count", table.shape[1])
        if self.mode_count != table.shape[1]:
            raise InvalidArgument("mode_count disagrees with the transition table")
        super().__post_init__()
        s0 = self.initial_state
        if s0.size != 1 or s0[0] != int(s0[0]) or not 0 <= s0[0] < costs.size:
            raise InvalidArgument("table initial_state must be a single valid state id")

    @property
    def state_count(self) -> int:
        return self.costs.size

    @classmethod
    def from_text(cls, text: str, horizon: int, initial_state: int = 0, dt: float = 1.0) -> "TableSystem":
        """Parse one line per state id: next-state id per mode, then the stage cost."""
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise InvalidArgument(f"line {lineno}: need at least one next state and a cost")
            try:
                rows.append(([int(t) for t in tokens[:-1]], float(tokens[-1])))
            except ValueError as exc:
                raise InvalidArgument(f"line {lineno}: {exc}") from exc
        if not rows or len({len(r[0]) for r in rows}) != 1:
            raise InvalidArgument("every table line must list the same number of modes")
        return cls(
            horizon=horizon,
            dt=dt,
            initial_state=np.array([float(initial_state)]),
            transitions=np.array([r[0] for r in rows]),
            costs=np.array([r[1] for r in rows]),
        )

    def to_text(self) -> str:
        return "".join(
            " ".join(str(int(s)) for s in row) + f" {float(c)!r}\n" for row, c in zip(self.transitions, self.costs)
        )

    def step_batch(self, x, k, modes):
        ids = x[:, 0].astype(np.int64)
        return self.transitions[ids, modes].astype(float)[:, None]

    def stage_cost_batch(self, x, modes):
        return self.costs[x[:, 0].astype(np.int64)]

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        state_count: int,
        mode_count: int,
        horizon: int,
        max_cost: int = 20,
    ) -> "TableSystem":
        """Random table with integer costs in ``[0, max_cost]`` (float sums stay exact)."""
        return cls(
            horizon=horizon,
            transitions=rng.integers(0, state_count, size=(state_count, mode_count)),
            costs=rng.integers(0, max_cost + 1, size=state_count).astype(float),
        )


def build_cartpole(
    horizon: int = 100,
    dt: float = 0.05,
    mode_count: int = 5,
    u_min: float = -10.0,
    u_max: float = 10.0,
    initial_state=None,
    **physical,
) -> Cartpole:
    """Cartpole swing-up instance; defaults start with the pole horizontal."""
    kwargs = dict(horizon=horizon, dt=dt, mode_count=mode_count, u_min=u_min, u_max=u_max, **physical)
    if initial_state is not None:
        kwargs["initial_state"] = np.asarray(initial_state, dtype=float)
    return Cartpole(**kwargs)
