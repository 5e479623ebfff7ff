"""Rolling out schedules on the built-in systems.

``evaluate`` returns the full trajectory record; ``rollout_costs`` scores a
batch of schedules in one vectorised pass and agrees with ``evaluate``
bit for bit.
"""

import numpy as np

from hybridsched import TableSystem, build_cartpole, evaluate, rollout_costs

cp = build_cartpole()
print("cartpole levels (N):", cp.levels.tolist(), " default mode:", cp.default_mode)
print("horizon", cp.horizon, " dt", cp.dt, " initial state", cp.initial_state.tolist())

idle = evaluate(cp, [cp.default_mode] * cp.horizon)
print(f"zero-force rollout cost {idle.total_cost:.3f}, final angle {idle.states[-1, 0]:.3f} rad")

rng = np.random.default_rng(0)
batch = rng.integers(0, cp.mode_count, size=(64, cp.horizon))
costs = rollout_costs(cp, batch)
print(f"64 random schedules: best {costs.min():.3f}, median {np.median(costs):.3f}")
assert costs[0] == evaluate(cp, batch[0]).total_cost

table = TableSystem.random(np.random.default_rng(7), 6, 3, 10)
rec = evaluate(table, [0] * 10)
print("table walk states", rec.states[:, 0].astype(int).tolist(), " cost", rec.total_cost)
