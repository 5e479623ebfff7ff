"""Receding-horizon control with the hybrid scheduler as planner.

At each plant step the scheduler re-plans over a short window, warm-started
from the previous plan shifted by one step, and the first mode is applied.
"""

from hybridsched import SolverConfig, build_cartpole, run_mpc

cp = build_cartpole()
for horizon in (10, 20):
    res = run_mpc(cp, horizon, episode_length=100, config=SolverConfig(seed=0, max_evaluations=500))
    print(
        f"H = {horizon:2d}: cumulative cost {res.cumulative_cost:.3f}, "
        f"{sum(res.evaluations)} rollouts, {len(res.flagged_steps)} flagged steps"
    )
