"""Hybrid scheduling against sampling baselines and a continuous oracle.

Every method gets the same rollout budget.  The normalised gap is
``(J - J_oracle) / H``, with the multi-start iLQR solution as the oracle.
"""

from hybridsched import BaselineConfig, build_cartpole, ilqr_oracle, measure_gap
from hybridsched.baselines import run_method

H, budget = 20, 5000
cp = build_cartpole(horizon=H)
oracle = ilqr_oracle(cp)
print(f"iLQR oracle cost {oracle.cost:.3f} at H = {H}")

for method in ("hybrid", "random-shooting", "cem", "mppi"):
    res = run_method(method, cp, BaselineConfig(method=method, budget=budget, seed=0))
    gap = measure_gap(res, oracle, H)
    print(f"{method:16s} cost {res.cost:8.3f}  gap {gap.normalized_gap:+.4f}  rollouts {res.evaluations}")
