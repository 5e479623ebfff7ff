"""Iterative single-switch scheduling on the cartpole swing-up task.

Starting from the zero-force schedule, each iteration samples insertions in
batches of 25 and stitches the first one that lowers the cost.  The run ends
at a schedule no single insertion improves, or when the budget runs out.
"""

import math
import sys

from hybridsched import SolverConfig, build_cartpole, evaluate, solve_iterative, to_run_length

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
cp = build_cartpole()
rep = solve_iterative(cp, None, SolverConfig(seed=0, max_evaluations=budget, workers=4))

print(f"initial cost {rep.initial_cost:.3f} -> final {rep.final_cost:.3f}")
print(f"{len(rep.accepted_switches)} accepted switches, {rep.evaluations} rollouts, stop: {rep.termination}")
rec = evaluate(cp, rep.final_schedule)
print(f"terminal |cos(theta) - 1| = {abs(math.cos(rec.states[-1, 0]) - 1):.3f}")
for seg in to_run_length(rep.final_schedule):
    print(f"  steps {seg.start:3d}-{seg.start + seg.length - 1:3d}: force {cp.levels[seg.mode]:+.1f} N")
