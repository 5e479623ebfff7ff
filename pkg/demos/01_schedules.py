"""Schedules, single-switch insertions and the candidate space.

A schedule is one mode id per time step.  A switch ``(mode, start, duration)``
overwrites the window ``[start, start + duration)`` with ``mode``.  The solver
samples such switches without replacement from a finite candidate space.
"""

from hybridsched import CandidateSpace, SwitchTuple, constant_schedule, stitch, to_run_length

horizon, modes = 8, 3
base = constant_schedule(0, horizon)
print("base schedule      ", base.tolist())

sw = SwitchTuple(mode=2, start=3, duration=4)
new = stitch(base, sw)
print("after", tuple(sw), new.tolist())
print("run-length form    ", [(s.mode, s.start, s.length) for s in to_run_length(new)])

space = CandidateSpace(modes, horizon, seed=0)
print(f"candidate space size {len(space)} = {modes} * {horizon}*{horizon + 1}/2")
batch = space.draw_batch(5)
print("first sampled batch", [tuple(c) for c in batch])
print("remaining after draw", space.remaining)
