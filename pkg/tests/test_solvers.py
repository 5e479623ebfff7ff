import math

import numpy as np
import pytest

from hybridsched.errors import InvalidArgument
from hybridsched.rollout import evaluate
from hybridsched.schedule import CandidateSpace, SwitchTuple, constant_schedule, stitch
from hybridsched.solvers import (
    MPCState,
    RolloutObjective,
    SolverConfig,
    mpc_step,
    run_mpc,
    shift_warm_start,
    solve_iterative,
    solve_single_switch_exhaustive,
    solve_single_switch_sampled,
)
from hybridsched.systems import TableSystem, build_cartpole

from oracles import best_single_switch, candidate_tuples, global_optimum, stitch_ref, table_cost

EPS = 1e-9


def random_table(seed, M=2, T=6, S=5):
    return TableSystem.random(np.random.default_rng(seed), S, M, T)


def oracle_cost(table):
    return lambda sched: table_cost(table.transitions, table.costs, int(table.initial_state[0]), sched)


def random_base(seed, table):
    return np.random.default_rng(seed + 1000).integers(0, table.mode_count, table.horizon)


class PlantedObjective:
    """Cost 1 for every candidate except one planted improving index."""

    def __init__(self, space, planted, base_cost=1.0):
        self.space = space
        self.planted = planted
        self.base_cost = base_cost
        self.evaluations = 0
        self.calls = []

    def __call__(self, indices):
        indices = np.asarray(indices)
        self.evaluations += indices.size
        self.calls.append(indices.copy())
        return np.where(indices == self.planted, 0.0, self.base_cost)


# ---------------------------------------------------------------- exhaustive


@pytest.mark.parametrize("seed", range(40))
def test_exhaustive_matches_brute_force(seed):
    table = random_table(seed, T=int(seed % 5) + 2)
    base = random_base(seed, table)
    cost = oracle_cost(table)
    best, argmins = best_single_switch(cost, list(base), table.mode_count)
    found = solve_single_switch_exhaustive(table, base)
    if best < cost(list(base)) - EPS:
        assert found is not None
        assert tuple(found[0]) == min(argmins)  # lexicographic tie-break
        assert found[1] == best
    else:
        assert found is None


def test_exhaustive_counts_exactly_z():
    table = random_table(3, M=3, T=7)
    obj = RolloutObjective(table, random_base(3, table))
    solve_single_switch_exhaustive(table, obj.base, objective=obj)
    assert obj.evaluations == 3 * 7 * 8 // 2


def test_exhaustive_finds_planted_candidate():
    space = CandidateSpace(2, 5)
    planted = space.tuple_to_index(SwitchTuple(1, 2, 2))
    obj = PlantedObjective(space, planted)
    table = random_table(0, T=5)
    assert solve_single_switch_exhaustive(table, np.zeros(5, int), objective=obj) == (SwitchTuple(1, 2, 2), 0.0)


def test_exhaustive_none_at_local_optimum():
    table = random_table(5)
    report = solve_iterative(table, None, SolverConfig(), inner="exhaustive")
    assert solve_single_switch_exhaustive(table, report.final_schedule) is None


def test_exhaustive_ranks_divergent_candidates_last():
    class Poison(TableSystem):
        def step_batch(self, x, k, modes):
            out = super().step_batch(x, k, modes)
            out[modes == 1] = np.inf
            return out

    poison = Poison(horizon=3, transitions=np.array([[0, 0]]), costs=np.array([1.0]))
    assert solve_single_switch_exhaustive(poison, [0, 0, 0]) is None


# ---------------------------------------------------------------- sampled


def unique_optimum_instances(count, M=2, T=5):
    found, seed = [], 0
    while len(found) < count:
        table = random_table(seed, M=M, T=T)
        base = random_base(seed, table)
        cost = oracle_cost(table)
        best, argmins = best_single_switch(cost, list(base), M)
        if len(argmins) == 1 and best < cost(list(base)) - EPS:
            found.append((table, base, argmins[0]))
        seed += 1
    return found


@pytest.mark.parametrize("case", range(25))
def test_full_batch_equals_exhaustive(case):
    table, base, expected = unique_optimum_instances(25)[case]
    Z = CandidateSpace(table.mode_count, table.horizon).total
    cfg = SolverConfig(batch_size=Z, policy="best-of-batch", seed=case)
    got = solve_single_switch_sampled(table, base, cfg)
    assert tuple(got[0]) == expected
    assert got == solve_single_switch_exhaustive(table, base)


def test_first_improvement_returns_first_hit_in_draw_order():
    table, base, _ = unique_optimum_instances(1, M=3, T=6)[0]
    cost = oracle_cost(table)
    base_cost = cost(list(base))
    cfg = SolverConfig(batch_size=4, seed=11, eval_chunk=3)
    got = solve_single_switch_sampled(table, base, cfg)
    replay = CandidateSpace(3, 6, seed=11)
    first = None
    while replay.remaining and first is None:
        for t in replay.draw_batch(4):
            if cost(stitch_ref(list(base), *t)) < base_cost - EPS:
                first = t
                break
    assert got[0] == first
    assert got[1] == cost(stitch_ref(list(base), *first))


@pytest.mark.parametrize("N", [1, 3, 4, 7, 10, 11])
def test_batch_bound_at_local_optimum(N):
    space = CandidateSpace(1, 4, seed=N)
    obj = PlantedObjective(space, planted=-1)  # nothing improves
    cfg = SolverConfig(batch_size=N, policy="best-of-batch")
    assert solve_single_switch_sampled(None, None, cfg, space, objective=obj) is None
    assert len(obj.calls) == math.ceil(10 / N)
    assert sorted(np.concatenate(obj.calls).tolist()) == list(range(10))


def test_sampled_respects_budget():
    space = CandidateSpace(1, 4, seed=0)
    obj = PlantedObjective(space, planted=-1)
    cfg = SolverConfig(batch_size=3, max_evaluations=7)
    assert solve_single_switch_sampled(None, None, cfg, space, objective=obj) is None
    assert obj.evaluations == 7


def test_best_of_batch_tie_break_is_lowest_index():
    space = CandidateSpace(2, 3, seed=0)

    class Flat(PlantedObjective):
        def __call__(self, indices):
            self.evaluations += len(indices)
            return np.zeros(len(indices))

    obj = Flat(space, planted=None)
    cfg = SolverConfig(batch_size=space.total, policy="best-of-batch")
    sw, c = solve_single_switch_sampled(None, None, cfg, space, objective=obj)
    assert sw == SwitchTuple(0, 0, 1) and c == 0.0


def test_worker_count_does_not_change_results():
    cp = build_cartpole(horizon=25)
    a = solve_iterative(cp, None, SolverConfig(seed=4, eval_chunk=16, workers=1))
    b = solve_iterative(cp, None, SolverConfig(seed=4, eval_chunk=16, workers=4))
    assert a.final_schedule.tolist() == b.final_schedule.tolist()
    assert a.cost_history == b.cost_history
    assert a.evaluations == b.evaluations


def test_objective_costs_equal_evaluate():
    cp = build_cartpole(horizon=15)
    base = np.random.default_rng(0).integers(0, 5, 15)
    obj = RolloutObjective(cp, base, chunk=7)
    idx = np.arange(obj.space.total)
    costs = obj(idx)
    for i in range(0, obj.space.total, 37):
        sw = obj.space.index_to_tuple(i)
        assert costs[i] == evaluate(cp, stitch(base, sw)).total_cost


# ---------------------------------------------------------------- iterative


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("inner", ["exhaustive", "sampled"])
def test_iterative_reaches_certified_local_optimum(seed, inner):
    table = random_table(seed)
    cost = oracle_cost(table)
    report = solve_iterative(table, random_base(seed, table), SolverConfig(seed=seed, batch_size=5), inner)
    final = list(report.final_schedule)
    assert report.termination == "fixed-point"
    assert report.final_cost == cost(final)
    best, _ = best_single_switch(cost, final, table.mode_count)
    assert not best < cost(final) - EPS
    assert report.final_cost >= global_optimum(cost, table.horizon, table.mode_count)
    history = [report.initial_cost, *report.cost_history]
    assert all(b < a - EPS for a, b in zip(history, history[1:]))


def test_initial_optimal_schedule_is_fixed_point():
    table = TableSystem(horizon=4, transitions=np.array([[0, 0]]), costs=np.array([0.0]))
    report = solve_iterative(table, [0, 1, 0, 1])
    assert report.accepted_switches == [] and report.termination == "fixed-point"
    assert report.final_cost == 0.0


def test_iteration_cap():
    table = random_table(2)
    report = solve_iterative(table, random_base(2, table), SolverConfig(max_iterations=1))
    assert len(report.accepted_switches) <= 1
    if report.accepted_switches:
        assert report.termination == "iteration-cap"


def test_evaluation_budget_exhausted():
    cp = build_cartpole(horizon=30)
    report = solve_iterative(cp, None, SolverConfig(max_evaluations=60, seed=0))
    assert report.termination == "exhausted"
    assert report.evaluations <= 60


def test_exhaustive_evaluation_accounting():
    table = random_table(9)
    report = solve_iterative(table, random_base(9, table), inner="exhaustive")
    Z = CandidateSpace(2, 6).total
    # one base rollout per schedule visited plus Z candidates per inner call
    n = len(report.accepted_switches)
    assert report.evaluations == (n + 1) * (Z + 1)
    assert report.evaluation_history[0] == 1
    assert report.evaluations >= len(report.cost_history)


def test_report_csv():
    report = solve_iterative(chain_table(8), [1] * 8, inner="exhaustive")
    assert report.accepted_switches
    lines = report.to_csv().splitlines()
    assert lines[0] == "iter,accepted_mode,mu,nu,cost,evaluations"
    assert lines[1].startswith("0,,,,")
    assert len(lines) == 2 + len(report.accepted_switches)
    sw = report.accepted_switches[0]
    assert lines[2].split(",")[:4] == ["1", str(sw.mode), str(sw.start), str(sw.duration)]


def test_seeded_solves_repeat():
    cp = build_cartpole(horizon=20)
    a = solve_iterative(cp, None, SolverConfig(seed=3))
    b = solve_iterative(cp, None, SolverConfig(seed=3))
    assert a.to_csv() == b.to_csv()


@pytest.mark.parametrize(
    "kwargs", [dict(batch_size=0), dict(tolerance=-1.0), dict(policy="greedy"), dict(max_evaluations=0)]
)
def test_config_validation(kwargs):
    with pytest.raises(InvalidArgument):
        SolverConfig(**kwargs)


def test_unknown_inner_rejected():
    with pytest.raises(InvalidArgument):
        solve_iterative(random_table(0), None, inner="greedy")


# ---------------------------------------------------------------- MPC


def test_shift_warm_start():
    assert shift_warm_start([4, 1, 3], 2).tolist() == [1, 3, 2]


def chain_table(T):
    # state s > 0 costs 1 and mode 0 walks it toward the absorbing, free state 0
    S = 6
    trans = np.array([[max(s - 1, 0), min(s + 1, S - 1)] for s in range(S)])
    costs = np.array([0.0] + [1.0] * (S - 1))
    return TableSystem(horizon=T, transitions=trans, costs=costs, initial_state=np.array([4.0]))


def test_mpc_executes_plan_prefix_in_static_setting():
    table = chain_table(12)
    open_loop = solve_iterative(table, None, inner="exhaustive").final_schedule
    res = run_mpc(table, 12, 12, SolverConfig(), inner="exhaustive")
    assert res.executed.tolist()[:4] == open_loop.tolist()[:4] == [0, 0, 0, 0]
    assert res.cumulative_cost == evaluate(table, open_loop).total_cost


def test_mpc_episode_length_and_cost():
    cp = build_cartpole()
    res = run_mpc(cp, 10, 15, SolverConfig(max_evaluations=200))
    assert res.executed.size == 15 and res.states.shape == (16, 4)
    assert res.cumulative_cost == evaluate(cp.with_horizon(15), res.executed).total_cost
    assert res.flagged_steps == []


def test_mpc_falls_back_on_divergent_plan():
    cp = build_cartpole()

    def broken(model, warm, seed):
        return np.zeros(model.horizon, int), float("inf"), 1

    state = MPCState.create(cp, 5, SolverConfig(), planner=broken)
    mode, state = mpc_step(state, cp.initial_state)
    assert mode == cp.default_mode and state.last_flagged
    assert state.warm_start.tolist() == [cp.default_mode] * 5


def test_mpc_step_warm_start_and_seed_stream():
    cp = build_cartpole()
    seen = []

    def planner(model, warm, seed):
        seen.append(seed)
        return np.array([0, 1, 2, 3, 4]), 1.0, 5

    state = MPCState.create(cp, 5, SolverConfig(seed=9), planner=planner)
    mode, state = mpc_step(state, cp.initial_state)
    assert mode == 0 and state.warm_start.tolist() == [1, 2, 3, 4, cp.default_mode]
    mpc_step(state, cp.initial_state)
    assert len(set(seen)) == 2
