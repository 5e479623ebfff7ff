"""Sample-based scheduling of hybrid-system modes over a finite horizon.

The core idea: start from a constant mode schedule, repeatedly search the
space of single mode insertions ``(mode, start, duration)`` for one that
lowers the rollout cost, and stop at a schedule no single insertion can
improve.  The search space is sampled in batches without replacement, so a
full sweep is never needed when an improving insertion is common.
"""

__version__ = "0.1.0"

from .errors import CandidateSpaceExhausted, ConfigError, InvalidArgument, NonFiniteStateError
from .schedule import (
    CandidateSpace,
    Segment,
    SwitchTuple,
    as_schedule,
    constant_schedule,
    from_run_length,
    stitch,
    to_run_length,
)
from .systems import Cartpole, DoubleIntegrator, HybridSystem, TableSystem, build_cartpole
from .rollout import TrajectoryRecord, evaluate, rollout_costs
from .solvers import (
    MPCState,
    SolveReport,
    SolverConfig,
    mpc_step,
    run_mpc,
    solve_iterative,
    solve_single_switch_exhaustive,
    solve_single_switch_sampled,
)
from .baselines import (
    BaselineConfig,
    BaselineResult,
    cem_categorical,
    ilqr_oracle,
    measure_gap,
    mppi_continuous,
    random_shooting,
)
