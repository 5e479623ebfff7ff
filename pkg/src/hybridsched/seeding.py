"""Counter-based seed derivation.

``derive_seed(master, i, j, ...)`` hashes the master seed together with any
number of non-negative counters through :class:`numpy.random.SeedSequence`
and returns a 63-bit integer.  Repetitions, methods and MPC steps each get
their own counter, so runs are independent yet reproducible and do not
depend on execution order.
"""

import numpy as np


def derive_seed(master: int, *counters: int) -> int:
    state = np.random.SeedSequence([int(master), *map(int, counters)]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
