"""Joint SDN controller synchronization and placement under a sync budget.

A discrete-time simulator of a multi-domain software-defined network where a
focal controller must decide, every step, which neighbor domains to pull
fresh state from (at most a fixed budget of syncs per step) and, every
`tau` steps, which candidate site should host the controller.  A double
deep Q-learning scheduler learns both decisions jointly and is compared
against round-robin and random baselines.
"""

import os

# Keep BLAS single-threaded: replicas are parallelized at the process level
# and oversubscription hurts more than it helps at these matrix sizes.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

__version__ = "0.1.0"
