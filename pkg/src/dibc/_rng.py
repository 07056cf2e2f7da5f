"""Deterministic random-stream derivation.

All randomness in the package flows through counter-based Philox streams
derived from a single master seed plus a small integer path: worker r's
stream is keyed on (master_seed, WORKER, r), the refinement pass for
sample t on (master_seed, REFINE, t), and so on.  Streams are therefore
independent of thread scheduling and identical across platforms.
"""

import numpy as np

# purpose codes for stream paths
PARTITION = 1
WORKER = 2
REFINE = 3
CANDIDATES = 4
PARAMS = 5
PREDICT = 6
INIT = 7


def stream(master_seed, *path):
    """Return a ``numpy.random.Generator`` keyed on (master_seed, *path)."""
    entropy = (int(master_seed),) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def worker_stream(master_seed, worker_id):
    """Stream owned by worker ``worker_id`` for its local chain."""
    return stream(master_seed, WORKER, worker_id)
