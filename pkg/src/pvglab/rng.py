"""Counter-based random streams.

Every source of randomness in a run is a named stream derived from
``(run_seed, stream_id)`` through a Philox counter-based generator, so
independent components (data, init, sampling, evaluation) never share or
perturb each other's state.  Reproducibility is statistical and holds
bit-exactly within one version of this package.
"""

import numpy as np

# Stream ids, one per consumer. Keep stable: changing them reshuffles runs.
DATA = 1
INIT = 2
GUMBEL = 3
EVAL = 4
PROBLEMS = 5


def stream(run_seed: int, stream_id: int) -> np.random.Generator:
    """Return the generator for stream ``stream_id`` of run ``run_seed``."""
    seq = np.random.SeedSequence((int(run_seed), int(stream_id)))
    return np.random.Generator(np.random.Philox(seq))
