"""Counter-based random streams keyed by (seed, stream id).

Every chunk of work draws from its own Philox stream, so results do not depend
on how chunks are distributed over workers.
"""

import numpy as np


def stream(seed, stream_id):
    """Return an independent generator for ``(seed, stream_id)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def chunk_bounds(n, chunk_size):
    """Split ``range(n)`` into fixed-size chunks ``[(start, stop), ...]``."""
    return [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
