"""Deterministic substream derivation for parallel sweeps.

Every random draw in the package comes from a counter-based Philox
generator seeded through ``numpy.random.SeedSequence`` with a spawn key
``(stream_id, *indices)``, e.g. ``(seed, "cell", gamma_index)`` or
``(seed, "net", density_index, subframe_index)``.  Substreams are therefore
a pure function of the root seed and the logical coordinates of the work
item, never of worker count or scheduling order, which makes sweep outputs
byte-identical for any degree of parallelism.
"""

from __future__ import annotations

import numpy as np

# Fixed identifiers for the package's independent stream families.
_STREAM_IDS = {"cell": 1, "net": 2, "layout": 3}


def substream(seed, stream, *indices):
    """Generator for the work item addressed by ``(stream, *indices)``."""
    key = (_STREAM_IDS[stream],) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
