"""Deterministic random streams for bootstrap, permutation, and simulation.

Every random draw in the package comes from a counter-based Philox
generator keyed by a ``(seed, domain, index)`` triple.  A stream is a pure
function of its key, so any subset of work items can be recomputed in any
order, on any number of workers, and reproduce identical results.  The
domain tag keeps independent uses of the same user seed from colliding.
"""

import numpy as np

PBJ_DRAWS = 1
SPBJ_DRAWS = 2
PERMUTATIONS = 3
SIM_COVARIATES = 4
SIM_FIELDS = 5
SIM_SPHERES = 6
NOISE_FIELD = 7

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 48


def stream(seed, domain, index=0):
    """Return a fresh ``numpy.random.Generator`` for one work item.

    Calling this twice with the same arguments yields generators that
    produce identical sequences.
    """
    index = int(index)
    if index < 0 or index >= (1 << _INDEX_BITS):
        raise ValueError(f"stream index out of range: {index}")
    key = np.array(
        [int(seed) & _MASK64, ((int(domain) << _INDEX_BITS) | index) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed, *path):
    """Derive a child seed from a master seed and a path of integers.

    Used to give every simulation (and every method arm inside it) its own
    64-bit seed without the caller having to manage counters.
    """
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])
