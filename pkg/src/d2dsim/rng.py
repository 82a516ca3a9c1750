"""Deterministic random-number streams.

Every stochastic draw in the simulator comes from a named substream derived
from the scenario's 64-bit master seed.  The derivation is a SplitMix64 fold
over the substream labels, and the stream itself is numpy's PCG64.  Both
algorithms are fixed by this module's contract: changing either would change
every simulated result, so they must never be swapped silently.

Substream labels are strings or integers, e.g. ``stream(seed, "pair", "a",
"b")`` for the radio link between nodes a and b.  Identical (seed, labels)
always yields a bit-identical stream; distinct labels yield independent
streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(x: int) -> int:
    # SplitMix64 finalizer (Steele, Lea, Flood 2014).
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(master_seed: int, *labels: str | int) -> int:
    """Fold labels into the master seed, returning a 64-bit substream seed."""
    state = _mix(master_seed & _MASK64)
    for label in labels:
        if isinstance(label, int):
            data = label.to_bytes(8, "little", signed=False)
        else:
            data = str(label).encode("utf-8")
        for i in range(0, len(data), 8):
            chunk = int.from_bytes(data[i : i + 8], "little")
            state = _mix(state ^ chunk)
        state = _mix(state ^ len(data))
    return state


def stream(master_seed: int, *labels: str | int) -> np.random.Generator:
    """Return the PCG64 generator for the given substream."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *labels)))
