"""Deterministic randomness for the whole package.

Every random draw anywhere in causalloop flows from one integer seed
through numpy's Philox bit generator (Philox 4x64, counter-based).  A
stream is addressed by ``key = (seed, stream id)`` and each tick gets its
own generator via ``.jumped(tick)``, which advances the 256-bit counter by
``tick * 2**128`` -- streams for different ticks can never overlap, and a
generator for tick t can be reconstructed at any time without replaying
ticks 0..t-1.  That property is what makes traces replayable bit for bit.

The generator identity ("philox4x64" plus a scheme version) is recorded in
trace headers; cross-check vectors for this scheme are frozen under
``tests/data/rng_vectors.json``.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "philox4x64"
SCHEME_VERSION = 1

# Stream ids; distinct consumers never share a key.
STREAM_WORLD = 1
STREAM_POLICY = 2
STREAM_SCENARIO = 3


def stream(seed: int, stream_id: int, tick: int = 0) -> np.random.Generator:
    """Generator for one (seed, stream, tick) address.

    Draws from the returned generator must happen in a fixed documented
    order; the address itself carries no draw state.
    """
    if seed < 0 or tick < 0:
        raise ValueError(f"seed and tick must be non-negative, got {seed}, {tick}")
    bitgen = np.random.Philox(key=np.array([seed, stream_id], dtype=np.uint64))
    if tick:
        bitgen = bitgen.jumped(tick)
    return np.random.Generator(bitgen)
