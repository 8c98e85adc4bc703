"""Counter-based random streams keyed by (seed, stream id)."""

from __future__ import annotations

import numpy as np

RandomStream = np.random.Generator


def make_stream(seed: int, stream_id: int = 0) -> RandomStream:
    """Return a Philox-backed generator for ``(seed, stream_id)``.

    Identical keys give bit-identical draw sequences; distinct stream ids
    give statistically independent streams, so replicate ``r`` of an
    experiment can be regenerated on any worker without replaying the others.
    """
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be nonnegative")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(seq))


def as_stream(rng: RandomStream | int | None) -> RandomStream:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return make_stream(0)
    return make_stream(int(rng))
