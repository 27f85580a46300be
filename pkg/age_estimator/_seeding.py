"""Named random sub-streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np

# Every stochastic component draws from exactly one of these
STREAMS = frozenset({
    "admission",  # queue admission coins
    "controls",
    "dynamics",  # process noise
    "init",  # network weights
    "initial_state",
    "network_params",  # time-varying (p, q) draws
    "noisy_age",
    "replay",
    "service",  # queue service-completion coins
})


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return the generator for stream `name` under `seed`.

    Extra integer keys (episode index, worker index, ...) select independent
    children of the same stream, so one stream can be varied without
    disturbing the others.
    """
    if name not in STREAMS:
        raise ValueError(f"unknown random stream {name!r}")
    spawn_key = (zlib.crc32(name.encode()), *keys)
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=spawn_key),
    )
