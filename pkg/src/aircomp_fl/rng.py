"""Keyed random streams.

Every random quantity in a run is drawn from a generator derived from
``(master seed, purpose, round, device)`` so results do not depend on the
order in which devices or schemes are evaluated.
"""
from __future__ import annotations

import enum

import numpy as np

# Device slot used for quantities owned by the parameter server.
SERVER = 2**31 - 1


class Purpose(enum.IntEnum):
    CHANNEL_DL = 0
    CHANNEL_UP = 1
    NOISE_DL = 2
    NOISE_UP = 3
    BATCH = 4
    INIT = 5
    PARTITION = 6
    DATA = 7
    AUDIT = 8
    CALIBRATION = 9


def stream(seed: int, purpose: Purpose, round_: int = 0, device: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, round, device) cell."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & (2**64 - 1),
        spawn_key=(int(purpose), int(round_), int(device)),
    )
    return np.random.Generator(np.random.PCG64(ss))
