"""Rayleigh-fading channel draws and Gaussian noise vectors."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .rng import Purpose, stream

# |h| below this is redrawn; exact zeros make the descaling step non-finite.
MIN_MAGNITUDE = 1e-9


@dataclass(frozen=True)
class ChannelDraw:
    h_dl: np.ndarray
    h_up: np.ndarray
    round: int = 0

    @property
    def K(self) -> int:
        return self.h_dl.shape[0]

    @property
    def gain_dl(self) -> np.ndarray:
        return np.abs(self.h_dl) ** 2

    @property
    def gain_up(self) -> np.ndarray:
        return np.abs(self.h_up) ** 2


def _cn01(rng: np.random.Generator, size: int) -> np.ndarray:
    h = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)
    bad = np.abs(h) < MIN_MAGNITUDE
    while np.any(bad):
        n = int(bad.sum())
        h[bad] = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        bad = np.abs(h) < MIN_MAGNITUDE
    return h


def draw_round_channels(rng: np.random.Generator, K: int, round_: int = 0) -> ChannelDraw:
    """Draw ``K`` downlink then ``K`` uplink CN(0, 1) coefficients from one stream."""
    if K < 1:
        raise ValueError("K must be >= 1")
    h_dl = _cn01(rng, K)
    h_up = _cn01(rng, K)
    return ChannelDraw(h_dl=h_dl, h_up=h_up, round=round_)


def round_channels(seed: int, round_: int, K: int) -> ChannelDraw:
    """Channels for one round, each coefficient from its own (link, round, device) stream.

    Identical for every scheme sharing ``seed``, and independent of how many
    devices are evaluated or in which order.
    """
    h_dl = np.array([_cn01(stream(seed, Purpose.CHANNEL_DL, round_, k), 1)[0] for k in range(K)])
    h_up = np.array([_cn01(stream(seed, Purpose.CHANNEL_UP, round_, k), 1)[0] for k in range(K)])
    return ChannelDraw(h_dl=h_dl, h_up=h_up, round=round_)


def gaussian_vector(rng: np.random.Generator, dim: int, per_entry_variance: float) -> np.ndarray:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if per_entry_variance < 0:
        raise ValueError("variance must be >= 0")
    if per_entry_variance == 0:
        return np.zeros(dim)
    return rng.standard_normal(dim) * np.sqrt(per_entry_variance)


CHANNEL_CSV_HEADER = ["round", "device", "re_h_dl", "im_h_dl", "re_h_up", "im_h_up"]


def write_channel_trace(path, draws: Iterable[ChannelDraw]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHANNEL_CSV_HEADER)
        for draw in draws:
            for k in range(draw.K):
                w.writerow([
                    draw.round, k,
                    repr(float(draw.h_dl[k].real)), repr(float(draw.h_dl[k].imag)),
                    repr(float(draw.h_up[k].real)), repr(float(draw.h_up[k].imag)),
                ])


def read_channel_trace(path) -> list[ChannelDraw]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["round"]), []).append(row)
    out = []
    for r in sorted(rows):
        items = sorted(rows[r], key=lambda x: int(x["device"]))
        h_dl = np.array([complex(float(x["re_h_dl"]), float(x["im_h_dl"])) for x in items])
        h_up = np.array([complex(float(x["re_h_up"]), float(x["im_h_up"])) for x in items])
        out.append(ChannelDraw(h_dl=h_dl, h_up=h_up, round=r))
    return out
