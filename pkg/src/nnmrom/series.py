"""Uniformly sampled multichannel time series and the dataset CSV format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidParams

CSV_FMT = "%.17g"  # round-trips float64 exactly


@dataclass(frozen=True)
class MultiChannelSeries:
    """Time history stored as ``values[n_steps, channels]``.

    ``labels`` names each channel; ``t0`` is the time of the first sample.
    """

    dt: float
    values: np.ndarray
    labels: tuple[str, ...] = field(default=())
    t0: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatch(f"values must be 2-D, got shape {values.shape}")
        if not (self.dt > 0):
            raise InvalidParams(f"dt must be positive, got {self.dt}")
        if values.shape[0] > 0 and not np.all(np.isfinite(values)):
            raise InvalidParams("series values must be finite")
        labels = tuple(self.labels) if self.labels else tuple(f"c{i}" for i in range(values.shape[1]))
        if len(labels) != values.shape[1]:
            raise DimensionMismatch(f"{len(labels)} labels for {values.shape[1]} channels")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def fs(self) -> float:
        return 1.0 / self.dt

    @property
    def time(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)

    def window(self, start: int, stop: int) -> "MultiChannelSeries":
        """Sub-series of samples ``[start, stop)`` with the time origin shifted accordingly."""
        return MultiChannelSeries(self.dt, self.values[start:stop], self.labels, self.t0 + start * self.dt)

    def select(self, channels: Sequence[int]) -> "MultiChannelSeries":
        channels = list(channels)
        return MultiChannelSeries(self.dt, self.values[:, channels], tuple(self.labels[c] for c in channels), self.t0)

    def with_values(self, values, labels=None) -> "MultiChannelSeries":
        return MultiChannelSeries(self.dt, values, labels if labels is not None else (), self.t0)


def forcing_dofs(series: MultiChannelSeries) -> list[int]:
    """Zero-based DOF indices encoded in forcing labels ``f<k>`` (k is 1-based)."""
    out = []
    for label in series.labels:
        if not label.startswith("f") or not label[1:].isdigit():
            raise InvalidParams(f"forcing label {label!r} does not name a DOF")
        out.append(int(label[1:]) - 1)
    return out


def write_dataset(path, forcing: MultiChannelSeries, response: MultiChannelSeries) -> Path:
    """Write forcing and displacement histories as ``t,f<i>...,x<j>...``."""
    if forcing.n_steps != response.n_steps:
        raise DimensionMismatch("forcing and response lengths differ")
    path = Path(path)
    table = np.column_stack([forcing.time, forcing.values, response.values])
    header = ",".join(("t",) + forcing.labels + response.labels)
    np.savetxt(path, table, fmt=CSV_FMT, delimiter=",", header=header, comments="")
    return path


def read_dataset(path) -> tuple[MultiChannelSeries, MultiChannelSeries]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise InvalidParams(f"{path}: first column must be 't'")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[0] < 2:
        raise InvalidParams(f"{path}: need at least two rows to infer dt")
    t = table[:, 0]
    dt = float(np.round((t[-1] - t[0]) / (len(t) - 1), 12))
    f_cols = [i for i, h in enumerate(header) if h.startswith("f")]
    x_cols = [i for i, h in enumerate(header) if h.startswith("x")]
    forcing = MultiChannelSeries(dt, table[:, f_cols], tuple(header[i] for i in f_cols), float(t[0]))
    response = MultiChannelSeries(dt, table[:, x_cols], tuple(header[i] for i in x_cols), float(t[0]))
    return forcing, response


def write_series_csv(path, series: MultiChannelSeries, time_label: str = "t") -> Path:
    path = Path(path)
    table = np.column_stack([series.time, series.values])
    header = ",".join((time_label,) + series.labels)
    np.savetxt(path, table, fmt=CSV_FMT, delimiter=",", header=header, comments="")
    return path
