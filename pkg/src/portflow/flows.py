"""Daily flow records and their dense per-route views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

__all__ = ["FlowSeries", "merge_series"]

COLUMNS = ["date", "origin", "destination", "good", "tons"]


@dataclass(frozen=True)
class FlowSeries:
    """Aggregated (date, origin, destination, good, tons) records.

    Dense daily views are derived on demand; dates absent from the records
    are zeros (the data are event records).
    """

    frame: pd.DataFrame

    def __post_init__(self):
        df = self.frame
        missing = [c for c in COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"flow frame is missing columns {missing}")
        df = df[COLUMNS].copy()
        df["date"] = pd.to_datetime(df["date"])
        df["tons"] = df["tons"].astype(float)
        if np.any(df["tons"].to_numpy() < 0.0):
            raise ValueError("flow quantities must be >= 0")
        if len(df):
            df = (df.groupby(["date", "origin", "destination", "good"],
                             as_index=False, sort=True)["tons"].sum())
        object.__setattr__(self, "frame", df)

    @classmethod
    def from_records(cls, records) -> "FlowSeries":
        return cls(pd.DataFrame(records, columns=COLUMNS))

    @classmethod
    def empty(cls) -> "FlowSeries":
        return cls(pd.DataFrame(columns=COLUMNS))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def is_empty(self) -> bool:
        return len(self.frame) == 0

    @property
    def dates(self) -> pd.DatetimeIndex:
        """Dense daily index covering the record range (empty if no records)."""
        if self.is_empty:
            return pd.DatetimeIndex([])
        return pd.date_range(self.frame["date"].min(), self.frame["date"].max(),
                             freq="D")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def goods(self) -> list[str]:
        return sorted(self.frame["good"].unique())

    @property
    def labels(self) -> list[str]:
        ports = set(self.frame["origin"]) | set(self.frame["destination"])
        return sorted(ports)

    def restrict(self, start=None, end=None) -> "FlowSeries":
        """Records within [start, end] (either bound optional)."""
        df = self.frame
        if start is not None:
            df = df[df["date"] >= pd.Timestamp(start)]
        if end is not None:
            df = df[df["date"] <= pd.Timestamp(end)]
        return FlowSeries(df.reset_index(drop=True))

    def _dense(self, mask: pd.Series) -> np.ndarray:
        dates = self.dates
        sub = self.frame[mask]
        grouped = sub.groupby("date")["tons"].sum()
        return grouped.reindex(dates, fill_value=0.0).to_numpy()

    def route_series(self, origin: str, destination: str, good: str) -> np.ndarray:
        """Daily tons shipped origin -> destination for one good."""
        df = self.frame
        mask = ((df["origin"] == origin) & (df["destination"] == destination)
                & (df["good"] == good))
        return self._dense(mask)

    def inflow_series(self, destination: str, good: str | None = None) -> np.ndarray:
        """Daily total tons arriving at a destination.

        With ``good`` set, only that good's inflow; otherwise all goods.
        """
        df = self.frame
        mask = df["destination"] == destination
        if good is not None:
            mask &= df["good"] == good
        return self._dense(mask)


def merge_series(*series: FlowSeries) -> FlowSeries:
    """Concatenate record sets; overlapping keys are summed."""
    frames = [s.frame for s in series if not s.is_empty]
    if not frames:
        return FlowSeries.empty()
    return FlowSeries(pd.concat(frames, ignore_index=True))
