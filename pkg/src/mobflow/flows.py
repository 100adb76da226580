"""Per-province daily in-flow, out-flow and self-flow series.

Out-flow counts trips leaving the province for any other province, in-flow
counts trips arriving from any other province, and self-flow is the province's
self-loop (trips between its own municipalities). Normalized variants divide by
the series maximum over the requested date range, so the busiest day maps to 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .od import DailyOD, TerritoryIndex


@dataclass(frozen=True)
class FlowSeries:
    province_id: str
    dates: list
    in_flow: list[int]
    out_flow: list[int]
    self_flow: list[int]
    in_norm: list[float]
    out_norm: list[float]
    self_norm: list[float]


def _normalize(values: list[int]) -> list[float]:
    # An all-zero series stays all zero rather than dividing by zero.
    peak = max(values, default=0)
    if peak == 0:
        return [0.0 for _ in values]
    return [v / peak for v in values]


def compute_flows(
    ods: Sequence[DailyOD],
    province_id: str,
    index: TerritoryIndex | None = None,
) -> FlowSeries:
    """Compute the three flow series of one province over a run of daily matrices."""
    if index is not None and province_id not in index.provinces:
        raise KeyError(f"province {province_id!r} not present in the territory index")
    dates = []
    in_flow: list[int] = []
    out_flow: list[int] = []
    self_flow: list[int] = []
    seen = set()
    for od in ods:
        if od.granularity != "province":
            raise ValueError("compute_flows expects province-granularity matrices")
        if od.date in seen:
            raise ValueError(f"duplicate date {od.date} in OD sequence")
        seen.add(od.date)
        inc = out = 0
        for (origin, destination), count in od.cells.items():
            if origin == province_id and destination != province_id:
                out += count
            elif destination == province_id and origin != province_id:
                inc += count
        dates.append(od.date)
        in_flow.append(inc)
        out_flow.append(out)
        self_flow.append(od.cells.get((province_id, province_id), 0))
    return FlowSeries(
        province_id=province_id,
        dates=dates,
        in_flow=in_flow,
        out_flow=out_flow,
        self_flow=self_flow,
        in_norm=_normalize(in_flow),
        out_norm=_normalize(out_flow),
        self_norm=_normalize(self_flow),
    )


def inter_province_total(od: DailyOD) -> int:
    """Total trips between distinct provinces on one day."""
    if od.granularity != "province":
        raise ValueError("inter_province_total expects a province-granularity matrix")
    return sum(count for (o, d), count in od.cells.items() if o != d)


def write_flow_series_csv(series: FlowSeries, path: str | Path) -> None:
    """Export one province's series as date,in,out,self,in_norm,out_norm,self_norm."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "in", "out", "self", "in_norm", "out_norm", "self_norm"])
        for i, day in enumerate(series.dates):
            writer.writerow(
                [
                    day.isoformat(),
                    series.in_flow[i],
                    series.out_flow[i],
                    series.self_flow[i],
                    repr(series.in_norm[i]),
                    repr(series.out_norm[i]),
                    repr(series.self_norm[i]),
                ]
            )
