"""Normalized Shannon-entropy flow diversity per province per day.

The in-flow diversity of province A is the entropy of the distribution of A's
incoming trips over origin provinces, divided by log(N) with N the number of
provinces in the territory, so values live in [0, 1]. Out-flow diversity is the
mirror image over destinations. A day with no directed flow at all has no
diversity value (absent), which is different from a day with a single partner
(diversity exactly 0).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

from .od import DailyOD

DIRECTIONS = ("in", "out")


@dataclass(frozen=True)
class DiversitySeries:
    province_id: str
    direction: str
    dates: list
    values: list[float | None]

    def defined(self) -> list[float]:
        return [v for v in self.values if v is not None]


@dataclass(frozen=True)
class WeekendContrast:
    """Means of a diversity series split pre/post a date and weekday/weekend."""

    split_date: date
    pre_weekday_mean: float | None
    pre_weekend_mean: float | None
    post_weekday_mean: float | None
    post_weekend_mean: float | None
    pre_weekday_n: int
    pre_weekend_n: int
    post_weekday_n: int
    post_weekend_n: int


def flow_diversity(
    od: DailyOD,
    province_id: str,
    direction: str,
    n_provinces: int,
    include_self: bool = False,
) -> float | None:
    """Normalized entropy of one province's directed flow distribution for one day.

    Returns None when the province has no flow in that direction (absent day).
    Self-loops are excluded unless include_self is set.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if n_provinces < 2:
        raise ValueError("entropy normalization needs at least 2 provinces")
    if od.granularity != "province":
        raise ValueError("flow_diversity expects a province-granularity matrix")

    flows: list[int] = []
    for (origin, destination), count in od.cells.items():
        if not include_self and origin == destination:
            continue
        if direction == "in" and destination == province_id:
            flows.append(count)
        elif direction == "out" and origin == province_id:
            flows.append(count)
    total = sum(flows)
    if total == 0:
        return None
    entropy = 0.0
    for count in flows:
        p = count / total
        entropy -= p * math.log(p)
    return entropy / math.log(n_provinces)


def diversity_series(
    ods: Sequence[DailyOD],
    province_id: str,
    direction: str,
    n_provinces: int,
    include_self: bool = False,
) -> DiversitySeries:
    """Per-day flow_diversity over a run of daily matrices; absent days stay absent."""
    dates = [od.date for od in ods]
    values = [
        flow_diversity(od, province_id, direction, n_provinces, include_self)
        for od in ods
    ]
    return DiversitySeries(province_id=province_id, direction=direction, dates=dates, values=values)


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def weekend_contrast(series: DiversitySeries, split_date: date) -> WeekendContrast:
    """Four means over defined values: before/from split_date crossed with weekday/weekend."""
    cells: dict[tuple[bool, bool], list[float]] = {
        (False, False): [],
        (False, True): [],
        (True, False): [],
        (True, True): [],
    }
    for day, value in zip(series.dates, series.values):
        if value is None:
            continue
        post = day >= split_date
        weekend = day.weekday() >= 5
        cells[(post, weekend)].append(value)
    return WeekendContrast(
        split_date=split_date,
        pre_weekday_mean=_mean(cells[(False, False)]),
        pre_weekend_mean=_mean(cells[(False, True)]),
        post_weekday_mean=_mean(cells[(True, False)]),
        post_weekend_mean=_mean(cells[(True, True)]),
        pre_weekday_n=len(cells[(False, False)]),
        pre_weekend_n=len(cells[(False, True)]),
        post_weekday_n=len(cells[(True, False)]),
        post_weekend_n=len(cells[(True, True)]),
    )


def write_diversity_csv(series_list: Sequence[DiversitySeries], path: str | Path) -> None:
    """Long export: date,province,direction,diversity with an empty field for absent days."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "province", "direction", "diversity"])
        for series in series_list:
            for day, value in zip(series.dates, series.values):
                writer.writerow(
                    [
                        day.isoformat(),
                        series.province_id,
                        series.direction,
                        "" if value is None else repr(value),
                    ]
                )


def write_diversity_wide_csv(series_list: Sequence[DiversitySeries], path: str | Path) -> None:
    """Wide export (one row per province, one column per date) for horizon-chart tooling.

    All series must share the same date axis and direction.
    """
    if not series_list:
        raise ValueError("nothing to export")
    dates = series_list[0].dates
    for series in series_list:
        if series.dates != dates:
            raise ValueError("wide export needs a shared date axis")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["province"] + [d.isoformat() for d in dates])
        for series in sorted(series_list, key=lambda s: s.province_id):
            writer.writerow(
                [series.province_id]
                + ["" if v is None else repr(v) for v in series.values]
            )
