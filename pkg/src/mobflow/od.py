"""Daily origin-destination matrices: construction, province aggregation, flat-file persistence.

A matrix is stored sparsely as (origin, destination) -> trip count. Municipality
matrices never contain self-loops (a trip requires two distinct municipalities);
province matrices carry intra-province trips as self-loops, the province's
internal mobility.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

from .ingest import AntennaRegistry, Trip

SCHEMA_VERSION = 1
GRANULARITIES = ("municipality", "province")


class ODNotFoundError(KeyError):
    """Raised when no stored matrix exists for the requested date and granularity."""


class ODSchemaError(ValueError):
    """Raised when a stored matrix or manifest does not match the expected schema."""


class UnmappedMunicipalityError(KeyError):
    """Raised when aggregation meets a municipality absent from the territory index."""


@dataclass(frozen=True)
class TerritoryIndex:
    """Municipality/province universe with the municipality -> province mapping."""

    muni_to_province: dict[str, str]

    @property
    def municipalities(self) -> set[str]:
        return set(self.muni_to_province)

    @property
    def provinces(self) -> set[str]:
        return set(self.muni_to_province.values())

    @property
    def province_count(self) -> int:
        return len(self.provinces)

    @classmethod
    def from_registry(cls, registry: AntennaRegistry) -> "TerritoryIndex":
        return cls(muni_to_province=dict(registry.muni_to_province))


@dataclass(frozen=True)
class DailyOD:
    """Sparse daily OD matrix; cells hold strictly positive trip counts."""

    date: date
    granularity: str
    cells: dict[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        for (origin, destination), count in self.cells.items():
            if count < 1:
                raise ValueError(f"cell ({origin},{destination}) has non-positive count {count}")
            if self.granularity == "municipality" and origin == destination:
                raise ValueError(f"municipality matrix may not hold self-loop {origin!r}")

    @property
    def total_trips(self) -> int:
        return sum(self.cells.values())

    def territory_ids(self) -> set[str]:
        ids: set[str] = set()
        for origin, destination in self.cells:
            ids.add(origin)
            ids.add(destination)
        return ids


def build_daily_od(trips: Iterable[Trip], day: date) -> DailyOD:
    """Count trips into a municipality-granularity matrix for one day."""
    cells = Counter(
        (t.origin_municipality, t.destination_municipality) for t in trips
    )
    return DailyOD(date=day, granularity="municipality", cells=dict(cells))


def aggregate_to_province(od: DailyOD, index: TerritoryIndex) -> DailyOD:
    """Group municipality cells by province; intra-province trips become self-loops.

    Total trip mass is conserved exactly. A municipality missing from the index
    is a data-integrity failure and raises UnmappedMunicipalityError. Feeding a
    province matrix back in with an identity mapping is the identity.
    """
    mapping = index.muni_to_province
    cells: Counter[tuple[str, str]] = Counter()
    for (origin, destination), count in od.cells.items():
        try:
            p, q = mapping[origin], mapping[destination]
        except KeyError as exc:
            raise UnmappedMunicipalityError(
                f"municipality {exc.args[0]!r} not present in the territory index"
            ) from None
        cells[(p, q)] += count
    return DailyOD(date=od.date, granularity="province", cells=dict(cells))


def _granularity_dir(root: str | Path, granularity: str) -> Path:
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    return Path(root) / "od" / granularity


def _atomic_write(path: Path, payload: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _territory_checksum(directory: Path, dates: list[str]) -> str:
    ids: set[str] = set()
    for day in dates:
        with (directory / f"{day}.csv").open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                if row:
                    ids.add(row[0])
                    ids.add(row[1])
    digest = hashlib.sha256("\n".join(sorted(ids)).encode()).hexdigest()
    return digest


def store_daily_od(od: DailyOD, root: str | Path) -> Path:
    """Persist one matrix under od/<granularity>/<date>.csv, updating the manifest.

    Writes are atomic (temp file + rename); re-storing a date overwrites it.
    """
    directory = _granularity_dir(root, od.granularity)
    directory.mkdir(parents=True, exist_ok=True)
    day = od.date.isoformat()
    path = directory / f"{day}.csv"

    lines = ["origin,destination,count"]
    for (origin, destination), count in sorted(od.cells.items()):
        lines.append(f"{origin},{destination},{count}")
    _atomic_write(path, "\n".join(lines) + "\n")

    manifest_path = directory / "manifest.json"
    dates = set()
    if manifest_path.exists():
        dates.update(_read_manifest(manifest_path, od.granularity)["dates"])
    dates.add(day)
    ordered = sorted(dates)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "granularity": od.granularity,
        "dates": ordered,
        "territory_checksum": _territory_checksum(directory, ordered),
    }
    _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_manifest(path: Path, granularity: str) -> dict:
    with path.open() as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ODSchemaError(
            f"{path}: schema version {manifest.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    if manifest.get("granularity") != granularity:
        raise ODSchemaError(f"{path}: granularity mismatch")
    return manifest


def load_daily_od(root: str | Path, day: date, granularity: str) -> DailyOD:
    """Load one stored matrix; round-trips store_daily_od bit-exactly."""
    directory = _granularity_dir(root, granularity)
    path = directory / f"{day.isoformat()}.csv"
    if not path.exists():
        raise ODNotFoundError(f"no {granularity} OD matrix stored for {day.isoformat()}")
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        _read_manifest(manifest_path, granularity)
    cells: dict[tuple[str, str], int] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["origin", "destination", "count"]:
            raise ODSchemaError(f"{path}: unexpected header {header!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ODSchemaError(f"{path}: malformed row {row!r}")
            cells[(row[0], row[1])] = int(row[2])
    return DailyOD(date=day, granularity=granularity, cells=cells)


def list_od_dates(root: str | Path, granularity: str) -> list[date]:
    """Sorted dates with a stored matrix at the given granularity."""
    directory = _granularity_dir(root, granularity)
    if not directory.is_dir():
        return []
    days = [
        date.fromisoformat(p.stem)
        for p in directory.glob("*.csv")
    ]
    return sorted(days)


def load_all_daily_od(root: str | Path, granularity: str) -> list[DailyOD]:
    """Load every stored matrix at the given granularity, date-ordered."""
    return [load_daily_od(root, day, granularity) for day in list_od_dates(root, granularity)]
