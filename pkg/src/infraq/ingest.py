"""Per-tract input table: schema, loading, validation and feature matrices.

One UTF-8 CSV per city with the header::

    geoid,city,road_pct,rail_pct,house_age_pct,park_pct,walkability,
    poi_density,heat_days,pm25_days,median_income

Proportion features are percentages in [0, 100]. An empty ``median_income``
cell means the income is unknown; every other numeric cell is mandatory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateGeoid,
    EmptyInput,
    MissingColumn,
    NonNumericCell,
    OutOfRange,
    RaggedRow,
)

FEATURES = ("road_pct", "rail_pct", "house_age_pct", "park_pct", "walkability", "poi_density")
HAZARDS = ("heat_days", "pm25_days")
COLUMNS = ("geoid", "city") + FEATURES + HAZARDS + ("median_income",)

# (low, high) inclusive; None = unbounded
BOUNDS = {
    "road_pct": (0.0, 100.0),
    "rail_pct": (0.0, 100.0),
    "house_age_pct": (0.0, 100.0),
    "park_pct": (0.0, 100.0),
    "walkability": (1.0, 20.0),
    "poi_density": (0.0, None),
    "heat_days": (0.0, None),
    "pm25_days": (0.0, None),
    "median_income": (0.0, None),
}


@dataclass(frozen=True)
class TractRecord:
    geoid: str
    city: str
    road_pct: float
    rail_pct: float
    house_age_pct: float
    park_pct: float
    walkability: float
    poi_density: float
    heat_days: float
    pm25_days: float
    median_income: float | None = None

    def features(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURES)

    def hazards(self) -> tuple[float, float]:
        return (self.heat_days, self.pm25_days)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    geoids: tuple[str, ...]
    feature_names: tuple[str, ...] = FEATURES

    def __post_init__(self):
        if self.values.shape != (len(self.geoids), len(self.feature_names)):
            raise ValueError("feature matrix shape does not match geoids/feature names")

    def __len__(self) -> int:
        return len(self.geoids)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]


def check_bounds(name: str, value: float, row: int | None = None) -> None:
    low, high = BOUNDS[name]
    where = f" (row {row})" if row is not None else ""
    if not math.isfinite(value):
        raise OutOfRange(f"{name}={value!r}{where} is not finite")
    if low is not None and value < low:
        raise OutOfRange(f"{name}={value!r}{where} below lower bound {low}")
    if high is not None and value > high:
        raise OutOfRange(f"{name}={value!r}{where} above upper bound {high}")


def _parse(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise NonNumericCell(row, column, raw) from None
    if math.isnan(value):
        raise NonNumericCell(row, column, raw)
    return value


def load_tracts(path: str | Path, city: str | None = None) -> list[TractRecord]:
    """Read and validate one city's tract table.

    Rows keep file order. When ``city`` is given it overrides the ``city``
    column, which lets one file be analysed under a different label.
    Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in COLUMNS:
            if column not in header:
                raise MissingColumn(column)
        records = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=1):
            # DictReader keys surplus cells under None and fills missing ones with None
            if None in row:
                raise RaggedRow(f"row {row_no} has more than {len(header)} cells")
            if any(v is None for v in row.values()):
                raise RaggedRow(f"row {row_no} has fewer than {len(header)} cells")
            geoid = row["geoid"].strip()
            if geoid in seen:
                raise DuplicateGeoid(f"geoid {geoid!r} repeated at row {row_no}")
            seen.add(geoid)
            values = {}
            for name in FEATURES + HAZARDS:
                values[name] = _parse(row[name].strip(), row_no, name)
                check_bounds(name, values[name], row_no)
            income_raw = row["median_income"].strip()
            income = None
            if income_raw != "":
                income = _parse(income_raw, row_no, "median_income")
                check_bounds("median_income", income, row_no)
            records.append(
                TractRecord(
                    geoid=geoid,
                    city=city if city is not None else row["city"],
                    median_income=income,
                    **values,
                )
            )
    return records


def write_tracts(records: Iterable[TractRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for rec in records:
            row = []
            for f in fields(TractRecord):
                value = getattr(rec, f.name)
                if value is None:
                    row.append("")
                elif isinstance(value, float):
                    row.append(repr(value))
                else:
                    row.append(value)
            writer.writerow(row)


def feature_matrix(records: Sequence[TractRecord]) -> FeatureMatrix:
    if len(records) == 0:
        raise EmptyInput("no records to build a feature matrix from")
    values = np.array([rec.features() for rec in records], dtype=np.float64)
    return FeatureMatrix(values=values, geoids=tuple(rec.geoid for rec in records))


def hazard_matrix(records: Sequence[TractRecord]) -> np.ndarray:
    if len(records) == 0:
        raise EmptyInput("no records")
    return np.array([rec.hazards() for rec in records], dtype=np.float64)


def incomes(records: Sequence[TractRecord]) -> np.ndarray:
    """Median incomes with NaN for missing values."""
    return np.array(
        [np.nan if rec.median_income is None else rec.median_income for rec in records],
        dtype=np.float64,
    )
