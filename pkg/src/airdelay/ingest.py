"""BTS on-time panel ingestion: schema checks, row validation, and filtering.

The unit of observation is one airport-carrier-month row from the BTS
"Airline On-Time Statistics and Delay Causes" download: a monthly arrival
count, the number of arrivals delayed >= 15 minutes, and that delayed count
apportioned across five causes (carrier, weather, NAS, security, late
aircraft).  BTS apportions fractionally, so per-cause counts are reals and
their sum must reproduce the delayed count up to publication rounding.

Filtering follows the study pipeline: drop empty rows at parse time, apply
a monthly-volume threshold, require a minimum number of reported months per
airport-carrier pair, and optionally truncate to a pre-pandemic epoch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

__all__ = [
    "STUDY_START",
    "STUDY_END",
    "STUDY_MONTHS",
    "CAUSE_SUM_TOLERANCE",
    "MANDATORY_COLUMNS",
    "SchemaError",
    "RowError",
    "ConfigurationError",
    "EmptyCorpusError",
    "ObservationRecord",
    "FilterConfig",
    "CorpusStats",
    "ParseResult",
    "month_index",
    "parse_year_month",
    "format_year_month",
    "parse_bts_csv",
    "write_normalized_csv",
    "apply_volumetric_filter",
    "apply_continuity_filter",
    "split_epoch",
    "summarize_corpus",
]

STUDY_START = (2010, 1)
STUDY_END = (2024, 12)
STUDY_MONTHS = 180

# Five apportioned causes are published rounded to 2 decimals; the worst-case
# accumulated rounding error across five addends is just over 0.5.
CAUSE_SUM_TOLERANCE = 0.51

MANDATORY_COLUMNS = (
    "year",
    "month",
    "airport",
    "carrier",
    "arr_flights",
    "arr_del15",
    "carrier_ct",
    "weather_ct",
    "nas_ct",
    "security_ct",
    "late_aircraft_ct",
)

_CAUSE_COLUMNS = ("carrier_ct", "weather_ct", "nas_ct", "security_ct", "late_aircraft_ct")


class SchemaError(ValueError):
    """A mandatory column is missing from the input header."""


class RowError(ValueError):
    """A data cell could not be parsed; message carries the 1-based line number."""


class ConfigurationError(ValueError):
    """A filter or epoch setting falls outside the study window."""


class EmptyCorpusError(ValueError):
    """An operation that needs at least one record received none."""


def month_index(year: int, month: int) -> int:
    """Map a calendar (year, month) to the study month index 0..179."""
    if not (STUDY_START <= (year, month) <= STUDY_END) or not 1 <= month <= 12:
        raise ConfigurationError(
            f"{year}-{month:02d} outside study window "
            f"{format_year_month(STUDY_START)}..{format_year_month(STUDY_END)}"
        )
    return (year - STUDY_START[0]) * 12 + (month - 1)


def parse_year_month(text: str) -> tuple[int, int]:
    """Parse 'YYYY-MM' into a (year, month) pair."""
    try:
        year_s, month_s = text.strip().split("-")
        year, month = int(year_s), int(month_s)
    except ValueError as exc:
        raise ConfigurationError(f"expected YYYY-MM, got {text!r}") from exc
    if not 1 <= month <= 12:
        raise ConfigurationError(f"month out of range in {text!r}")
    return year, month


def format_year_month(ym: tuple[int, int]) -> str:
    return f"{ym[0]:04d}-{ym[1]:02d}"


@dataclass(frozen=True)
class ObservationRecord:
    """One airport-carrier-month row of the on-time panel."""

    year: int
    month: int
    airport: str
    carrier: str
    arr_flights: float
    arr_del15: float
    carrier_ct: float
    weather_ct: float
    nas_ct: float
    security_ct: float
    late_aircraft_ct: float

    @property
    def month_idx(self) -> int:
        return month_index(self.year, self.month)

    @property
    def cause_sum(self) -> float:
        return (
            self.carrier_ct
            + self.weather_ct
            + self.nas_ct
            + self.security_ct
            + self.late_aircraft_ct
        )

    def violation(self) -> str | None:
        """Return a description of the first violated invariant, or None."""
        if not (STUDY_START <= (self.year, self.month) <= STUDY_END) or not 1 <= self.month <= 12:
            return f"date {self.year}-{self.month:02d} outside study window"
        numeric = (
            self.arr_flights,
            self.arr_del15,
            self.carrier_ct,
            self.weather_ct,
            self.nas_ct,
            self.security_ct,
            self.late_aircraft_ct,
        )
        if any(not math.isfinite(v) or v < 0 for v in numeric):
            return "negative or non-finite count"
        if self.arr_del15 > self.arr_flights:
            return (
                f"arr_del15 {self.arr_del15} exceeds arr_flights {self.arr_flights}"
            )
        if abs(self.cause_sum - self.arr_del15) > CAUSE_SUM_TOLERANCE:
            return (
                f"cause counts sum to {self.cause_sum:.2f}, "
                f"arr_del15 is {self.arr_del15:.2f}"
            )
        return None


@dataclass
class FilterConfig:
    """Volume, continuity and epoch settings for one pipeline run."""

    volumetric_threshold: int = 100
    min_months: int = 36
    epoch_end: tuple[int, int] | None = None

    def __post_init__(self):
        if self.volumetric_threshold < 0:
            raise ConfigurationError("volumetric_threshold must be >= 0")
        if not 0 < self.min_months <= STUDY_MONTHS:
            raise ConfigurationError("min_months must be in 1..study length")


@dataclass
class CorpusStats:
    """Aggregate totals for a filtered record set."""

    total_flights: float
    total_delays: float
    record_count: int
    airport_count: int
    carrier_count: int
    delay_rate: float


@dataclass
class ParseResult:
    """Parsed records plus the rows dropped or rejected along the way.

    ``skipped_empty`` counts rows whose arr_flights cell was blank (carriers
    that filed no data for the month); ``skipped_zero`` counts rows with
    zero arrivals, dropped as the n > 0 first refinement level.
    ``rejected`` holds (line, reason) pairs for rows violating record
    invariants.
    """

    records: list[ObservationRecord]
    skipped_empty: int = 0
    skipped_zero: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)


def parse_bts_csv(path) -> ParseResult:
    """Parse one BTS on-time CSV into validated observation records.

    The header must contain every mandatory column (case-insensitive; extra
    columns are ignored).  Rows with a blank arr_flights are dropped and
    tallied.  Rows that parse but violate a record invariant are rejected
    and reported with their line number.

    Raises SchemaError when a mandatory column is missing and RowError when
    a numeric cell cannot be parsed.
    """
    with open(path, newline="", encoding="utf-8-sig") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        positions = {name.strip().lower(): i for i, name in enumerate(header)}
        for column in MANDATORY_COLUMNS:
            if column not in positions:
                raise SchemaError(f"{path}: missing mandatory column {column!r}")
        idx = {column: positions[column] for column in MANDATORY_COLUMNS}

        result = ParseResult(records=[])
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if not row[idx["arr_flights"]].strip():
                result.skipped_empty += 1
                continue
            try:
                record = ObservationRecord(
                    year=int(row[idx["year"]]),
                    month=int(row[idx["month"]]),
                    airport=row[idx["airport"]].strip(),
                    carrier=row[idx["carrier"]].strip(),
                    arr_flights=float(row[idx["arr_flights"]]),
                    arr_del15=float(row[idx["arr_del15"]]),
                    carrier_ct=float(row[idx["carrier_ct"]]),
                    weather_ct=float(row[idx["weather_ct"]]),
                    nas_ct=float(row[idx["nas_ct"]]),
                    security_ct=float(row[idx["security_ct"]]),
                    late_aircraft_ct=float(row[idx["late_aircraft_ct"]]),
                )
            except (ValueError, IndexError) as exc:
                raise RowError(f"{path}: line {line}: {exc}") from None
            if record.arr_flights == 0:
                result.skipped_zero += 1
                continue
            reason = record.violation()
            if reason is not None:
                result.rejected.append((line, reason))
                continue
            result.records.append(record)
    return result


def write_normalized_csv(records, path) -> None:
    """Write records in the normalized schema (mandatory columns + month_idx).

    Floats are written with repr so a parse -> write -> parse cycle is
    bit-exact for every retained field.
    """
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(MANDATORY_COLUMNS) + ["month_idx"])
        for r in records:
            writer.writerow(
                [
                    r.year,
                    r.month,
                    r.airport,
                    r.carrier,
                    repr(r.arr_flights),
                    repr(r.arr_del15),
                    repr(r.carrier_ct),
                    repr(r.weather_ct),
                    repr(r.nas_ct),
                    repr(r.security_ct),
                    repr(r.late_aircraft_ct),
                    r.month_idx,
                ]
            )


def apply_volumetric_filter(records, threshold: int):
    """Keep records meeting the monthly-volume threshold, preserving order.

    A threshold of 0 selects the "n > 0" refinement level: records with zero
    arrivals are dropped.  Positive thresholds keep arr_flights >= threshold.
    """
    if threshold < 0:
        raise ConfigurationError("threshold must be >= 0")
    if threshold == 0:
        return [r for r in records if r.arr_flights > 0]
    return [r for r in records if r.arr_flights >= threshold]


def apply_continuity_filter(records, min_months: int):
    """Keep airport-carrier pairs reporting at least min_months distinct months.

    Months need not be consecutive; a surviving pair keeps all its records.
    """
    months_by_pair: dict[tuple[str, str], set[int]] = {}
    for r in records:
        months_by_pair.setdefault((r.airport, r.carrier), set()).add(r.month_idx)
    keep = {pair for pair, months in months_by_pair.items() if len(months) >= min_months}
    return [r for r in records if (r.airport, r.carrier) in keep]


def split_epoch(records, epoch_end: tuple[int, int]):
    """Keep records dated at or before epoch_end (inclusive)."""
    if not STUDY_START <= epoch_end <= STUDY_END or not 1 <= epoch_end[1] <= 12:
        raise ConfigurationError(
            f"epoch_end {format_year_month(epoch_end)} outside study window"
        )
    return [r for r in records if (r.year, r.month) <= epoch_end]


def summarize_corpus(records) -> CorpusStats:
    """Totals and distinct-entity counts for a record set."""
    records = list(records)
    if not records:
        raise EmptyCorpusError("cannot summarize an empty corpus")
    total_flights = sum(r.arr_flights for r in records)
    total_delays = sum(r.arr_del15 for r in records)
    return CorpusStats(
        total_flights=total_flights,
        total_delays=total_delays,
        record_count=len(records),
        airport_count=len({r.airport for r in records}),
        carrier_count=len({r.carrier for r in records}),
        delay_rate=total_delays / total_flights if total_flights > 0 else 0.0,
    )
