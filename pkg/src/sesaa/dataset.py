"""Student records, CSV ingestion and the analysis-population filters."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

COLUMNS = ("id", "lsat", "ugpa", "female", "race", "occ_mom", "occ_dad",
           "ed_mom", "ed_dad", "fam_inc", "tier", "outcome")
SES_FIELDS = ("occ_mom", "occ_dad", "ed_mom", "ed_dad", "fam_inc")
LSAT_RANGE = (11, 48)
UGPA_RANGE = (1.0, 4.0)
HOMEMAKER = "homemaker"
TIERS = (1, 2, 3, 4, 5)


class DatasetError(ValueError):
    """Fatal ingestion or filtering error."""


class Race(str, Enum):
    WHITE = "white"
    BLACK = "black"
    HISPANIC = "hispanic"
    ASIAN = "asian"
    OTHER = "other"


class OutcomeClass(IntEnum):
    DROPOUT = 0
    GRAD_NO_BAR = 1
    PASSED_FIRST = 2
    PASSED_LATER = 3
    FAILED_BAR = 4

    @property
    def token(self) -> str:
        return OUTCOME_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "OutcomeClass":
        try:
            return _TOKEN_TO_OUTCOME[token]
        except KeyError:
            raise ValueError(f"unknown outcome token {token!r}") from None


OUTCOME_TOKENS = {
    OutcomeClass.DROPOUT: "dropout",
    OutcomeClass.GRAD_NO_BAR: "grad_no_bar",
    OutcomeClass.PASSED_FIRST: "passed_first",
    OutcomeClass.PASSED_LATER: "passed_later",
    OutcomeClass.FAILED_BAR: "failed_bar",
}
_TOKEN_TO_OUTCOME = {v: k for k, v in OUTCOME_TOKENS.items()}

# a SES cell is an int 1..5, None (missing) or HOMEMAKER (occupation fields only)
SesValue = Union[int, None, str]


@dataclass(frozen=True)
class SesProfile:
    occ_mom: SesValue = None
    occ_dad: SesValue = None
    ed_mom: SesValue = None
    ed_dad: SesValue = None
    fam_inc: SesValue = None

    def __post_init__(self):
        for name in SES_FIELDS:
            v = getattr(self, name)
            if v is None:
                continue
            if v == HOMEMAKER:
                if not name.startswith("occ"):
                    raise ValueError(f"{name}: homemaker is only valid for occupations")
                continue
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 1 <= v <= 5:
                raise ValueError(f"{name}: expected 1-5, got {v!r}")

    def values(self) -> tuple:
        return tuple(getattr(self, f) for f in SES_FIELDS)

    @property
    def all_missing(self) -> bool:
        """True when no component carries a 1-5 value (a lone homemaker counts as missing)."""
        return all(v is None or v == HOMEMAKER for v in self.values())


@dataclass(frozen=True)
class StudentRecord:
    id: str
    lsat: int
    ugpa: float
    female: int
    race: Race
    ses: SesProfile
    tier: int
    outcome: OutcomeClass

    def __post_init__(self):
        if not LSAT_RANGE[0] <= self.lsat <= LSAT_RANGE[1]:
            raise ValueError(f"lsat out of range: {self.lsat}")
        if not UGPA_RANGE[0] <= self.ugpa <= UGPA_RANGE[1]:
            raise ValueError(f"ugpa out of range: {self.ugpa}")
        if not 1 <= self.tier <= 6:
            raise ValueError(f"tier out of range: {self.tier}")
        if self.female not in (0, 1):
            raise ValueError(f"female must be 0/1: {self.female}")


@dataclass(frozen=True)
class RowError:
    line: int
    field: str
    message: str

    def __str__(self):
        return f"line {self.line}: {self.field}: {self.message}"


@dataclass
class ParseResult:
    records: list[StudentRecord]
    errors: list[RowError]


def _parse_ses(name: str, cell: str, missing: set) -> SesValue:
    if cell in missing:
        return None
    if cell == HOMEMAKER:
        if not name.startswith("occ"):
            raise ValueError("homemaker is only valid for occupations")
        return HOMEMAKER
    v = int(cell)
    if not 1 <= v <= 5:
        raise ValueError(f"out of range 1-5: {v}")
    return v


def _parse_row(row: dict, missing: set) -> StudentRecord:
    def req(name):
        cell = row[name].strip()
        if cell in missing:
            raise _FieldError(name, "missing value")
        return cell

    def num(name, conv):
        cell = req(name)
        try:
            value = conv(cell)
        except ValueError:
            raise _FieldError(name, f"malformed number {cell!r}") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise _FieldError(name, f"non-finite value {cell!r}")
        return value

    sid = req("id")
    lsat = num("lsat", int)
    if not LSAT_RANGE[0] <= lsat <= LSAT_RANGE[1]:
        raise _FieldError("lsat", f"out of range {LSAT_RANGE}: {lsat}")
    ugpa = num("ugpa", float)
    if not UGPA_RANGE[0] <= ugpa <= UGPA_RANGE[1]:
        raise _FieldError("ugpa", f"out of range {UGPA_RANGE}: {ugpa}")
    female = num("female", int)
    if female not in (0, 1):
        raise _FieldError("female", f"expected 0/1: {female}")
    try:
        race = Race(req("race").lower())
    except ValueError:
        raise _FieldError("race", f"unknown race {row['race']!r}") from None
    tier = num("tier", int)
    if not 1 <= tier <= 6:
        raise _FieldError("tier", f"out of range 1-6: {tier}")
    try:
        outcome = OutcomeClass.from_token(req("outcome"))
    except ValueError as exc:
        raise _FieldError("outcome", str(exc)) from None
    ses = {}
    for name in SES_FIELDS:
        try:
            ses[name] = _parse_ses(name, row[name].strip(), missing)
        except ValueError as exc:
            raise _FieldError(name, str(exc)) from None
    return StudentRecord(sid, lsat, ugpa, female, race, SesProfile(**ses), tier, outcome)


class _FieldError(Exception):
    def __init__(self, field, message):
        super().__init__(message)
        self.field = field
        self.message = message


def parse_dataset(source, schema: Optional[dict] = None, missing: Sequence[str] = ("",)) -> ParseResult:
    """Parse the comma-delimited student table.

    ``source`` is a path or a text stream.  ``schema`` optionally maps the
    canonical column names to the names used in the file header.  Bad rows
    become :class:`RowError` entries (line numbers count the header as line
    1); a duplicated id is fatal.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_dataset(fh, schema, missing)
    schema = {c: c for c in COLUMNS} | dict(schema or {})
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise DatasetError("empty input: no header row")
    absent = [c for c in COLUMNS if schema[c] not in reader.fieldnames]
    if absent:
        raise DatasetError(f"missing columns: {', '.join(absent)}")
    missing = set(missing)
    records: list[StudentRecord] = []
    errors: list[RowError] = []
    seen: dict[str, int] = {}
    for line, raw in enumerate(reader, start=2):
        row = {c: (raw[schema[c]] or "") for c in COLUMNS}
        try:
            rec = _parse_row(row, missing)
        except _FieldError as exc:
            errors.append(RowError(line, exc.field, exc.message))
            continue
        if rec.id in seen:
            raise DatasetError(f"duplicate id {rec.id!r} on lines {seen[rec.id]} and {line}")
        seen[rec.id] = line
        records.append(rec)
    return ParseResult(records, errors)


def _fmt_ses(v: SesValue) -> str:
    return "" if v is None else str(v)


def record_row(rec: StudentRecord) -> list[str]:
    return [rec.id, str(rec.lsat), repr(float(rec.ugpa)), str(rec.female), rec.race.value,
            *(_fmt_ses(v) for v in rec.ses.values()), str(rec.tier), rec.outcome.token]


def write_dataset(records: Iterable[StudentRecord], dest) -> None:
    """Inverse of :func:`parse_dataset` (canonical schema)."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_dataset(records, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in records:
        writer.writerow(record_row(rec))


def dataset_text(records: Iterable[StudentRecord]) -> str:
    buf = io.StringIO()
    write_dataset(records, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class AnalysisPopulation:
    """White and black students in Tiers 1-5 with some SES information.

    ``provenance`` maps each filter rule to the number of records it removed,
    in the order the rules were applied.
    """

    records: tuple[StudentRecord, ...]
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @cached_property
    def ids(self) -> np.ndarray:
        return np.array([r.id for r in self.records])

    @cached_property
    def lsat(self) -> np.ndarray:
        return np.array([r.lsat for r in self.records], dtype=float)

    @cached_property
    def ugpa(self) -> np.ndarray:
        return np.array([r.ugpa for r in self.records], dtype=float)

    @cached_property
    def female(self) -> np.ndarray:
        return np.array([r.female for r in self.records], dtype=float)

    @cached_property
    def black(self) -> np.ndarray:
        return np.array([r.race is Race.BLACK for r in self.records])

    @cached_property
    def tier(self) -> np.ndarray:
        return np.array([r.tier for r in self.records], dtype=int)

    @cached_property
    def outcome(self) -> np.ndarray:
        return np.array([int(r.outcome) for r in self.records], dtype=int)

    @cached_property
    def id_order(self) -> np.ndarray:
        """Indices that visit students in ascending id order."""
        return np.argsort(self.ids, kind="stable")


FILTER_RULES = ("tier6", "race", "ses_empty")


def filter_analysis_population(records: Iterable[StudentRecord]) -> AnalysisPopulation:
    """Drop Tier-6 students, non-white/non-black students, then students with no SES data."""
    if isinstance(records, AnalysisPopulation):
        records = records.records
    kept = list(records)
    provenance = {"input": len(kept)}
    rules = (
        ("tier6", lambda r: r.tier != 6),
        ("race", lambda r: r.race in (Race.WHITE, Race.BLACK)),
        ("ses_empty", lambda r: not r.ses.all_missing),
    )
    for name, keep in rules:
        before = len(kept)
        kept = [r for r in kept if keep(r)]
        provenance[name] = before - len(kept)
    provenance["retained"] = len(kept)
    if not kept:
        raise DatasetError("no analyzable records")
    return AnalysisPopulation(tuple(kept), provenance)


def nearest_rank_quantile(values, q: float) -> float:
    """Smallest value whose empirical CDF reaches ``q`` (nearest-rank)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty group")
    k = max(int(math.ceil(q * v.size - 1e-12)), 1)
    return float(v[k - 1])


def lsat_quartiles_by_group(records, tier: int, race: Union[Race, str]) -> tuple[float, float, float]:
    """Nearest-rank LSAT quartiles among students in ``tier`` of ``race``."""
    if isinstance(records, AnalysisPopulation):
        records = records.records
    race = Race(race)
    vals = [r.lsat for r in records if r.tier == tier and r.race is race]
    if not vals:
        raise ValueError(f"no students in tier {tier} of race {race.value}")
    return tuple(nearest_rank_quantile(vals, q) for q in (0.25, 0.5, 0.75))
