"""Death-count records to raw cause-of-death compositions.

Reads ICD-coded death counts (one CSV row per country, year, sex and cause
code, with one column per age band), classifies every code into the eight
cause classes, restricts to the 40-64 age window and closes the per-year
class totals into compositions.
"""

import csv
import io
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .compdata import CAUSES, DEFAULT_PSEUDOCOUNT, FunctionalComposition, TimeGrid, close_columns
from .errors import (
    AmbiguousCode,
    ConfigError,
    HeaderMismatch,
    MissingYearBeyondGuard,
    PartialAgeCoverage,
    UnknownRevision,
)
from .smoothing import MIN_OBSERVED_FRACTION, MissingMask
from .tables import write_csv

EXCLUDED = "Excluded"
SEXES = ("male", "female")
REVISIONS = (7, 8, 9, 10)
AGE_WINDOW = (40, 64)
OPEN_BAND_WIDTH = 10

STUDY_COUNTRIES = (
    "DNK", "FIN", "NOR", "SWE", "ICE",
    "AUT", "BEL", "SWI", "FRA", "IRL", "NL", "UK",
    "ITA", "SPA", "GRE",
    "HUN", "POL",
    "AUS", "CAN", "JPN", "NZL", "USA",
)


@dataclass(frozen=True)
class DeathRecord:
    country: str
    year: int
    sex: str
    icd_revision: int
    cause_code: str
    age_group: str
    deaths: int


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    content: str


# ---------------------------------------------------------------------------
# code patterns


def normalize_code(code: str) -> str:
    return code.strip().upper().replace(".", "")


def pattern_matches(pattern: str, code: str) -> bool:
    """Prefix or inclusive-range match (``"C00-C32"`` matches ``"C321"``)."""
    code = normalize_code(code)
    if "-" in pattern:
        lo, hi = (normalize_code(p) for p in pattern.split("-", 1))
        return len(code) >= len(lo) and code[: len(lo)] >= lo and code[: len(hi)] <= hi
    return code.startswith(normalize_code(pattern))


def _data_lines(text):
    return [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def _read_text(source) -> str:
    if source is None:
        raise ValueError("no source")
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_text(encoding="utf-8")


def _packaged(name: str) -> str:
    return resources.files("cfda").joinpath("data", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class CauseEntry:
    pattern: str
    cause: str
    priority: int = 0


class CauseMap:
    """Per-revision pattern table; higher priority wins among matches."""

    def __init__(self, entries: dict):
        self.entries = {int(rev): tuple(rows) for rev, rows in entries.items()}
        self._lookup = lru_cache(maxsize=None)(self._classify)

    @classmethod
    def from_csv(cls, source=None) -> "CauseMap":
        text = _packaged("cause_map.csv") if source is None else _read_text(source)
        reader = csv.DictReader(io.StringIO("\n".join(_data_lines(text))))
        if reader.fieldnames != ["revision", "pattern", "class", "priority"]:
            raise HeaderMismatch(f"cause map header must be revision,pattern,class,priority; got {reader.fieldnames}")
        entries = defaultdict(list)
        for row in reader:
            cause = row["class"].strip()
            if cause not in CAUSES:
                raise ConfigError(f"unknown cause class {cause!r} in cause map")
            entries[int(row["revision"])].append(
                CauseEntry(row["pattern"].strip(), cause, int(row["priority"] or 0)))
        return cls(entries)

    def _classify(self, revision: int, code: str) -> str:
        if revision not in self.entries:
            raise UnknownRevision(f"no cause map for ICD revision {revision}")
        hits = [e for e in self.entries[revision] if pattern_matches(e.pattern, code)]
        if not hits:
            return EXCLUDED
        top = max(e.priority for e in hits)
        winners = {e.cause for e in hits if e.priority == top}
        if len(winners) > 1:
            raise AmbiguousCode(f"ICD-{revision} code {code!r} matches {sorted(winners)} at equal priority")
        return winners.pop()

    def classify_code(self, revision: int, code: str) -> str:
        return self._lookup(int(revision), normalize_code(code))


@dataclass(frozen=True)
class AdjustmentRule:
    country: str
    revision: int
    pattern: str
    cause: str

    def applies(self, country: str, revision: int, code: str) -> bool:
        return (self.country in ("*", country) and self.revision == revision
                and pattern_matches(self.pattern, code))


def load_adjustments(source=None) -> list:
    text = _packaged("adjustments.csv") if source is None else _read_text(source)
    reader = csv.DictReader(io.StringIO("\n".join(_data_lines(text))))
    if reader.fieldnames != ["country", "revision", "pattern", "class"]:
        raise HeaderMismatch(f"adjustments header must be country,revision,pattern,class; got {reader.fieldnames}")
    rules = []
    for row in reader:
        cause = row["class"].strip()
        if cause not in CAUSES:
            raise ConfigError(f"unknown cause class {cause!r} in adjustments")
        rules.append(AdjustmentRule(row["country"].strip(), int(row["revision"]), row["pattern"].strip(), cause))
    return rules


def classify(record: DeathRecord, cause_map: CauseMap, adjustments: Sequence[AdjustmentRule] = ()) -> str:
    """Cause class of a record, or ``EXCLUDED``. Adjustment rules are tried first."""
    for rule in adjustments:
        if rule.applies(record.country, record.icd_revision, record.cause_code):
            return rule.cause
    return cause_map.classify_code(record.icd_revision, record.cause_code)


# ---------------------------------------------------------------------------
# parsing


@dataclass
class FormatConfig:
    """Column mapping of a death-count CSV (loaded from a TOML sidecar)."""

    columns: dict
    age_bands: dict
    sex_codes: dict = field(default_factory=lambda: {"male": ["1"], "female": ["2"]})
    revisions: dict = field(default_factory=dict)
    countries: dict = field(default_factory=dict)
    skip_causes: tuple = ()
    blank_as_zero: bool = True

    @classmethod
    def load(cls, source=None) -> "FormatConfig":
        text = _packaged("who_format.toml") if source is None else _read_text(source)
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad format sidecar: {exc}") from exc
        required = {"country", "year", "sex", "revision", "cause"}
        cols = doc.get("columns", {})
        if not required <= set(cols):
            raise ConfigError(f"format sidecar [columns] must define {sorted(required)}")
        if not doc.get("age_bands"):
            raise ConfigError("format sidecar needs an [age_bands] table")
        opts = doc.get("options", {})
        return cls(
            columns=cols,
            age_bands=dict(doc["age_bands"]),
            sex_codes={k: [str(v) for v in vs] for k, vs in doc.get("sex_codes", {"male": ["1"], "female": ["2"]}).items()},
            revisions={str(k): int(v) for k, v in doc.get("revisions", {}).items()},
            countries={str(k): str(v) for k, v in doc.get("countries", {}).items()},
            skip_causes=tuple(opts.get("skip_causes", ())),
            blank_as_zero=bool(opts.get("blank_as_zero", True)),
        )

    def revision_of(self, value: str) -> int:
        value = value.strip()
        if value in self.revisions:
            return self.revisions[value]
        try:
            rev = int(value)
        except ValueError:
            raise UnknownRevision(f"unknown ICD revision / list {value!r}") from None
        if rev not in REVISIONS:
            raise UnknownRevision(f"unsupported ICD revision {rev}")
        return rev

    def sex_of(self, value: str):
        for sex, codes in self.sex_codes.items():
            if value.strip() in codes:
                return sex
        return None


@dataclass
class ParseResult:
    records: list
    rejects: list
    skipped: int = 0


def parse_records(stream, fmt: FormatConfig = None, years=(1959, 2015)) -> ParseResult:
    """One :class:`DeathRecord` per (row, age band).

    Rows with unreadable fields go to ``rejects`` with a reason; rows outside
    the year window or with aggregate cause codes are counted in ``skipped``.
    """
    fmt = fmt or FormatConfig.load()
    if not hasattr(stream, "read"):
        with open(stream, newline="", encoding="utf-8") as fh:
            return parse_records(fh, fmt, years)
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    needed = list(fmt.columns.values()) + list(fmt.age_bands)
    missing = [c for c in needed if c not in header]
    if missing:
        raise HeaderMismatch(f"input is missing columns {missing}")
    c = fmt.columns
    records, rejects, skipped = [], [], 0
    for lineno, row in enumerate(reader, start=2):
        content = ",".join(row.get(h) or "" for h in header)
        try:
            year = int(row[c["year"]])
        except (TypeError, ValueError):
            rejects.append(Reject(lineno, f"bad year {row[c['year']]!r}", content))
            continue
        code = normalize_code(row[c["cause"]] or "")
        if not (years[0] <= year <= years[1]) or code in fmt.skip_causes:
            skipped += 1
            continue
        sex = fmt.sex_of(row[c["sex"]] or "")
        if sex is None:
            rejects.append(Reject(lineno, f"unknown sex code {row[c['sex']]!r}", content))
            continue
        if not code:
            rejects.append(Reject(lineno, "empty cause code", content))
            continue
        revision = fmt.revision_of(row[c["revision"]] or "")
        raw_country = (row[c["country"]] or "").strip()
        country = fmt.countries.get(raw_country, raw_country)
        counts, bad = [], None
        for column, band in fmt.age_bands.items():
            cell = (row[column] or "").strip()
            if cell == "" and fmt.blank_as_zero:
                cell = "0"
            try:
                value = float(cell)
            except ValueError:
                bad = f"non-numeric deaths {cell!r} in {column}"
                break
            if not value.is_integer() or value < 0:
                bad = f"invalid death count {cell!r} in {column}"
                break
            counts.append((band, int(value)))
        if bad:
            rejects.append(Reject(lineno, bad, content))
            continue
        records.extend(DeathRecord(country, year, sex, revision, code, band, n) for band, n in counts)
    return ParseResult(records, rejects, skipped)


# ---------------------------------------------------------------------------
# aggregation


def parse_age_band(token: str):
    """``"40-44"`` -> ``(40, 44)``; ``"85+"`` -> ``(85, None)``; else ``None``."""
    token = token.strip()
    if token.endswith("+"):
        return int(token[:-1]), None
    if "-" in token:
        lo, hi = token.split("-", 1)
        return int(lo), int(hi)
    if token.isdigit():
        return int(token), int(token)
    return None


def window_fraction(token: str, window=AGE_WINDOW) -> float:
    """Share of a band's single years inside ``window`` (pro-rata allocation)."""
    band = parse_age_band(token)
    if band is None:
        return 0.0
    lo, hi = band
    if hi is None:
        hi = lo + OPEN_BAND_WIDTH - 1
    inside = max(0, min(hi, window[1]) - max(lo, window[0]) + 1)
    return inside / (hi - lo + 1)


def conservation_report(records: Iterable[DeathRecord], cause_map: CauseMap,
                        adjustments: Sequence[AdjustmentRule] = ()) -> list:
    """Per (country, sex, year): input, classified and excluded death totals."""
    table = defaultdict(lambda: [0, 0, 0])
    for r in records:
        row = table[(r.country, r.sex, r.year)]
        row[0] += r.deaths
        if classify(r, cause_map, adjustments) == EXCLUDED:
            row[2] += r.deaths
        else:
            row[1] += r.deaths
    return [(c, s, y, *v, v[0] == v[1] + v[2]) for (c, s, y), v in sorted(table.items())]


@dataclass
class BuildResult:
    compositions: list
    masks: list
    counts: dict
    warnings: list


def build_compositions(records: Iterable[DeathRecord], cause_map: CauseMap,
                       adjustments: Sequence[AdjustmentRule] = (), grid: TimeGrid = None,
                       sex: str = "male", age_window=AGE_WINDOW, countries: Sequence[str] = None,
                       pseudocount: float = DEFAULT_PSEUDOCOUNT, part_names=CAUSES) -> BuildResult:
    """Per-country compositions of deaths by cause class for one sex.

    Deaths are summed over codes within each class and over age bands
    intersecting ``age_window``; bands straddling the window contribute
    pro-rata. Years with no records are flagged in the mask and filled with
    a uniform placeholder column.
    """
    grid = grid or TimeGrid.yearly()
    years = [int(round(y)) for y in grid.points]
    year_index = {y: i for i, y in enumerate(years)}
    class_index = {name: d for d, name in enumerate(part_names)}
    totals = {}
    seen = defaultdict(set)
    notes, straddling = [], set()
    for r in records:
        if r.sex != sex or r.year not in year_index:
            continue
        if countries is not None and r.country not in countries:
            continue
        seen[r.country].add(r.year)
        frac = window_fraction(r.age_group, age_window)
        if frac == 0.0:
            continue
        if frac < 1.0 and r.age_group not in straddling:
            straddling.add(r.age_group)
            msg = f"age band {r.age_group} straddles {age_window[0]}-{age_window[1]}; allocated {frac:.3g} pro rata"
            warnings.warn(msg, PartialAgeCoverage, stacklevel=2)
            notes.append(msg)
        cause = classify(r, cause_map, adjustments)
        if cause == EXCLUDED:
            continue
        arr = totals.setdefault(r.country, np.zeros((len(part_names), len(years))))
        arr[class_index[cause], year_index[r.year]] += frac * r.deaths

    order = [c for c in (countries or sorted(seen)) if c in seen]
    comps, masks = [], []
    for country in order:
        counts = totals.get(country, np.zeros((len(part_names), len(years))))
        missing = np.array([y not in seen[country] for y in years])
        if 1.0 - missing.mean() < MIN_OBSERVED_FRACTION:
            raise MissingYearBeyondGuard(f"{country}/{sex}: only {int((~missing).sum())} of {len(years)} years present")
        counts = counts.copy()
        counts[:, missing] = 1.0
        comps.append(FunctionalComposition(grid, close_columns(counts, pseudocount), part_names, country))
        masks.append(MissingMask(country, missing))
    return BuildResult(comps, masks, {c: totals.get(c) for c in order}, notes)


# ---------------------------------------------------------------------------
# reports

MASK_HEADER = ("id", "year", "missing")
REJECT_HEADER = ("line", "reason", "content")
CONSERVATION_HEADER = ("country", "sex", "year", "input", "classified", "excluded", "balanced")


def write_masks(target, grid: TimeGrid, masks: Sequence[MissingMask]):
    rows = ((m.id, y, int(flag)) for m in masks for y, flag in zip(grid.points, m.missing))
    return write_csv(target, MASK_HEADER, rows)


def read_masks(source) -> dict:
    from .tables import read_csv

    rows = read_csv(source, MASK_HEADER)
    table = defaultdict(dict)
    for r in rows:
        table[r["id"]][float(r["year"])] = r["missing"].strip() in ("1", "true", "True")
    return {k: MissingMask(k, np.array([v[y] for y in sorted(v)])) for k, v in table.items()}


def write_rejects(target, rejects: Sequence[Reject]):
    return write_csv(target, REJECT_HEADER, ((r.line, r.reason, r.content) for r in rejects))


def write_conservation(target, rows):
    return write_csv(target, CONSERVATION_HEADER, rows)
