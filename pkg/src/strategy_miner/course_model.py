"""Domain vocabulary of a blended course: click types, events, weeks, grades.

Also hosts the ingestion routines for raw click logs, rosters, assessment
week definitions and taxonomy files, plus the small statistics used on the
roster (attendance means, two-sample Kolmogorov-Smirnov test).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from typing import IO, Iterable, Sequence, Union

import numpy as np
from scipy.special import kolmogorov

AREAS = ("lecture_notes", "homework", "recitation", "library_doc",
         "practice_exam", "general", "none")
KINDS = ("navigation", "discussion", "behavior")
WEEK_KINDS = ("homework", "exam")
LOAD_COURSE = "Load course"

Source = Union[bytes, str, IO]


class ValidationError(ValueError):
    """Input data violates a documented contract."""


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ClickType:
    id: int
    label: str
    area: str
    kind: str


class Taxonomy:
    """Dense id -> ClickType vocabulary with label lookup."""

    def __init__(self, types: Iterable[ClickType]):
        self.types = sorted(types, key=lambda t: t.id)
        if [t.id for t in self.types] != list(range(len(self.types))):
            raise ValidationError("click type ids must be dense and unique (0..V-1)")
        self._by_label = {}
        for t in self.types:
            if t.area not in AREAS:
                raise ValidationError(f"unknown area {t.area!r} for {t.label!r}")
            if t.kind not in KINDS:
                raise ValidationError(f"unknown kind {t.kind!r} for {t.label!r}")
            if t.label in self._by_label:
                raise ValidationError(f"duplicate click type label {t.label!r}")
            self._by_label[t.label] = t
        n_load = sum(t.label == LOAD_COURSE for t in self.types)
        if n_load != 1:
            raise ValidationError(f"taxonomy must contain exactly one {LOAD_COURSE!r} type")

    def __len__(self) -> int:
        return len(self.types)

    def __getitem__(self, type_id: int) -> ClickType:
        return self.types[type_id]

    def __iter__(self):
        return iter(self.types)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.types]

    def id_of(self, label: str) -> int:
        try:
            return self._by_label[label].id
        except KeyError:
            raise ValidationError(f"unknown click type label {label!r}") from None

    @property
    def load_course_id(self) -> int:
        return self._by_label[LOAD_COURSE].id

    def resolve(self, value) -> int:
        """Map a label or an integer id (possibly as a string) to an id."""
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            idx = int(value)
        elif isinstance(value, str) and value.strip().lstrip("-").isdigit():
            idx = int(value)
        elif isinstance(value, str):
            return self.id_of(value)
        else:
            raise ValidationError(f"unknown click type {value!r}")
        if not 0 <= idx < len(self.types):
            raise ValidationError(f"click type id {idx} out of range")
        return idx

    def to_json(self) -> list[dict]:
        return [dict(id=t.id, label=t.label, area=t.area, kind=t.kind)
                for t in self.types]

    @classmethod
    def from_json(cls, rows: Sequence[dict]) -> "Taxonomy":
        try:
            return cls(ClickType(int(r["id"]), str(r["label"]), str(r["area"]),
                                 str(r["kind"])) for r in rows)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed taxonomy entry: {exc}") from None


def load_taxonomy(path=None) -> Taxonomy:
    """Read a taxonomy JSON file; without a path, the packaged 37-type default."""
    if path is None:
        text = resources.files("strategy_miner").joinpath("data/taxonomy.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return Taxonomy.from_json(json.loads(text))


@dataclass(frozen=True)
class ClickEvent:
    timestamp: datetime
    student: str
    click_type: int
    object: str = ""


@dataclass(frozen=True)
class AssessmentWeek:
    index: int
    kind: str
    start: datetime
    deadline: datetime

    def contains(self, ts: datetime) -> bool:
        return self.start <= ts < self.deadline


@dataclass
class StudentRecord:
    student: str
    grades: dict[int, float] = field(default_factory=dict)
    lecture_polls: dict[int, list[bool]] = field(default_factory=dict)
    recitation_polls: dict[int, list[bool]] = field(default_factory=dict)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat()


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def parse_event_log(source: Source, taxonomy: Taxonomy) -> list[ClickEvent]:
    """Parse a CSV (header row) or JSONL click log into time-ordered events.

    Ties on timestamp keep file order. JSONL is detected by a leading ``{``.
    """
    text = _read_text(source)
    stripped = text.lstrip()
    if not stripped:
        return []
    if stripped.startswith("{"):
        rows = _jsonl_rows(text)
    else:
        rows = _csv_rows(text)

    events = []
    for line_no, row in rows:
        try:
            ts_raw, student, ctype = row["timestamp"], row["student"], row["click_type"]
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", line_no) from None
        if ts_raw is None or student is None or ctype is None:
            raise ParseError("empty required field", line_no)
        try:
            ts = parse_timestamp(str(ts_raw))
        except ValueError:
            raise ParseError(f"bad timestamp {ts_raw!r}", line_no) from None
        try:
            type_id = taxonomy.resolve(ctype)
        except ValidationError as exc:
            raise ParseError(str(exc), line_no) from None
        obj = row.get("object")
        events.append(ClickEvent(ts, str(student), type_id, "" if obj is None else str(obj)))
    events.sort(key=lambda e: e.timestamp)
    return events


def _jsonl_rows(text: str):
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
        if not isinstance(row, dict):
            raise ParseError("expected a JSON object", line_no)
        yield line_no, row


def _csv_rows(text: str):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return
    for col in ("timestamp", "student", "click_type"):
        if col not in header:
            raise ParseError(f"missing column {col!r}", 1)
    for row in reader:
        line_no = reader.line_num
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
        yield line_no, dict(zip(header, row))


def write_event_log(events: Iterable[ClickEvent], taxonomy: Taxonomy,
                    fmt: str = "csv") -> str:
    """Serialize events with click types as labels; inverse of parse_event_log."""
    if fmt == "jsonl":
        lines = [json.dumps(dict(timestamp=format_timestamp(e.timestamp),
                                 student=e.student,
                                 click_type=taxonomy[e.click_type].label,
                                 object=e.object))
                 for e in events]
        return "".join(line + "\n" for line in lines)
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["timestamp", "student", "click_type", "object"])
    for e in events:
        writer.writerow([format_timestamp(e.timestamp), e.student,
                         taxonomy[e.click_type].label, e.object])
    return buf.getvalue()


def _parse_polls(text: str, line_no: int) -> list[bool]:
    text = text.strip()
    if not text:
        return []
    out = []
    for tok in text.replace(",", ";").split(";"):
        tok = tok.strip().lower()
        if tok in ("1", "true", "t", "yes"):
            out.append(True)
        elif tok in ("0", "false", "f", "no"):
            out.append(False)
        else:
            raise ParseError(f"bad poll value {tok!r}", line_no)
    return out


def parse_roster(source: Source) -> list[StudentRecord]:
    """Parse the per-student-per-week roster CSV.

    Columns: student, week, kind, grade, lecture_polls, recitation_polls.
    Polls are ``;``-separated 0/1 flags; an empty cell means no contact time.
    An empty grade cell means the grade is unknown.
    """
    text = _read_text(source)
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    required = {"student", "week", "grade"}
    missing = required - set(reader.fieldnames or ())
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}", 1)

    records: dict[str, StudentRecord] = {}
    seen = set()
    for row in reader:
        line_no = reader.line_num
        student = (row["student"] or "").strip()
        try:
            week = int(row["week"])
        except (TypeError, ValueError):
            raise ParseError(f"bad week {row['week']!r}", line_no) from None
        if (student, week) in seen:
            raise ParseError(f"duplicate entry for student {student!r}, week {week}", line_no)
        seen.add((student, week))
        kind = (row.get("kind") or "").strip()
        if kind and kind not in WEEK_KINDS:
            raise ParseError(f"bad week kind {kind!r}", line_no)
        rec = records.setdefault(student, StudentRecord(student))
        grade_raw = (row["grade"] or "").strip()
        if grade_raw:
            try:
                grade = float(grade_raw)
            except ValueError:
                raise ParseError(f"bad grade {grade_raw!r}", line_no) from None
            if not 0.0 <= grade <= 1.0:
                raise ParseError(f"grade {grade} outside [0, 1]", line_no)
            rec.grades[week] = grade
        rec.lecture_polls[week] = _parse_polls(row.get("lecture_polls") or "", line_no)
        rec.recitation_polls[week] = _parse_polls(row.get("recitation_polls") or "", line_no)
    return list(records.values())


def write_roster(records: Iterable[StudentRecord], weeks: Sequence[AssessmentWeek]) -> str:
    kinds = {w.index: w.kind for w in weeks}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["student", "week", "kind", "grade", "lecture_polls", "recitation_polls"])
    for rec in records:
        for w in sorted(set(rec.grades) | set(rec.lecture_polls) | set(rec.recitation_polls)):
            grade = rec.grades.get(w)
            writer.writerow([
                rec.student, w, kinds.get(w, ""),
                "" if grade is None else repr(float(grade)),
                ";".join("1" if p else "0" for p in rec.lecture_polls.get(w, [])),
                ";".join("1" if p else "0" for p in rec.recitation_polls.get(w, [])),
            ])
    return buf.getvalue()


def validate_weeks(weeks: Sequence[AssessmentWeek]) -> None:
    for i, w in enumerate(weeks):
        if w.index != i:
            raise ValidationError(f"week indices must be 0..n-1 in order, got {w.index} at {i}")
        if w.kind not in WEEK_KINDS:
            raise ValidationError(f"bad week kind {w.kind!r}")
        if not w.start < w.deadline:
            raise ValidationError(f"week {w.index} starts after its deadline")
        if i and weeks[i - 1].deadline > w.start:
            raise ValidationError(f"weeks {i - 1} and {i} overlap")


def parse_weeks(source: Source) -> list[AssessmentWeek]:
    """Read ``[{index, kind, start, deadline}, ...]`` JSON."""
    try:
        rows = json.loads(_read_text(source))
        weeks = [AssessmentWeek(int(r["index"]), str(r["kind"]),
                                parse_timestamp(r["start"]), parse_timestamp(r["deadline"]))
                 for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed weeks file: {exc}") from None
    weeks.sort(key=lambda w: w.start)
    validate_weeks(weeks)
    return weeks


def weeks_to_json(weeks: Sequence[AssessmentWeek]) -> list[dict]:
    return [dict(index=w.index, kind=w.kind, start=format_timestamp(w.start),
                 deadline=format_timestamp(w.deadline)) for w in weeks]


def attendance_score(polls: Sequence[bool]) -> float | None:
    """Share of attended polls, or None when no poll took place."""
    if len(polls) == 0:
        return None
    return sum(bool(p) for p in polls) / len(polls)


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    The p-value is the Kolmogorov survival function evaluated at
    ``sqrt(n_a * n_b / (n_a + n_b)) * D``.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValidationError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = a.size * b.size / (a.size + b.size)
    p = float(kolmogorov(math.sqrt(en) * d))
    return d, min(max(p, 0.0), 1.0)
