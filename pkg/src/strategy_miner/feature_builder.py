"""Per-student-per-week feature rows from session clickstreams.

Strategy columns count session 3-grams within Jaro-Winkler distance ``tau``
of each strategy's representative, summed over the student's sessions in
that week. Student-weeks without activity are kept as all-zero rows.
"""
from __future__ import annotations

import csv
import io
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .course_model import AssessmentWeek, StudentRecord, ValidationError, attendance_score
from .pattern_miner import StrategyCluster
from .seqdist import jaro_winkler_distance

MATCH_TAU = 0.2
# Slack on the tau comparison: 1 - jw for one replacement plus one
# transposition evaluates to 0.2 + 7e-17 in floating point.
MATCH_EPS = 1e-9

ACTIVITY_COLUMNS = ("n_clicks", "n_sessions")
ATTENDANCE_COLUMNS = ("lecture_attendance", "recitation_attendance")


@lru_cache(maxsize=1 << 16)
def _gram_distance(gram: tuple, rep: tuple) -> float:
    return jaro_winkler_distance(gram, rep)


def count_pattern_in_session(session, representative: Sequence[int], tau: float = MATCH_TAU) -> int:
    rep = tuple(representative)
    if len(rep) != 3:
        raise ValueError("representative must have exactly 3 clicks")
    tokens = [int(t) for t in getattr(session, "tokens", session)]
    hits = 0
    for i in range(len(tokens) - 2):
        if _gram_distance(tuple(tokens[i:i + 3]), rep) <= tau + MATCH_EPS:
            hits += 1
    return hits


@dataclass
class FeatureMatrix:
    rows: list[tuple[str, int]]
    columns: list[str]
    values: np.ndarray
    week_kinds: list[str]
    grades: np.ndarray
    labels: np.ndarray | None = None
    task: str | None = None
    strategy_labels: list[str] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def subset(self, mask) -> "FeatureMatrix":
        mask = np.asarray(mask, dtype=bool)
        return FeatureMatrix([r for r, m in zip(self.rows, mask) if m], list(self.columns),
                             self.values[mask], [k for k, m in zip(self.week_kinds, mask) if m],
                             self.grades[mask],
                             None if self.labels is None else self.labels[mask],
                             self.task, list(self.strategy_labels))

    def without_columns(self, names) -> "FeatureMatrix":
        keep = [i for i, c in enumerate(self.columns) if c not in names]
        out = self.subset(np.ones(len(self.rows), dtype=bool))
        out.columns = [self.columns[i] for i in keep]
        out.values = self.values[:, keep]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["student", "week", "kind", "grade", *self.columns, "label"])
        for i, (student, week) in enumerate(self.rows):
            grade = self.grades[i]
            writer.writerow([student, week, self.week_kinds[i],
                             "" if math.isnan(grade) else repr(float(grade)),
                             *[_fmt(v) for v in self.values[i]],
                             "" if self.labels is None else _fmt(self.labels[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureMatrix":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        fixed = ["student", "week", "kind", "grade"]
        if header[:4] != fixed or header[-1] != "label":
            raise ValidationError("features CSV needs student,week,kind,grade,...,label columns")
        columns = header[4:-1]
        rows, kinds, grades, values, labels = [], [], [], [], []
        for line in reader:
            if not line:
                continue
            rows.append((line[0], int(line[1])))
            kinds.append(line[2])
            grades.append(float(line[3]) if line[3] else math.nan)
            values.append([float(v) if v else math.nan for v in line[4:-1]])
            labels.append(line[-1])
        has_labels = any(labels)
        if has_labels:
            try:
                lab = np.asarray([float(v) for v in labels])
            except ValueError:
                lab = np.asarray(labels)
        else:
            lab = None
        return cls(rows, columns, np.asarray(values, dtype=float).reshape(len(rows), len(columns)),
                   kinds, np.asarray(grades, dtype=float), lab)


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return ""
    if v.is_integer():
        return str(int(v))
    return repr(v)


def strategy_column_names(strategies: Sequence[StrategyCluster]) -> list[str]:
    return [f"strategy_{i}" for i in range(len(strategies))]


def build_features(sessions, strategies: Sequence[StrategyCluster],
                   roster: Sequence[StudentRecord], weeks: Sequence[AssessmentWeek],
                   include_attendance: bool = True, tau: float = MATCH_TAU) -> FeatureMatrix:
    """One row per (roster student, week), sorted by student then week."""
    if not strategies:
        raise ValueError("need at least one strategy")
    records = {r.student: r for r in roster}
    reps = [tuple(s.representative) for s in strategies]
    week_index = {w.index: w for w in weeks}
    agg: dict[tuple[str, int], np.ndarray] = {}
    n_strat = len(reps)
    for s in sessions:
        if s.student not in records:
            raise ValidationError(f"student {s.student!r} has sessions but no roster entry")
        if s.week not in week_index:
            raise ValidationError(f"session in unknown week {s.week}")
        row = agg.setdefault((s.student, s.week), np.zeros(n_strat + 2))
        for j, rep in enumerate(reps):
            row[j] += count_pattern_in_session(s, rep, tau)
        row[n_strat] += len(s)
        row[n_strat + 1] += 1

    columns = strategy_column_names(strategies) + list(ACTIVITY_COLUMNS)
    if include_attendance:
        columns += list(ATTENDANCE_COLUMNS)
    rows, values, kinds, grades = [], [], [], []
    for student in sorted(records):
        rec = records[student]
        for w in weeks:
            counts = agg.get((student, w.index), np.zeros(n_strat + 2))
            vals = list(counts)
            if include_attendance:
                for polls in (rec.lecture_polls, rec.recitation_polls):
                    score = attendance_score(polls.get(w.index, []))
                    vals.append(math.nan if score is None else score)
            rows.append((student, w.index))
            values.append(vals)
            kinds.append(w.kind)
            grades.append(rec.grades.get(w.index, math.nan))
    return FeatureMatrix(rows, columns, np.asarray(values, dtype=float).reshape(len(rows), len(columns)),
                         kinds, np.asarray(grades, dtype=float),
                         strategy_labels=[s.label for s in strategies])


def label_rows(matrix: FeatureMatrix, task: str) -> FeatureMatrix:
    """Attach labels for ``assessment_kind`` or ``homework_grade``.

    The kind task keeps every row but drops attendance columns; the grade
    task keeps homework weeks with complete attendance only.
    """
    if task == "assessment_kind":
        # counts and activity only; attendance is undefined in weeks without class time
        out = matrix.without_columns(ATTENDANCE_COLUMNS)
        out.labels = np.asarray(matrix.week_kinds)
    elif task == "homework_grade":
        keep = np.array([k == "homework" for k in matrix.week_kinds], dtype=bool)
        att = [c for c in ATTENDANCE_COLUMNS if c in matrix.columns]
        for c in att:
            keep &= ~np.isnan(matrix.column(c))
        out = matrix.subset(keep)
        if np.isnan(out.grades).any():
            i = int(np.flatnonzero(np.isnan(out.grades))[0])
            raise ValidationError(f"missing grade for student {out.rows[i][0]!r}, week {out.rows[i][1]}")
        out.labels = out.grades.copy()
    else:
        raise ValueError(f"unknown task {task!r}")
    out.task = task
    return out


def active_share(matrix: FeatureMatrix) -> float:
    """Share of rows with at least one non-zero strategy count."""
    n_strat = sum(c.startswith("strategy_") for c in matrix.columns)
    if not matrix.rows or n_strat == 0:
        return 0.0
    return float(np.mean((matrix.values[:, :n_strat] > 0).any(axis=1)))
