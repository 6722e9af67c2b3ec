"""Split a student's click history into study sessions.

Three stages run in fixed order: assessment weeks, then every
``Load course`` click, then an inactivity timeout whose length depends on
whether the earlier click loaded lecture-note or homework content.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import groupby
from typing import Callable, Iterable, Sequence

import numpy as np

from .course_model import (AssessmentWeek, ClickEvent, Taxonomy, ValidationError,
                           format_timestamp, parse_timestamp)


@dataclass(frozen=True)
class TimeoutPolicy:
    long_categories: frozenset[int]
    long_threshold_minutes: float = 60.0
    short_threshold_minutes: float = 5.0

    def __post_init__(self):
        if not self.long_threshold_minutes >= self.short_threshold_minutes > 0:
            raise ValidationError("need long_threshold >= short_threshold > 0")
        object.__setattr__(self, "long_categories", frozenset(self.long_categories))

    @classmethod
    def default(cls, taxonomy: Taxonomy, long_minutes: float = 60.0,
                short_minutes: float = 5.0) -> "TimeoutPolicy":
        """Content-loading clicks (navigation in lecture notes or homework) get the long timeout."""
        ids = {t.id for t in taxonomy
               if t.kind == "navigation" and t.area in ("lecture_notes", "homework")}
        return cls(frozenset(ids), long_minutes, short_minutes)

    def threshold_seconds(self, click_type: int) -> float:
        minutes = (self.long_threshold_minutes if click_type in self.long_categories
                   else self.short_threshold_minutes)
        return minutes * 60.0


@dataclass
class SessionClickstream:
    student: str
    week: int
    clicks: list[ClickEvent]

    @property
    def tokens(self) -> list[int]:
        return [c.click_type for c in self.clicks]

    def __len__(self) -> int:
        return len(self.clicks)

    def to_json(self) -> dict:
        return dict(student=self.student, week=self.week,
                    click_type_ids=self.tokens,
                    timestamps=[format_timestamp(c.timestamp) for c in self.clicks])

    @classmethod
    def from_json(cls, row: dict) -> "SessionClickstream":
        ids, stamps = row["click_type_ids"], row["timestamps"]
        if len(ids) != len(stamps) or not ids:
            raise ValidationError("session needs equally many (>= 1) ids and timestamps")
        clicks = [ClickEvent(parse_timestamp(t), str(row["student"]), int(c))
                  for c, t in zip(ids, stamps)]
        return cls(str(row["student"]), int(row["week"]), clicks)


@dataclass
class SessionizeResult:
    sessions: list[SessionClickstream]
    dropped: int = 0
    dropped_by_student: dict[str, int] = field(default_factory=dict)


def split_by_week(events: Sequence[ClickEvent], weeks: Sequence[AssessmentWeek]
                  ) -> tuple[dict[int, list[ClickEvent]], int]:
    """Assign events to the week with ``start <= t < deadline``.

    Returns the per-week partition and the number of events outside every week.
    """
    starts = [w.start for w in weeks]
    parts: dict[int, list[ClickEvent]] = {w.index: [] for w in weeks}
    dropped = 0
    for e in events:
        # weeks are sorted and disjoint: bisect on start, then check the deadline
        lo, hi = 0, len(starts)
        while lo < hi:
            mid = (lo + hi) // 2
            if starts[mid] <= e.timestamp:
                lo = mid + 1
            else:
                hi = mid
        if lo and weeks[lo - 1].contains(e.timestamp):
            parts[weeks[lo - 1].index].append(e)
        else:
            dropped += 1
    return parts, dropped


def split_on_load_course(stream: Sequence[ClickEvent], load_course_id: int
                         ) -> list[list[ClickEvent]]:
    out: list[list[ClickEvent]] = []
    for e in stream:
        if not out or e.click_type == load_course_id:
            out.append([e])
        else:
            out[-1].append(e)
    return out


def split_on_timeout(stream: Sequence[ClickEvent], policy: TimeoutPolicy
                     ) -> list[list[ClickEvent]]:
    out: list[list[ClickEvent]] = []
    prev = None
    for e in stream:
        if prev is not None:
            gap = (e.timestamp - prev.timestamp).total_seconds()
            if gap < 0:
                raise ValidationError(
                    f"negative gap of {gap:.0f}s for student {e.student!r} (clock skew)")
            if gap > policy.threshold_seconds(prev.click_type):
                out.append([])
        if not out:
            out.append([])
        out[-1].append(e)
        prev = e
    return out


def _by_student(events: Sequence[ClickEvent]) -> dict[str, list[ClickEvent]]:
    per: dict[str, list[ClickEvent]] = {}
    for e in events:
        per.setdefault(e.student, []).append(e)
    return per


def sessionize_detailed(events: Sequence[ClickEvent], weeks: Sequence[AssessmentWeek],
                        policy: TimeoutPolicy, load_course_id: int) -> SessionizeResult:
    """Run all three splits per student; sessions ordered by (student, week, time)."""
    result = SessionizeResult([])
    per_student = _by_student(events)
    for student in sorted(per_student):
        parts, dropped = split_by_week(per_student[student], weeks)
        if dropped:
            result.dropped += dropped
            result.dropped_by_student[student] = dropped
        for week in sorted(parts):
            for chunk in split_on_load_course(parts[week], load_course_id):
                for piece in split_on_timeout(chunk, policy):
                    result.sessions.append(SessionClickstream(student, week, piece))
    return result


def sessionize(events: Sequence[ClickEvent], weeks: Sequence[AssessmentWeek],
               policy: TimeoutPolicy, load_course_id: int) -> list[SessionClickstream]:
    return sessionize_detailed(events, weeks, policy, load_course_id).sessions


def pre_timeout_streams(events: Sequence[ClickEvent], weeks: Sequence[AssessmentWeek],
                        load_course_id: int) -> list[list[ClickEvent]]:
    """Sub-streams after the week and Load-course splits (input to the KDE diagnostic)."""
    out = []
    per_student = _by_student(events)
    for student in sorted(per_student):
        parts, _ = split_by_week(per_student[student], weeks)
        for week in sorted(parts):
            out.extend(split_on_load_course(parts[week], load_course_id))
    return out


# Gaps are floored at one second so that equal timestamps stay finite on the log scale.
MIN_GAP_MINUTES = 1.0 / 60.0


def waiting_gaps(streams: Iterable[Sequence[ClickEvent]],
                 category: Callable[[int], bool] | Iterable[int] | None = None) -> np.ndarray:
    """Minutes until the next click, for clicks whose type passes ``category``."""
    if category is None:
        keep = lambda c: True  # noqa: E731
    elif callable(category):
        keep = category
    else:
        allowed = set(category)
        keep = allowed.__contains__
    gaps = []
    for s in streams:
        for prev, nxt in zip(s, s[1:]):
            if keep(prev.click_type):
                gaps.append((nxt.timestamp - prev.timestamp).total_seconds() / 60.0)
    return np.asarray(gaps, dtype=float)


class LogGapDensity:
    """Gaussian KDE over natural-log waiting minutes.

    Bandwidth follows Silverman's rule of thumb,
    ``0.9 * min(sd, IQR / 1.34) * n ** (-1/5)``, falling back to the plain sd
    form when the IQR is zero and to ``MIN_BANDWIDTH`` for constant samples.
    """

    MIN_BANDWIDTH = 0.05

    def __init__(self, gaps_minutes):
        gaps = np.asarray(gaps_minutes, dtype=float)
        if gaps.size < 2:
            raise ValidationError("need at least 2 waiting times for a density estimate")
        self.log_gaps = np.log(np.maximum(gaps, MIN_GAP_MINUTES))
        self.bandwidth = silverman_bandwidth(self.log_gaps) or self.MIN_BANDWIDTH

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        norm = self.log_gaps.size * self.bandwidth * math.sqrt(2 * math.pi)
        for lo in range(0, x.size, 256):
            z = (x[lo:lo + 256, None] - self.log_gaps[None, :]) / self.bandwidth
            out[lo:lo + 256] = np.exp(-0.5 * z * z).sum(axis=1) / norm
        return out


def silverman_bandwidth(sample) -> float:
    sample = np.asarray(sample, dtype=float)
    sd = float(np.std(sample, ddof=1))
    q75, q25 = np.percentile(sample, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * sample.size ** (-0.2)


def waiting_time_log_kde(streams, category=None) -> LogGapDensity:
    return LogGapDensity(waiting_gaps(streams, category))


def session_summary(sessions: Sequence) -> dict:
    lengths = np.array([len(s) for s in sessions], dtype=float)
    if lengths.size == 0:
        return dict(count=0, mean=None, sd=None, min=None, max=None, quantiles={})
    qs = (0.25, 0.5, 0.75, 0.9)
    return dict(
        count=int(lengths.size),
        mean=float(lengths.mean()),
        sd=float(lengths.std(ddof=1)) if lengths.size > 1 else 0.0,
        min=int(lengths.min()),
        max=int(lengths.max()),
        quantiles={str(q): float(np.quantile(lengths, q)) for q in qs},
        single_click_share=float(np.mean(lengths == 1)),
    )


def write_sessions_jsonl(sessions: Iterable[SessionClickstream]) -> str:
    return "".join(json.dumps(s.to_json()) + "\n" for s in sessions)


def read_sessions_jsonl(text: str) -> list[SessionClickstream]:
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            try:
                out.append(SessionClickstream.from_json(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"line {line_no}: bad session record ({exc})") from None
    return out


def kde_table(streams, policy: TimeoutPolicy, lo: float = -5.0, hi: float = 10.0,
              points: int = 301) -> list[tuple[str, float, float]]:
    """(category, log_minute, density) rows for the long/short click categories."""
    grid = np.linspace(lo, hi, points)
    rows = []
    streams = list(streams)
    for name, keep in (("long", lambda c: c in policy.long_categories),
                       ("short", lambda c: c not in policy.long_categories)):
        gaps = waiting_gaps(streams, keep)
        if gaps.size < 2:
            continue
        dens = LogGapDensity(gaps)(grid)
        rows.extend((name, float(x), float(d)) for x, d in zip(grid, dens))
    return rows


def group_by_student_week(sessions: Iterable[SessionClickstream]):
    key = lambda s: (s.student, s.week)  # noqa: E731
    return {k: list(g) for k, g in groupby(sorted(sessions, key=key), key=key)}
