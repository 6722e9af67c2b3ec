"""Synthetic course generator with planted strategies and grade signal.

Sessions are laid out in disjoint 4-hour slots with sub-5-minute click
gaps and a ``Load course`` click only at session starts, so the sessionizer
recovers the intended sessions exactly under the default timeout policy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from datetime import timedelta

import numpy as np

from .course_model import (AssessmentWeek, ClickEvent, StudentRecord, Taxonomy,
                           load_taxonomy, parse_timestamp, weeks_to_json,
                           write_event_log, write_roster)

SLOT_HOURS = 4
MAX_START_OFFSET_S = 30 * 60
MIN_GAP_S, MAX_GAP_S = 5, 240


@dataclass
class PlantedStrategy:
    name: str
    clicks: dict[str, float]
    usage: dict[str, float]


def default_strategies() -> list[PlantedStrategy]:
    return [
        PlantedStrategy("lecture review",
                        {"View chapter in lecture notes": 0.7, "View lecture notes atom": 0.2,
                         "Click link lecture notes": 0.1},
                        {"homework": 0.12, "exam": 0.40}),
        PlantedStrategy("homework engagement",
                        {"View atom post": 0.5, "View homework atom": 0.35, "View general post": 0.15},
                        {"homework": 0.35, "exam": 0.08}),
        PlantedStrategy("catch up on news",
                        {"View general post": 0.55, "View main post office": 0.25,
                         "View atom post": 0.2},
                        {"homework": 0.20, "exam": 0.15}),
        PlantedStrategy("look at homeworks",
                        {"View homework chapter": 0.9, "View homework atom": 0.1},
                        {"homework": 0.18, "exam": 0.04}),
        PlantedStrategy("recitation material",
                        {"View recitation chapter": 0.9, "View recitation atom": 0.1},
                        {"homework": 0.07, "exam": 0.06}),
        PlantedStrategy("library documentation",
                        {"View library documentation chapter": 0.8, "Search atom": 0.2},
                        {"homework": 0.06, "exam": 0.03}),
        PlantedStrategy("practice exams",
                        {"View practice exams chapter": 0.6, "View practice exam atom": 0.4},
                        {"homework": 0.02, "exam": 0.24}),
    ]


@dataclass
class GradeModel:
    intercept: float = 0.55
    n_sessions: float = 0.015
    n_clicks: float = 0.0
    attendance: float = 0.15
    homework_engagement: float = 0.0
    noise_sd: float = 0.08
    skip_rate: float = 0.03
    exam_mean: float = 0.72
    exam_sd: float = 0.12


@dataclass
class SynthConfig:
    n_students: int = 160
    weeks: list[str] = field(default_factory=lambda: ["homework", "homework", "exam", "homework",
                                                      "homework", "homework", "exam"])
    start: str = "2019-03-04T00:00:00+00:00"
    week_days: float = 7.0
    session_rate: dict[str, float] = field(default_factory=lambda: {"homework": 6.0, "exam": 10.0})
    activity_shape: float = 4.0
    mean_session_length: float = 4.0
    max_session_length: int = 30
    load_course_prob: float = 0.6
    mixture_concentration: float = 0.3
    strategies: list[PlantedStrategy] = field(default_factory=default_strategies)
    lecture_polls_per_week: int = 3
    recitation_polls_per_week: int = 1
    no_class_weeks: list[int] = field(default_factory=lambda: [-1])
    grade: GradeModel = field(default_factory=GradeModel)
    engagement_strategy: str = "homework engagement"
    seed: int = 0

    def __post_init__(self):
        if self.n_students < 1 or not self.weeks:
            raise ValueError("need at least one student and one week")
        if any(r < 0 for r in self.session_rate.values()):
            raise ValueError("session rates must be >= 0")
        if not 0 <= self.load_course_prob <= 1 or not 0 <= self.grade.skip_rate <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.max_session_length > 30:
            raise ValueError("sessions longer than 30 clicks do not fit the slot layout")
        for s in self.strategies:
            if min(s.clicks.values()) < 0 or sum(s.clicks.values()) <= 0:
                raise ValueError(f"strategy {s.name!r} has an invalid click distribution")

    @classmethod
    def from_json(cls, row: dict) -> "SynthConfig":
        row = dict(row)
        if "strategies" in row:
            row["strategies"] = [PlantedStrategy(**s) for s in row["strategies"]]
        if "grade" in row:
            row["grade"] = GradeModel(**row["grade"])
        return cls(**row)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SynthCourse:
    taxonomy: Taxonomy
    weeks: list[AssessmentWeek]
    events: list[ClickEvent]
    roster: list[StudentRecord]
    truth: dict

    def event_log_csv(self) -> str:
        return write_event_log(self.events, self.taxonomy, "csv")

    def roster_csv(self) -> str:
        return write_roster(self.roster, self.weeks)

    def weeks_json(self) -> str:
        return json.dumps(weeks_to_json(self.weeks), indent=1) + "\n"

    def truth_json(self) -> str:
        return json.dumps(self.truth, indent=1, sort_keys=True) + "\n"


def make_weeks(config: SynthConfig) -> list[AssessmentWeek]:
    start = parse_timestamp(config.start)
    span = timedelta(days=config.week_days)
    return [AssessmentWeek(i, kind, start + i * span, start + (i + 1) * span)
            for i, kind in enumerate(config.weeks)]


def homework_grade(g: GradeModel, n_sessions: int, n_clicks: int, attendance: float,
                   engagement: int, noise: float) -> float:
    raw = (g.intercept + g.n_sessions * n_sessions + g.n_clicks * n_clicks
           + g.attendance * attendance + g.homework_engagement * engagement + noise)
    return min(max(raw, 0.0), 1.0)


def generate(config: SynthConfig | None = None, taxonomy: Taxonomy | None = None) -> SynthCourse:
    config = config or SynthConfig()
    taxonomy = taxonomy or load_taxonomy()
    weeks = make_weeks(config)
    n_weeks = len(weeks)
    no_class = {i % n_weeks for i in config.no_class_weeks}
    load_id = taxonomy.load_course_id

    strat_types = []
    strat_probs = []
    for s in config.strategies:
        ids = [taxonomy.id_of(label) for label in s.clicks]
        if load_id in ids:
            raise ValueError("planted strategies may not emit 'Load course'")
        p = np.asarray(list(s.clicks.values()), dtype=float)
        strat_types.append(np.asarray(ids))
        strat_probs.append(p / p.sum())
    names = [s.name for s in config.strategies]
    engagement_idx = names.index(config.engagement_strategy) if config.engagement_strategy in names else -1
    usage = {}
    for kind in set(config.weeks):
        u = np.asarray([s.usage.get(kind, 0.0) for s in config.strategies], dtype=float)
        usage[kind] = u / u.sum()

    slots = int(config.week_days * 24 // SLOT_HOURS)
    width = max(3, len(str(config.n_students - 1)))
    events: list[ClickEvent] = []
    roster: list[StudentRecord] = []
    truth_rows = []
    g = config.grade
    streams = np.random.SeedSequence(config.seed).spawn(config.n_students)
    for si, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        student = f"s{si:0{width}d}"
        activity = rng.gamma(config.activity_shape, 1.0 / config.activity_shape)
        p_lecture = rng.beta(4, 2)
        p_recitation = rng.beta(3, 2)
        rec = StudentRecord(student)
        for w in weeks:
            if w.index in no_class:
                lect, reci = [], []
            else:
                lect = [bool(x) for x in rng.random(config.lecture_polls_per_week) < p_lecture]
                reci = [bool(x) for x in rng.random(config.recitation_polls_per_week) < p_recitation]
            rec.lecture_polls[w.index] = lect
            rec.recitation_polls[w.index] = reci
            skipped = w.kind == "homework" and rng.random() < g.skip_rate
            n_sess = 0 if skipped else int(min(rng.poisson(config.session_rate[w.kind] * activity), slots))
            chosen = np.sort(rng.choice(slots, size=n_sess, replace=False))
            session_truth = []
            n_clicks = 0
            engagement = 0
            for slot in chosen:
                theta = rng.dirichlet(config.mixture_concentration * len(names) * usage[w.kind] + 1e-3)
                length = min(1 + rng.poisson(config.mean_session_length - 1), config.max_session_length)
                types, zs = [], []
                for pos in range(length):
                    if pos == 0 and rng.random() < config.load_course_prob:
                        types.append(load_id)
                        zs.append(-1)
                        continue
                    z = int(rng.choice(len(names), p=theta))
                    types.append(int(rng.choice(strat_types[z], p=strat_probs[z])))
                    zs.append(z)
                t = w.start + timedelta(hours=int(slot) * SLOT_HOURS,
                                        seconds=int(rng.integers(0, MAX_START_OFFSET_S)))
                stamps = []
                for pos, ctype in enumerate(types):
                    if pos:
                        t = t + timedelta(seconds=int(rng.integers(MIN_GAP_S, MAX_GAP_S + 1)))
                    stamps.append(t)
                    events.append(ClickEvent(t, student, ctype,
                                             f"{taxonomy[ctype].area}:{int(rng.integers(0, 40))}"))
                planted = [z for z in zs if z >= 0]
                dominant = int(np.bincount(planted, minlength=len(names)).argmax()) if planted else -1
                engagement += dominant == engagement_idx
                n_clicks += length
                session_truth.append(dict(start=stamps[0].isoformat(), length=length,
                                          strategy_per_click=zs, dominant=dominant))
            lect_att = (sum(lect) / len(lect)) if lect else None
            if w.kind == "exam":
                grade = min(max(rng.normal(g.exam_mean, g.exam_sd), 0.0), 1.0)
            elif skipped:
                grade = 0.0
            else:
                noise = rng.normal(0.0, g.noise_sd) if g.noise_sd > 0 else 0.0
                grade = homework_grade(g, n_sess, n_clicks, lect_att or 0.0, engagement, noise)
            rec.grades[w.index] = float(grade)
            truth_rows.append(dict(student=student, week=w.index, kind=w.kind, skipped=bool(skipped),
                                   n_sessions=n_sess, n_clicks=n_clicks,
                                   engagement_sessions=int(engagement),
                                   dominant_counts=np.bincount(
                                       [s["dominant"] for s in session_truth if s["dominant"] >= 0],
                                       minlength=len(names)).tolist(),
                                   sessions=session_truth))
        roster.append(rec)

    events.sort(key=lambda e: e.timestamp)
    truth = dict(strategies=names, coefficients=asdict(g), student_weeks=truth_rows,
                 config_seed=config.seed)
    return SynthCourse(taxonomy, weeks, events, roster, truth)


def expected_sessions(truth: dict) -> int:
    return sum(r["n_sessions"] for r in truth["student_weeks"])


def intended_boundaries(truth: dict) -> set[tuple[str, str]]:
    """(student, first-click ISO timestamp) for every planted session."""
    return {(r["student"], s["start"]) for r in truth["student_weeks"] for s in r["sessions"]}


def strategy_week_means(truth: dict, strategy: str) -> dict[str, float]:
    """Mean number of sessions dominated by ``strategy`` per student-week, by week kind."""
    idx = truth["strategies"].index(strategy)
    by_kind: dict[str, list[int]] = {}
    for r in truth["student_weeks"]:
        by_kind.setdefault(r["kind"], []).append(r["dominant_counts"][idx])
    return {k: float(np.mean(v)) for k, v in by_kind.items()}

