import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from strategy_miner.course_model import (AssessmentWeek, ParseError, StudentRecord, Taxonomy,
                                         ValidationError, attendance_score, ks_two_sample,
                                         parse_event_log, parse_roster, parse_weeks,
                                         weeks_to_json, write_event_log, write_roster)

from conftest import T0, click, two_weeks

HEADER = "timestamp,student,click_type,object\n"


def test_default_taxonomy_has_37_types_and_table_labels(taxonomy):
    assert len(taxonomy) == 37
    for label in ("Load course", "View chapter in lecture notes", "View general post",
                  "View atom post", "View homework chapter", "View lecture notes atom"):
        taxonomy.id_of(label)
    assert taxonomy[taxonomy.load_course_id].label == "Load course"


def test_taxonomy_json_round_trip(taxonomy):
    again = Taxonomy.from_json(json.loads(json.dumps(taxonomy.to_json())))
    assert again.labels == taxonomy.labels


def test_taxonomy_rejects_duplicates_and_gaps(taxonomy):
    rows = taxonomy.to_json()
    with pytest.raises(ValidationError):
        Taxonomy.from_json(rows + [dict(rows[1], id=len(rows))])
    with pytest.raises(ValidationError):
        Taxonomy.from_json(rows[:3] + rows[4:])


def test_three_rows_come_back_in_time_order(taxonomy):
    text = HEADER + ("2019-03-04T10:05:00Z,s1,Load course,a\n"
                     "2019-03-04T10:01:00Z,s1,View atom post,b\n"
                     "2019-03-04T10:03:00+00:00,s2,3,c\n")
    events = parse_event_log(text.encode(), taxonomy)
    assert [e.timestamp.minute for e in events] == [1, 3, 5]
    assert events[1].click_type == 3


def test_equal_timestamps_keep_file_order(taxonomy):
    text = HEADER + "".join(f"2019-03-04T10:00:00Z,s1,{label},o{i}\n" for i, label in
                            enumerate(["View atom post", "Load course", "Search atom"]))
    assert [e.object for e in parse_event_log(text, taxonomy)] == ["o0", "o1", "o2"]


def test_unknown_label_is_named(taxonomy):
    text = HEADER + "2019-03-04T10:00:00Z,s1,Teleport,x\n"
    with pytest.raises(ParseError, match="Teleport") as info:
        parse_event_log(text, taxonomy)
    assert info.value.line == 2


def test_malformed_row_reports_line(taxonomy):
    text = HEADER + "2019-03-04T10:00:00Z,s1,Load course,x\n2019-03-04T10:01:00Z,s1\n"
    with pytest.raises(ParseError) as info:
        parse_event_log(text, taxonomy)
    assert info.value.line == 3


def test_jsonl_and_empty_input(taxonomy):
    assert parse_event_log(b"", taxonomy) == []
    line = json.dumps(dict(timestamp="2019-03-04T10:00:00Z", student="s", click_type=0, object="o"))
    assert parse_event_log(line + "\n", taxonomy)[0].click_type == 0
    with pytest.raises(ParseError) as info:
        parse_event_log(line + "\n{broken\n", taxonomy)
    assert info.value.line == 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.sampled_from(["a", "b", "c"]),
                          st.integers(0, 36)), max_size=30),
       st.sampled_from(["csv", "jsonl"]))
def test_event_log_round_trip(taxonomy, rows, fmt):
    events = sorted((click(m, t, s) for m, s, t in rows), key=lambda e: e.timestamp)
    text = write_event_log(events, taxonomy, fmt)
    once = parse_event_log(text, taxonomy)
    assert once == events
    assert parse_event_log(write_event_log(once, taxonomy, fmt), taxonomy) == once


def _roster_text(rows):
    return "student,week,kind,grade,lecture_polls,recitation_polls\n" + "".join(rows)


def test_roster_seven_weeks():
    rows = [f"s1,{w},{'exam' if w in (2, 6) else 'homework'},0.5,1;0;1,1\n" for w in range(7)]
    (rec,) = parse_roster(_roster_text(rows))
    assert len(rec.grades) == 7
    assert rec.lecture_polls[0] == [True, False, True]


def test_roster_range_and_duplicate_errors():
    with pytest.raises(ValidationError, match="range|\\[0, 1\\]"):
        parse_roster(_roster_text(["s1,0,homework,1.2,,\n"]))
    with pytest.raises(ValidationError, match="duplicate"):
        parse_roster(_roster_text(["s1,3,homework,0.2,,\n", "s1,3,homework,0.3,,\n"]))


def test_roster_round_trip():
    weeks = two_weeks()
    rec = StudentRecord("s9", {0: 0.25, 1: 0.75}, {0: [True, False], 1: []}, {0: [True], 1: []})
    (back,) = parse_roster(write_roster([rec], weeks))
    assert back == rec


def test_weeks_round_trip_and_overlap():
    weeks = two_weeks()
    assert parse_weeks(json.dumps(weeks_to_json(weeks))) == weeks
    bad = weeks_to_json(weeks)
    bad[1]["start"] = bad[0]["start"]
    with pytest.raises(ValidationError):
        parse_weeks(json.dumps(bad))


def test_attendance_score():
    assert attendance_score([True, False, True]) == pytest.approx(2 / 3)
    assert attendance_score([]) is None
    assert attendance_score([True]) == 1.0


@given(st.lists(st.booleans(), min_size=1, max_size=20), st.randoms())
def test_attendance_permutation_invariant(polls, rnd):
    shuffled = list(polls)
    rnd.shuffle(shuffled)
    assert attendance_score(shuffled) == attendance_score(polls)


def test_ks_examples():
    d, p = ks_two_sample([0.1, 0.5, 0.9], [0.1, 0.5, 0.9])
    assert d == 0 and p == pytest.approx(1.0)
    assert ks_two_sample([1, 2, 3], [4, 5, 6])[0] == 1.0
    assert ks_two_sample([1, 2], [1.5, 2.5])[0] == 0.5
    with pytest.raises(ValidationError):
        ks_two_sample([], [1.0])


@settings(max_examples=60)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30),
       st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_ks_symmetric_and_matches_brute_force(a, b):
    d1, p1 = ks_two_sample(a, b)
    d2, p2 = ks_two_sample(b, a)
    assert (d1, p1) == (d2, p2)
    brute = max(abs(sum(x <= t for x in a) / len(a) - sum(x <= t for x in b) / len(b))
                for t in a + b)
    assert d1 == pytest.approx(brute, abs=1e-12)
    mass_a = {x: Fraction(a.count(x), len(a)) for x in a}
    mass_b = {x: Fraction(b.count(x), len(b)) for x in b}
    assert (d1 == 0) == (mass_a == mass_b)
    assert 0 <= p1 <= 1


def test_ks_pvalue_uses_asymptotic_form():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(0.3, size=200)
    d, p = ks_two_sample(a, b)
    assert d == pytest.approx(stats.ks_2samp(a, b).statistic)
    lam = math.sqrt(300 * 200 / 500) * d
    series = 2 * sum((-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam) for k in range(1, 200))
    assert p == pytest.approx(series, rel=1e-9)
