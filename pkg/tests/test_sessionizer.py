import json
import math
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strategy_miner.course_model import ValidationError
from strategy_miner.sessionizer import (LogGapDensity, SessionClickstream, TimeoutPolicy,
                                        read_sessions_jsonl, session_summary, sessionize,
                                        sessionize_detailed, silverman_bandwidth,
                                        split_by_week, split_on_load_course, split_on_timeout,
                                        waiting_gaps, waiting_time_log_kde, write_sessions_jsonl)

from conftest import T0, at, click, two_weeks

LOAD, NAV, POST = 0, 15, 6


@pytest.fixture(scope="module")
def policy(taxonomy):
    return TimeoutPolicy.default(taxonomy)


def test_default_long_categories(taxonomy, policy):
    labels = {taxonomy[i].label for i in policy.long_categories}
    assert "View chapter in lecture notes" in labels
    assert "View homework chapter" in labels
    assert "View general post" not in labels
    assert LOAD not in policy.long_categories


def test_week_boundaries_closed_at_start_open_at_end():
    weeks = two_weeks()
    events = [click(0, POST), click(7 * 24 * 60, POST), click(14 * 24 * 60, POST)]
    parts, dropped = split_by_week(events, weeks)
    assert [len(parts[0]), len(parts[1])] == [1, 1]
    assert parts[1][0].timestamp == weeks[1].start
    assert dropped == 1


def test_ten_events_over_two_weeks_partition():
    events = [click(m, POST) for m in np.linspace(0, 13 * 24 * 60, 10)]
    parts, dropped = split_by_week(events, two_weeks())
    assert sum(len(p) for p in parts.values()) == 10 and dropped == 0


def _types(chunks):
    return [[e.click_type for e in c] for c in chunks]


def test_load_course_split():
    s = [click(0, LOAD), click(1, 1), click(2, 2), click(3, LOAD), click(4, 3)]
    assert _types(split_on_load_course(s, LOAD)) == [[LOAD, 1, 2], [LOAD, 3]]
    assert _types(split_on_load_course(s[1:3], LOAD)) == [[1, 2]]
    assert _types(split_on_load_course([click(0, LOAD), click(1, LOAD)], LOAD)) == [[LOAD], [LOAD]]
    assert split_on_load_course([], LOAD) == []


def test_timeout_rule_examples(policy):
    s = [click(0, POST), click(1, NAV), click(71, POST)]
    assert _types(split_on_timeout(s, policy)) == [[POST, NAV], [POST]]
    assert len(split_on_timeout([click(0, POST), click(4, POST)], policy)) == 1
    assert len(split_on_timeout([click(0, POST), click(6, POST)], policy)) == 2
    # the threshold is inclusive
    assert len(split_on_timeout([click(0, POST), click(5, POST)], policy)) == 1
    assert len(split_on_timeout([click(0, NAV), click(60, POST)], policy)) == 1


def test_negative_gap_rejected(policy):
    with pytest.raises(ValidationError, match="negative gap"):
        split_on_timeout([click(5, POST), click(1, POST)], policy)


def test_singleton_and_empty(policy):
    assert sessionize([], two_weeks(), policy, LOAD) == []
    (only,) = sessionize([click(3, POST)], two_weeks(), policy, LOAD)
    assert only.tokens == [POST]


def test_dropped_counts_per_student(policy):
    events = [click(-5, POST, "a"), click(0, POST, "a"), click(-1, POST, "b")]
    res = sessionize_detailed(events, two_weeks(), policy, LOAD)
    assert res.dropped == 2 and res.dropped_by_student == {"a": 1, "b": 1}


def _brute_sessions(events, weeks, policy):
    """Boundary before click i iff week changes, click is Load course, or the gap is too long."""
    out = []
    for student in sorted({e.student for e in events}):
        mine = [e for e in events if e.student == student]
        prev, prev_week = None, None
        for e in mine:
            week = next((w.index for w in weeks if w.start <= e.timestamp < w.deadline), None)
            if week is None:
                continue
            new = (prev is None or week != prev_week or e.click_type == LOAD
                   or (e.timestamp - prev.timestamp).total_seconds()
                   > policy.threshold_seconds(prev.click_type))
            if new:
                out.append((student, week, []))
            out[-1][2].append(e)
            prev, prev_week = e, week
    return out


stream_st = st.lists(st.tuples(st.integers(0, 15 * 24 * 60), st.sampled_from([LOAD, NAV, POST, 22, 3]),
                               st.sampled_from(["a", "b"])), max_size=40)


@settings(max_examples=100, deadline=None)
@given(stream_st)
def test_sessionize_matches_brute_force(policy, rows):
    events = sorted((click(m, t, s) for m, t, s in rows), key=lambda e: e.timestamp)
    weeks = two_weeks()
    got = sessionize(events, weeks, policy, LOAD)
    want = _brute_sessions(events, weeks, policy)
    assert [(s.student, s.week, s.clicks) for s in got] == want
    inside = [e for e in events if any(w.contains(e.timestamp) for w in weeks)]
    assert sorted(sum((s.clicks for s in got), []), key=lambda e: (e.student, e.timestamp)) == \
        sorted(inside, key=lambda e: (e.student, e.timestamp))
    for s in got:
        assert all(a.timestamp <= b.timestamp for a, b in zip(s.clicks, s.clicks[1:]))
        assert LOAD not in s.tokens[1:]


@settings(max_examples=50, deadline=None)
@given(stream_st, st.floats(1, 30), st.floats(0, 60))
def test_longer_thresholds_never_add_sessions(taxonomy, rows, short, extra):
    events = sorted((click(m, t, s) for m, t, s in rows), key=lambda e: e.timestamp)
    tight = TimeoutPolicy.default(taxonomy, short + extra, short)
    loose = TimeoutPolicy.default(taxonomy, 2 * (short + extra), 2 * short)
    assert len(sessionize(events, two_weeks(), loose, LOAD)) <= \
        len(sessionize(events, two_weeks(), tight, LOAD))


def test_session_json_round_trip(policy):
    events = [click(0, LOAD), click(1, NAV), click(2, POST, "b")]
    sessions = sessionize(events, two_weeks(), policy, LOAD)
    text = write_sessions_jsonl(sessions)
    assert set(json.loads(text.splitlines()[0])) == \
        {"student", "week", "click_type_ids", "timestamps"}
    back = read_sessions_jsonl(text)
    assert [(s.student, s.week, s.tokens, [c.timestamp for c in s.clicks]) for s in back] == \
        [(s.student, s.week, s.tokens, [c.timestamp for c in s.clicks]) for s in sessions]
    with pytest.raises(ValidationError, match="line 1"):
        read_sessions_jsonl('{"student": "a"}\n')


def _fake(lengths):
    return [SessionClickstream("s", 0, [click(i, POST) for i in range(n)]) for n in lengths]


def test_session_summary_examples():
    s = session_summary(_fake([1, 2, 3]))
    assert s["mean"] == 2 and s["max"] == 3 and s["min"] == 1
    assert session_summary(_fake([4]))["sd"] == 0
    assert session_summary([])["count"] == 0


def test_session_summary_matches_recomputation():
    rng = np.random.default_rng(3)
    lengths = [int(x) for x in rng.integers(1, 20, size=100)]
    s = session_summary(_fake(lengths))
    mean = sum(lengths) / 100
    sd = math.sqrt(sum((x - mean) ** 2 for x in lengths) / 99)
    assert s["count"] == 100
    assert s["mean"] == pytest.approx(mean)
    assert s["sd"] == pytest.approx(sd)
    assert s["quantiles"]["0.5"] == pytest.approx(float(np.median(lengths)))
    assert s["single_click_share"] == pytest.approx(lengths.count(1) / 100)


def test_kde_integrates_to_one():
    rng = np.random.default_rng(0)
    dens = LogGapDensity(np.exp(rng.normal(1.0, 1.5, size=400)))
    x = np.linspace(-10, 10, 4001)
    assert np.trapezoid(dens(x), x) == pytest.approx(1.0, abs=0.01)


def test_kde_constant_gaps_peak_at_zero():
    dens = LogGapDensity([1.0] * 10)
    x = np.linspace(-3, 3, 601)
    assert x[np.argmax(dens(x))] == pytest.approx(0.0, abs=1e-9)
    assert np.trapezoid(dens(x), x) == pytest.approx(1.0, abs=0.01)


def test_kde_bimodal_maxima():
    rng = np.random.default_rng(1)
    gaps = np.concatenate([np.exp(rng.normal(0, 0.15, 300)),
                           np.exp(rng.normal(math.log(8), 0.15, 300))])
    dens = LogGapDensity(gaps)
    x = np.linspace(-2, 4, 1201)
    y = dens(x)
    peaks = x[1:-1][(y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])]
    assert len(peaks) == 2
    assert peaks[0] == pytest.approx(0.0, abs=0.1)
    assert peaks[1] == pytest.approx(math.log(8), abs=0.1)


def test_kde_needs_two_gaps():
    with pytest.raises(ValidationError):
        LogGapDensity([3.0])
    with pytest.raises(ValidationError):
        waiting_time_log_kde([[click(0, POST), click(1, POST)]])


def test_silverman_bandwidth_against_formula():
    x = np.array([0.0, 1.0, 2.0, 4.0, 8.0])
    sd = np.std(x, ddof=1)
    iqr = 4.0 - 1.0
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 5 ** -0.2)


def test_waiting_gaps_filter():
    streams = [[click(0, NAV), click(30, POST), click(33, POST)]]
    assert waiting_gaps(streams).tolist() == [30.0, 3.0]
    assert waiting_gaps(streams, {NAV}).tolist() == [30.0]
    assert waiting_gaps(streams, lambda c: c == POST).tolist() == [3.0]
