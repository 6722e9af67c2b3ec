from datetime import datetime, timedelta, timezone

import pytest

from strategy_miner.course_model import AssessmentWeek, ClickEvent, load_taxonomy

T0 = datetime(2019, 3, 4, tzinfo=timezone.utc)


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy()


def at(minutes: float) -> datetime:
    return T0 + timedelta(minutes=minutes)


def click(minutes: float, ctype: int, student: str = "s1") -> ClickEvent:
    return ClickEvent(at(minutes), student, ctype, "")


def two_weeks():
    return [AssessmentWeek(0, "homework", T0, T0 + timedelta(days=7)),
            AssessmentWeek(1, "exam", T0 + timedelta(days=7), T0 + timedelta(days=14))]


SMALL_RUN = {
    "lda": {"iterations": 40, "burn_in": 10},
    "embedding": {"windows": [1], "dims": [3], "max_steps": 2000},
    "prediction": {"grid": {"max_depth": [4], "max_features": ["sqrt"], "min_samples_leaf": [1],
                            "n_trees": [20]},
                   "n_perm": 2, "folds": 3},
    "seeds": {"lda": 1, "embedding": 2, "prediction": 3},
}


def write_course(directory, n_students=40, seed=0, **overrides):
    """Synthetic course files plus a small pipeline config; returns the config path."""
    import json

    from strategy_miner.synth_course import SynthConfig, generate
    directory.mkdir(parents=True, exist_ok=True)
    course = generate(SynthConfig(n_students=n_students, seed=seed, **overrides))
    (directory / "events.csv").write_text(course.event_log_csv())
    (directory / "roster.csv").write_text(course.roster_csv())
    (directory / "weeks.json").write_text(course.weeks_json())
    config = dict(SMALL_RUN, events="events.csv", roster="roster.csv", weeks="weeks.json",
                  out_dir="out")
    path = directory / "run.json"
    path.write_text(json.dumps(config))
    return path


# One summary line per acceptance criterion, printed after the run.
_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, dict(title=title, passed=True, ran=False, detail=[]))
    if report.when == "call":
        entry["ran"] = True
        entry["detail"] = [v for k, v in item.user_properties if k == "detail"]
    if report.failed or report.skipped:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        detail = "; ".join(entry["detail"])
        terminalreporter.write_line(f"criterion {number:>2} {status}  {entry['title']}"
                                    + (f"  [{detail}]" if detail else ""))
