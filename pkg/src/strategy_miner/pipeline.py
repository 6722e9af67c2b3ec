"""End-to-end run: ingest, sessionize, mine, LDA, embed, features, predict.

Every stage writes its artifact into the output directory; ``report.json``
collects the summaries. Outputs depend only on inputs, config and seeds.
"""
from __future__ import annotations

import csv
import io
import json
import os
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import click_embedding as ce
from . import prediction as pr
from .course_model import (ValidationError, ks_two_sample, load_taxonomy, parse_event_log,
                           parse_roster, parse_weeks)
from .feature_builder import active_share, build_features, label_rows
from .pattern_miner import export_dendrogram, mine_strategies
from .sessionizer import (TimeoutPolicy, kde_table, pre_timeout_streams, session_summary,
                          sessionize_detailed, write_sessions_jsonl)
from .topic_model import LdaConfig, coherence_detail, fit_lda, top_click_types

REPORT_SECTIONS = ("ingest", "sessions", "strategies", "embedding", "assessment_kind",
                   "homework_grade", "grade_distributions")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class PipelineConfig:
    events: str
    weeks: str
    roster: str
    out_dir: str = "out"
    taxonomy: str | None = None
    sessionizer: dict = field(default_factory=lambda: {"short_min": 5.0, "long_min": 60.0})
    miner: dict = field(default_factory=lambda: {"n": [3, 4, 5], "share": 0.01, "k": 9,
                                                 "labels": None})
    lda: dict = field(default_factory=lambda: {"k": 9, "iterations": 1000, "burn_in": 200,
                                               "beta": 0.01, "top": 5, "coherence_top": 10})
    embedding: dict = field(default_factory=lambda: {"windows": [1, 2], "dims": [3, 4],
                                                     "max_steps": 300000})
    prediction: dict = field(default_factory=lambda: {
        "tasks": ["assessment_kind", "homework_grade"], "grid": None, "folds": 5,
        "test_share": 0.2, "n_perm": 100, "pd_features": 3, "pd_points": 20})
    seeds: dict = field(default_factory=lambda: {"lda": 0, "embedding": 0, "prediction": 0})

    @classmethod
    def from_json(cls, row: dict, base_dir: str | os.PathLike = ".") -> "PipelineConfig":
        defaults = cls("", "", "")
        merged = {}
        for key, value in row.items():
            if key not in asdict(defaults):
                raise ValidationError(f"unknown pipeline config key {key!r}")
            default = getattr(defaults, key)
            merged[key] = {**default, **value} if isinstance(default, dict) else value
        for key in ("events", "weeks", "roster"):
            if key not in merged:
                raise ValidationError(f"pipeline config needs {key!r}")
        cfg = cls(**merged)
        base = Path(base_dir)
        for key in ("events", "weeks", "roster", "out_dir", "taxonomy"):
            value = getattr(cfg, key)
            if value is not None and not os.path.isabs(value):
                setattr(cfg, key, str(base / value))
        paths = [p for p in (cfg.events, cfg.weeks, cfg.roster, cfg.taxonomy, cfg.out_dir) if p]
        if len({os.path.abspath(p) for p in paths}) != len(paths):
            raise ValidationError("pipeline paths must be distinct")
        return cfg


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def distances_csv(matrix: np.ndarray, labels) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["click_type", *labels])
    for label, row in zip(labels, matrix):
        writer.writerow([label, *[repr(float(v)) for v in row]])
    return buf.getvalue()


def _clean(obj):
    """Replace non-finite floats by None so the report stays strict JSON."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def prediction_report(matrix, task: str, settings: dict, seed: int, n_jobs: int = 1) -> dict:
    """Grid-searched forest with test metric, MDI (+intervals), PD curves and permutation p."""
    X, y = matrix.values, matrix.labels
    kind = pr.resolve_task(task)
    tr, te = pr.split_indices(len(y), settings.get("test_share", 0.2), seed)
    grid = settings.get("grid")
    grid = pr.GridSpec(**grid) if grid else pr.GridSpec()
    folds = settings.get("folds", 5)
    best, table = pr.grid_search_cv(X[tr], y[tr], kind, grid, folds, seed, n_jobs=n_jobs)
    model = pr.fit_forest(X[tr], y[tr], kind, best, seed, n_jobs)
    metric = pr.default_metric(kind)
    raw, norm = pr.mdi(model)
    raw_ci, norm_ci = pr.mdi_intervals(model, seed=seed)
    top = np.argsort(-norm, kind="stable")[:settings.get("pd_features", 3)]
    positive = "exam" if kind == pr.CLASSIFICATION and "exam" in list(model.classes) else None
    pd_curves = {matrix.columns[f]: pr.partial_dependence(model, X[tr], int(f),
                                                          settings.get("pd_points", 20), positive)
                 for f in top}
    report = dict(
        task=task, n_rows=int(len(y)), n_train=int(tr.size), n_test=int(te.size),
        columns=list(matrix.columns), best_params=asdict(best), cv_table=table,
        train_score=metric(y[tr], pr.predict(model, X[tr])),
        test_score=metric(y[te], pr.predict(model, X[te])),
        metric="accuracy" if kind == pr.CLASSIFICATION else "neg_mse",
        mdi=dict(raw=raw.tolist(), normalized=norm.tolist(), raw_ci95=raw_ci.tolist(),
                 normalized_ci95=norm_ci.tolist()),
        partial_dependence={k: [list(p) for p in v] for k, v in pd_curves.items()},
    )
    if kind == pr.CLASSIFICATION:
        values, counts = np.unique(y[tr], return_counts=True)
        report["majority_baseline"] = float(counts.max() / counts.sum())
        report["majority_label"] = str(values[np.argmax(counts)])
    n_perm = settings.get("n_perm", 100)
    if n_perm:
        perm = pr.permutation_test(X[tr], y[tr], best, kind, n_perm=n_perm, seed=seed,
                                   folds=folds, n_jobs=n_jobs)
        report["permutation"] = dict(p_value=perm.p_value, observed=perm.observed,
                                     n_perm=n_perm)
    return report


def run_pipeline(config: PipelineConfig, n_jobs: int = 1) -> dict:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    done: list[str] = []
    report: dict = {}

    def write(name: str, text: str) -> None:
        (out / name).write_text(text, encoding="utf-8")

    def run_stage(name, fn):
        try:
            result = fn()
        except Exception as exc:  # noqa: BLE001 - rewrapped with the stage name
            write("status.json", dump_json(dict(status="failed", stage=name, error=str(exc),
                                                 completed_stages=done, partial=True)))
            raise PipelineError(name, exc) from exc
        done.append(name)
        return result

    def ingest():
        taxonomy = load_taxonomy(config.taxonomy)
        events = parse_event_log(Path(config.events).read_bytes(), taxonomy)
        weeks = parse_weeks(Path(config.weeks).read_text())
        roster = parse_roster(Path(config.roster).read_bytes())
        counts = Counter(e.click_type for e in events)
        total = max(len(events), 1)
        report["ingest"] = dict(
            n_events=len(events), n_students=len({e.student for e in events}),
            n_roster_students=len(roster), n_weeks=len(weeks),
            click_types=[dict(label=taxonomy[t].label, count=c, share=c / total)
                         for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))])
        return taxonomy, events, weeks, roster
    taxonomy, events, weeks, roster = run_stage("ingest", ingest)

    def sessions_stage():
        sc = config.sessionizer
        policy = TimeoutPolicy.default(taxonomy, sc.get("long_min", 60.0), sc.get("short_min", 5.0))
        result = sessionize_detailed(events, weeks, policy, taxonomy.load_course_id)
        write("sessions.jsonl", write_sessions_jsonl(result.sessions))
        streams = pre_timeout_streams(events, weeks, taxonomy.load_course_id)
        kde_rows = kde_table(streams, policy)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "log_minute", "density"])
        writer.writerows((c, repr(x), repr(d)) for c, x, d in kde_rows)
        write("kde.csv", buf.getvalue())
        report["sessions"] = dict(summary=session_summary(result.sessions),
                                  dropped_events=result.dropped,
                                  policy=dict(short_min=policy.short_threshold_minutes,
                                              long_min=policy.long_threshold_minutes,
                                              long_categories=sorted(policy.long_categories)))
        return result.sessions
    sessions = run_stage("sessionize", sessions_stage)

    def mine():
        mc = config.miner
        clusters, dendro = mine_strategies(sessions, tuple(mc.get("n", (3, 4, 5))),
                                           mc.get("share", 0.01), mc.get("k", 9), mc.get("labels"))
        write("clusters.json", dump_json(dict(n_candidates=len(dendro.leaves),
                                              clusters=[c.to_json() for c in clusters])))
        write("dendrogram.json", dump_json(export_dendrogram(dendro)))
        return clusters, dendro
    clusters, dendro = run_stage("mine", mine)

    def lda():
        lc = config.lda
        cfg = LdaConfig(k=lc.get("k", 9), beta=lc.get("beta", 0.01),
                        iterations=lc.get("iterations", 1000), burn_in=lc.get("burn_in", 200),
                        seed=config.seeds.get("lda", 0), alpha=lc.get("alpha"))
        model = fit_lda(sessions, cfg, vocab_size=len(taxonomy))
        write("lda_model.json", dump_json(model.to_json()))
        topics = []
        for t in range(model.k):
            score, skipped = coherence_detail(model, sessions, t, lc.get("coherence_top", 10))
            topics.append(dict(topic=t, coherence=score, skipped_pairs=len(skipped),
                               top=[dict(label=taxonomy[w].label, weight=p)
                                    for w, p in top_click_types(model, t, lc.get("top", 5))]))
        return topics
    topics = run_stage("lda", lda)

    report["strategies"] = dict(
        n_candidates=len(dendro.leaves),
        ngram=[dict(label=c.label, size=len(c.members),
                    representative=[taxonomy[t].label for t in c.representative],
                    shares=[dict(label=taxonomy[t].label, share=s)
                            for t, s in list(c.click_type_shares.items())[:5]])
               for c in clusters],
        lda=topics)

    def embed():
        ec = config.embedding
        base = ce.SkipgramConfig(seed=config.seeds.get("embedding", 0),
                                 max_steps=ec.get("max_steps", 300000))
        model, grid = ce.grid_select(sessions, ec.get("windows", [1, 2]), ec.get("dims", [3, 4]),
                                     base, vocab_size=len(taxonomy))
        dist = ce.distance_matrix(model)
        write("embedding_model.json", dump_json(model.to_json()))
        write("distances.csv", distances_csv(dist, taxonomy.labels))
        report["embedding"] = dict(grid=grid, window=model.config.window, dim=model.config.dim,
                                   final_loss=model.final_loss, labels=taxonomy.labels,
                                   distances=dist.tolist())
    run_stage("embed", embed)

    def features():
        fm = build_features(sessions, clusters, roster, weeks, include_attendance=True)
        labelled = {}
        for task in config.prediction.get("tasks", []):
            m = label_rows(fm, task)
            write(f"features_{task}.csv", m.to_csv())
            labelled[task] = m
        return fm, labelled
    fm, labelled = run_stage("features", features)

    def predict():
        seed = config.seeds.get("prediction", 0)
        for task in ("assessment_kind", "homework_grade"):
            if task not in labelled:
                report[task] = None
                continue
            rep = prediction_report(labelled[task], task, config.prediction, seed, n_jobs)
            if task == "assessment_kind":
                rep["active_share"] = active_share(fm)
            rep["strategy_labels"] = [c.label for c in clusters]
            write(f"prediction_{task}.json", dump_json(_clean(rep)))
            report[task] = rep
    run_stage("predict", predict)

    def finish():
        hw = [g for r in roster for w, g in r.grades.items() if weeks[w].kind == "homework"]
        ex = [g for r in roster for w, g in r.grades.items() if weeks[w].kind == "exam"]
        if hw and ex:
            d, p = ks_two_sample(hw, ex)
            report["grade_distributions"] = dict(test="two-sample Kolmogorov-Smirnov", D=d, p=p,
                                                 n_homework=len(hw), n_exam=len(ex))
        else:
            report["grade_distributions"] = None
        ordered = {k: _clean(report.get(k)) for k in REPORT_SECTIONS}
        write("report.json", dump_json(ordered))
        write("status.json", dump_json(dict(status="ok", completed_stages=done + ["report"])))
        return ordered
    return run_stage("report", finish)
