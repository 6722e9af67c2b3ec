"""``strategy-miner`` command line.

Exit codes: 0 success, 2 invalid input or arguments, 1 any other failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import click_embedding as ce
from . import prediction as pr
from .course_model import (ValidationError, load_taxonomy, parse_event_log, parse_roster,
                           parse_weeks, write_event_log)
from .feature_builder import FeatureMatrix, build_features, label_rows
from .pattern_miner import StrategyCluster, export_dendrogram, mine_strategies
from .pipeline import (PipelineConfig, PipelineError, _clean, distances_csv, dump_json,
                       prediction_report, run_pipeline)
from .seqdist import jaro, jaro_winkler, normalized_levenshtein, parse_tokens
from .sessionizer import (TimeoutPolicy, kde_table, pre_timeout_streams, read_sessions_jsonl,
                          session_summary, sessionize_detailed, write_sessions_jsonl)
from .synth_course import SynthConfig, generate
from .topic_model import LdaConfig, TopicModel, coherence_detail, fit_lda, top_click_types


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


class _Ctx:
    def __init__(self, args):
        self.args = args
        self.out_dir = Path(args.out_dir) if getattr(args, "out_dir", None) else None

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        if self.out_dir is not None and not p.is_absolute():
            self.out_dir.mkdir(parents=True, exist_ok=True)
            return self.out_dir / p
        return p

    def write(self, p: str | None, text: str) -> None:
        target = self.path(p)
        if target is None:
            sys.stdout.write(text)
        else:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")

    def seed(self, default: int = 0) -> int:
        s = getattr(self.args, "seed", None)
        return default if s is None else s

    @property
    def threads(self) -> int:
        return getattr(self.args, "threads", None) or 1


def _taxonomy(args):
    return load_taxonomy(getattr(args, "taxonomy", None))


def cmd_ingest(ctx: _Ctx) -> None:
    a = ctx.args
    taxonomy = _taxonomy(a)
    events = parse_event_log(Path(a.events).read_bytes(), taxonomy)
    summary = dict(n_events=len(events), n_students=len({e.student for e in events}))
    if a.roster:
        summary["n_roster_students"] = len(parse_roster(Path(a.roster).read_bytes()))
    if a.weeks:
        summary["n_weeks"] = len(parse_weeks(Path(a.weeks).read_text()))
    if a.out:
        ctx.write(a.out, write_event_log(events, taxonomy, a.format))
    print(json.dumps(summary, sort_keys=True))


def cmd_sessionize(ctx: _Ctx) -> None:
    a = ctx.args
    taxonomy = _taxonomy(a)
    events = parse_event_log(Path(a.events).read_bytes(), taxonomy)
    weeks = parse_weeks(Path(a.weeks).read_text())
    policy = TimeoutPolicy.default(taxonomy, a.long_min, a.short_min)
    result = sessionize_detailed(events, weeks, policy, taxonomy.load_course_id)
    ctx.write(a.out, write_sessions_jsonl(result.sessions))
    if a.kde:
        rows = kde_table(pre_timeout_streams(events, weeks, taxonomy.load_course_id), policy)
        lines = ["category,log_minute,density"] + [f"{c},{x!r},{d!r}" for c, x, d in rows]
        ctx.write(a.kde, "\n".join(lines) + "\n")
    summary = session_summary(result.sessions)
    summary["dropped_events"] = result.dropped
    print(json.dumps(_clean(summary), sort_keys=True), file=sys.stderr if a.out is None else sys.stdout)


def cmd_dist(ctx: _Ctx) -> None:
    p1, p2 = parse_tokens(ctx.args.a), parse_tokens(ctx.args.b)
    if not p1 or not p2:
        raise ValidationError("both token lists must be non-empty")
    jw = jaro_winkler(p1, p2)
    print(f"jaro\t{jaro(p1, p2):.6f}")
    print(f"jaro_winkler\t{jw:.6f}")
    print(f"jw_distance\t{1 - jw:.6f}")
    print(f"normalized_levenshtein\t{normalized_levenshtein(p1, p2):.6f}")


def _sessions(path: str):
    return read_sessions_jsonl(Path(path).read_text(encoding="utf-8"))


def cmd_mine(ctx: _Ctx) -> None:
    a = ctx.args
    labels = [s.strip() for s in a.labels.split(",")] if a.labels else None
    clusters, dendro = mine_strategies(_sessions(a.sessions), tuple(a.n), a.share, a.k, labels)
    ctx.write(a.out, dump_json(dict(n_candidates=len(dendro.leaves),
                                    clusters=[c.to_json() for c in clusters])))
    if a.dendrogram:
        ctx.write(a.dendrogram, dump_json(export_dendrogram(dendro)))


def cmd_lda(ctx: _Ctx) -> None:
    a = ctx.args
    taxonomy = _taxonomy(a)
    cfg = LdaConfig(k=a.k, iterations=a.iters, burn_in=min(a.burn_in, a.iters - 1), beta=a.beta,
                    seed=ctx.seed())
    model = fit_lda(_sessions(a.sessions), cfg, vocab_size=len(taxonomy))
    ctx.write(a.out, dump_json(model.to_json()))


def cmd_lda_topics(ctx: _Ctx) -> None:
    a = ctx.args
    taxonomy = _taxonomy(a)
    model = TopicModel.from_json(_read_json(a.model))
    corpus = _sessions(a.sessions) if a.sessions else None
    for t in range(model.k):
        head = f"topic {t}"
        if corpus is not None:
            score, skipped = coherence_detail(model, corpus, t, a.coherence_top)
            head += f"  coherence {score:.3f}"
            if skipped:
                head += f" ({len(skipped)} pairs skipped)"
        print(head)
        for w, p in top_click_types(model, t, a.top):
            print(f"  {taxonomy[w].label} ({100 * p:.2f} %)")


def cmd_embed(ctx: _Ctx) -> None:
    a = ctx.args
    taxonomy = _taxonomy(a)
    sessions = _sessions(a.sessions)
    base = ce.SkipgramConfig(seed=ctx.seed(), max_steps=a.max_steps)
    if a.grid:
        grid = _read_json(a.grid)
        windows, dims = grid.get("windows", [1, 2]), grid.get("dims", [3, 4])
    else:
        windows, dims = [a.window], [a.dim]
    model, results = ce.grid_select(sessions, windows, dims, base, vocab_size=len(taxonomy))
    out = model.to_json()
    out["grid"] = results
    ctx.write(a.out, dump_json(_clean(out)))
    if a.distances:
        ctx.write(a.distances, distances_csv(ce.distance_matrix(model), taxonomy.labels))


def cmd_features(ctx: _Ctx) -> None:
    a = ctx.args
    clusters = [StrategyCluster.from_json(c) for c in _read_json(a.clusters)["clusters"]]
    roster = parse_roster(Path(a.roster).read_bytes())
    weeks = parse_weeks(Path(a.weeks).read_text())
    fm = build_features(_sessions(a.sessions), clusters, roster, weeks)
    if a.task:
        fm = label_rows(fm, a.task)
    ctx.write(a.out, fm.to_csv())


def cmd_predict(ctx: _Ctx) -> None:
    a = ctx.args
    fm = FeatureMatrix.from_csv(Path(a.features).read_text(encoding="utf-8"))
    if fm.labels is None:
        raise ValidationError("features file has no labels; build it with --task")
    if pr.resolve_task(a.task) == pr.REGRESSION:
        fm.labels = fm.labels.astype(float)
    else:
        fm.labels = np.asarray([str(v) for v in fm.labels])
    settings = dict(grid=_read_json(a.grid) if a.grid else None, folds=a.folds,
                    test_share=a.test_share, n_perm=a.n_perm)
    report = prediction_report(fm, a.task, settings, ctx.seed(), ctx.threads)
    ctx.write(a.out, dump_json(_clean(report)))


def cmd_synth(ctx: _Ctx) -> None:
    a = ctx.args
    row = _read_json(a.config) if a.config else {}
    if a.seed is not None:
        row["seed"] = a.seed
    try:
        config = SynthConfig.from_json(row)
    except TypeError as exc:
        raise ValidationError(f"bad synth config: {exc}") from exc
    course = generate(config, _taxonomy(a))
    ctx.write(a.out_events, course.event_log_csv())
    ctx.write(a.out_roster, course.roster_csv())
    if a.out_truth:
        ctx.write(a.out_truth, course.truth_json())
    if a.out_weeks:
        ctx.write(a.out_weeks, course.weeks_json())


def cmd_run(ctx: _Ctx) -> None:
    a = ctx.args
    if not a.config:
        raise ValidationError("run needs --config")
    config = PipelineConfig.from_json(_read_json(a.config), Path(a.config).parent)
    if a.out_dir:
        config.out_dir = a.out_dir
    if a.seed is not None:
        config.seeds = {k: a.seed for k in ("lda", "embedding", "prediction")}
    run_pipeline(config, ctx.threads)
    print(f"report written to {Path(config.out_dir) / 'report.json'}")


def _global_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    g.add_argument("--out-dir", default=argparse.SUPPRESS,
                   help="directory for relative output paths")
    g.add_argument("--taxonomy", default=argparse.SUPPRESS, help="taxonomy JSON (default: bundled)")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="strategy-miner", parents=[common],
                                     description="Mine study strategies from course clickstreams.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("ingest", cmd_ingest, "validate an event log (and optionally roster/weeks)")
    p.add_argument("--events", required=True)
    p.add_argument("--roster")
    p.add_argument("--weeks")
    p.add_argument("--out", help="write the normalized, sorted event log here")
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")

    p = add("sessionize", cmd_sessionize, "split events into session clickstreams")
    p.add_argument("--events", required=True)
    p.add_argument("--weeks", required=True)
    p.add_argument("--short-min", type=float, default=5.0)
    p.add_argument("--long-min", type=float, default=60.0)
    p.add_argument("--out")
    p.add_argument("--kde", help="CSV of waiting-time densities per category")

    p = add("dist", cmd_dist, "distances between two token lists")
    p.add_argument("a")
    p.add_argument("b")

    p = add("mine", cmd_mine, "n-gram candidates and average-linkage clusters")
    p.add_argument("--sessions", required=True)
    p.add_argument("--n", type=_int_list, default=[3, 4, 5])
    p.add_argument("--share", type=float, default=0.01)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--labels", help="comma-separated cluster labels")
    p.add_argument("--out", default="clusters.json")
    p.add_argument("--dendrogram")

    p = add("lda", cmd_lda, "fit LDA by collapsed Gibbs sampling")
    p.add_argument("--sessions", required=True)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--out", default="lda_model.json")

    p = add("lda-topics", cmd_lda_topics, "print top click types per topic")
    p.add_argument("--model", required=True)
    p.add_argument("--sessions", help="corpus for coherence scores")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--coherence-top", type=int, default=10)

    p = add("embed", cmd_embed, "skip-gram click-type embedding")
    p.add_argument("--sessions", required=True)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--grid", help='JSON {"windows": [...], "dims": [...]}')
    p.add_argument("--max-steps", type=int, default=300000)
    p.add_argument("--out", default="embedding_model.json")
    p.add_argument("--distances")

    p = add("features", cmd_features, "per student-week feature rows")
    p.add_argument("--sessions", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--roster", required=True)
    p.add_argument("--weeks", required=True)
    p.add_argument("--task", choices=["assessment_kind", "homework_grade"])
    p.add_argument("--out", default="features.csv")

    p = add("predict", cmd_predict, "random forest with MDI, PD and permutation test")
    p.add_argument("--features", required=True)
    p.add_argument("--task", required=True, choices=["assessment_kind", "homework_grade"])
    p.add_argument("--grid", help="JSON grid of hyperparameter lists")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--test-share", type=float, default=0.2)
    p.add_argument("--n-perm", type=int, default=100)
    p.add_argument("--out", default="prediction.json")

    p = add("synth", cmd_synth, "generate a synthetic course")
    p.add_argument("--out-events", required=True)
    p.add_argument("--out-roster", required=True)
    p.add_argument("--out-truth")
    p.add_argument("--out-weeks")

    add("run", cmd_run, "full pipeline from a config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "threads", "out_dir", "taxonomy"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        args.func(_Ctx(args))
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, ValidationError) else 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
