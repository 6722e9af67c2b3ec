"""Random forests with impurity-based importance, partial dependence and
label-permutation significance tests.
"""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .trees import Tree, fit_tree

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    max_features: str | int | float = "sqrt"
    min_samples_leaf: int = 1
    bootstrap: bool = True

    def resolve_max_features(self, d: int) -> int:
        mf = self.max_features
        if mf in (None, "all"):
            return d
        if mf == "sqrt":
            return max(1, int(math.sqrt(d)))
        if mf == "third":
            return max(1, d // 3)
        if isinstance(mf, float):
            return max(1, min(d, int(mf * d)))
        return max(1, min(d, int(mf)))


@dataclass
class GridSpec:
    max_depth: list = field(default_factory=lambda: [3, 5, 10, None])
    max_features: list = field(default_factory=lambda: ["sqrt", "third", "all"])
    min_samples_leaf: list = field(default_factory=lambda: [1, 5, 10])
    n_trees: list = field(default_factory=lambda: [100, 300])

    def __post_init__(self):
        for name in ("max_depth", "max_features", "min_samples_leaf", "n_trees"):
            if not getattr(self, name):
                raise ValueError(f"grid choice list {name!r} is empty")

    def points(self) -> list[ForestParams]:
        return [ForestParams(n_trees=t, max_depth=md, max_features=mf, min_samples_leaf=ml)
                for md, mf, ml, t in itertools.product(self.max_depth, self.max_features,
                                                        self.min_samples_leaf, self.n_trees)]


@dataclass
class ForestModel:
    trees: list[Tree]
    task: str
    params: ForestParams
    n_features: int
    classes: np.ndarray | None = None
    tree_seeds: list[int] = field(default_factory=list)

    @property
    def impurity(self) -> str:
        return "gini" if self.task == CLASSIFICATION else "mse"


def resolve_task(task: str) -> str:
    aliases = {"classification": CLASSIFICATION, "classifier": CLASSIFICATION,
               "assessment_kind": CLASSIFICATION, "regression": REGRESSION,
               "regressor": REGRESSION, "homework_grade": REGRESSION}
    try:
        return aliases[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}") from None


def _map(fn, items, n_jobs: int):
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def fit_forest(X, y, task: str = CLASSIFICATION, params: ForestParams | None = None,
               seed: int = 0, n_jobs: int = 1) -> ForestModel:
    """Fit ``params.n_trees`` CART trees, each on its own seeded bootstrap stream."""
    task = resolve_task(task)
    params = params or ForestParams()
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if y.shape[0] != n:
        raise ValueError("X and y lengths differ")
    if task == CLASSIFICATION:
        classes, y_cls = np.unique(y, return_inverse=True)
        y_cls = y_cls.astype(np.int64)
        y_reg = np.zeros(n)
        if classes.size == 1:
            warnings.warn("single class in training labels: model always predicts it")
    else:
        classes, y_cls = None, np.zeros(n, dtype=np.int64)
        y_reg = y.astype(float)
    n_classes = 1 if classes is None else classes.size
    mf = params.resolve_max_features(d)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(params.n_trees)]

    def grow(tree_seed: int) -> Tree:
        rng = np.random.default_rng(tree_seed)
        sample = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        return fit_tree(X, y_cls, y_reg, sample, n_classes, task == CLASSIFICATION,
                        params.max_depth, mf, params.min_samples_leaf, rng)

    trees = _map(grow, seeds, n_jobs)
    return ForestModel(trees, task, params, d, classes, seeds)


def _check_dims(model: ForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {X.shape}")
    return X


def predict_proba(model: ForestModel, X) -> np.ndarray:
    """Vote shares: each tree votes for its highest-probability class."""
    X = _check_dims(model, X)
    votes = np.zeros((X.shape[0], model.classes.size))
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        votes[rows, np.argmax(tree.predict_value(X), axis=1)] += 1.0
    return votes / len(model.trees)


def predict(model: ForestModel, X) -> np.ndarray:
    if model.task == CLASSIFICATION:
        return model.classes[np.argmax(predict_proba(model, X), axis=1)]
    X = _check_dims(model, X)
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += tree.predict_value(X)[:, 0]
    return total / len(model.trees)


def accuracy(y_true, y_pred) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def mse(y_true, y_pred) -> float:
    return float(np.mean((np.asarray(y_true, float) - np.asarray(y_pred, float)) ** 2))


def neg_mse(y_true, y_pred) -> float:
    return -mse(y_true, y_pred)


def default_metric(task: str) -> Callable:
    return accuracy if resolve_task(task) == CLASSIFICATION else neg_mse


def split_indices(n: int, test_share: float = 0.2, seed: int = 0):
    if not 0 < test_share < 1:
        raise ValueError("test_share must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(math.floor(n * test_share))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_test_split(X, y, test_share: float = 0.2, seed: int = 0):
    X, y = np.asarray(X), np.asarray(y)
    tr, te = split_indices(len(y), test_share, seed)
    return X[tr], X[te], y[tr], y[te]


def kfold_indices(n: int, folds: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    if folds > n:
        raise ValueError(f"cannot make {folds} folds from {n} rows")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    perm = np.random.default_rng(seed).permutation(n)
    chunks = np.array_split(perm, folds)
    return [(np.sort(np.concatenate(chunks[:i] + chunks[i + 1:])), np.sort(chunks[i]))
            for i in range(folds)]


def cv_score(X, y, task, params: ForestParams, folds: int = 5, seed: int = 0,
             metric: Callable | None = None, n_jobs: int = 1) -> list[float]:
    metric = metric or default_metric(task)
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    scores = []
    for k, (tr, te) in enumerate(kfold_indices(len(y), folds, seed)):
        model = fit_forest(X[tr], y[tr], task, params, seed=seed + 7919 * (k + 1), n_jobs=n_jobs)
        scores.append(float(metric(y[te], predict(model, X[te]))))
    return scores


def grid_search_cv(X, y, task, grid: GridSpec | Sequence[ForestParams] | None = None,
                   folds: int = 5, seed: int = 0, metric: Callable | None = None,
                   n_jobs: int = 1) -> tuple[ForestParams, list[dict]]:
    """Mean k-fold score per grid point; the first-listed point wins ties."""
    grid = grid or GridSpec()
    points = grid.points() if isinstance(grid, GridSpec) else list(grid)
    if not points:
        raise ValueError("empty grid")
    if folds > len(y):
        raise ValueError(f"cannot make {folds} folds from {len(y)} rows")
    table = []
    best, best_score = None, -math.inf
    for params in points:
        scores = cv_score(X, y, task, params, folds, seed, metric, n_jobs)
        mean = float(np.mean(scores))
        table.append(dict(params=asdict(params), mean_score=mean, fold_scores=scores))
        if mean > best_score:
            best, best_score = params, mean
    return best, table


def per_tree_importance(model: ForestModel) -> np.ndarray:
    return np.vstack([t.feature_importance(model.n_features) for t in model.trees])


def mdi(model: ForestModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean decrease in impurity: tree-average of sum p(t) * decrease per feature.

    Returns the raw values and the sum-to-one normalised variant.
    """
    raw = per_tree_importance(model).mean(axis=0)
    total = raw.sum()
    return raw, (raw / total if total > 0 else np.zeros_like(raw))


def mdi_intervals(model: ForestModel, n_boot: int = 1000, seed: int = 0, level: float = 0.95):
    """Percentile intervals for raw and normalised MDI from resampling trees."""
    per_tree = per_tree_importance(model)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(model.trees), size=(n_boot, len(model.trees)))
    means = per_tree[draws].mean(axis=1)
    sums = means.sum(axis=1, keepdims=True)
    norm = np.divide(means, sums, out=np.zeros_like(means), where=sums > 0)
    q = [(1 - level) / 2 * 100, (1 + level) / 2 * 100]
    return np.percentile(means, q, axis=0).T, np.percentile(norm, q, axis=0).T


def partial_dependence(model, X, feature: int, grid_points: int = 20,
                       positive_class=None) -> list[tuple[float, float]]:
    """Mean prediction with ``feature`` overwritten by each quantile-grid value.

    ``model`` is a ForestModel or any callable mapping X to predictions.
    Classifiers contribute the vote share of ``positive_class`` (default: last class).
    """
    X = np.asarray(X, dtype=float)
    grid = np.unique(np.quantile(X[:, feature], np.linspace(0, 1, grid_points)))
    if isinstance(model, ForestModel):
        if model.task == CLASSIFICATION:
            classes = list(model.classes)
            col = classes.index(positive_class) if positive_class is not None else len(classes) - 1
            fn = lambda Z: predict_proba(model, Z)[:, col]  # noqa: E731
        else:
            fn = lambda Z: predict(model, Z)  # noqa: E731
    else:
        fn = model
    out = []
    Z = X.copy()
    for v in grid:
        Z[:, feature] = v
        out.append((float(v), float(np.mean(fn(Z)))))
    return out


@dataclass
class PermutationResult:
    p_value: float
    observed: float
    permuted: list[float]


def permutation_test(X, y, params: ForestParams, task: str, metric: Callable | None = None,
                     n_perm: int = 100, seed: int = 0, folds: int = 5,
                     n_jobs: int = 1) -> PermutationResult:
    """Refit under label permutations; p = (1 + #{permuted >= observed}) / (1 + n_perm).

    Scores are k-fold CV means with the same folds for the observed and
    permuted labels.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    y = np.asarray(y)
    observed = float(np.mean(cv_score(X, y, task, params, folds, seed, metric, n_jobs)))
    perm_seeds = np.random.SeedSequence(seed).spawn(n_perm)
    permuted = []
    for ss in perm_seeds:
        y_perm = np.random.default_rng(ss).permutation(y)
        permuted.append(float(np.mean(cv_score(X, y_perm, task, params, folds, seed, metric,
                                               n_jobs))))
    hits = sum(s >= observed for s in permuted)
    return PermutationResult((1 + hits) / (1 + n_perm), observed, permuted)
