"""Metrics, cross-validation, KNN baselines, sweeps and runtime profiling."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .data import FoldPlan, fold_data, select_parents
from .inference import ChainConfig, CountCache, _Problem, initial_state, run_chain
from . import _kernels as K
from .model import CategoricalDataset, Hyperparameters, ParentSet, Variant
from .prediction import NEW_CASE_SWEEPS, classify, feature_importance, predict_theta_many

METRICS = ("accuracy", "sensitivity", "specificity", "precision", "recall", "f_measure")


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    recall: float
    f_measure: float
    confusion: np.ndarray            # rows: true class, columns: predicted class
    positive_class: int = 1
    precision_undefined: bool = False

    def as_dict(self) -> dict:
        d = {m: float(getattr(self, m)) for m in METRICS}
        d["confusion"] = self.confusion.tolist()
        d["positive_class"] = self.positive_class
        d["precision_undefined"] = self.precision_undefined
        return d


def _ratio(a, b) -> float:
    return float(a / b) if b else 0.0


def metrics_from_confusion(confusion, positive_class: int = 1) -> MetricSet:
    """One-vs-rest metrics for ``positive_class`` (0-based) from an M x M matrix."""
    cm = np.asarray(confusion, dtype=np.int64)
    p = positive_class
    tp = cm[p, p]
    fn = cm[p].sum() - tp
    fp = cm[:, p].sum() - tp
    tn = cm.sum() - tp - fn - fp
    sens = _ratio(tp, tp + fn)
    prec = _ratio(tp, tp + fp)
    f = 2 * prec * sens / (prec + sens) if prec + sens > 0 else 0.0
    return MetricSet(accuracy=_ratio(np.trace(cm), cm.sum()), sensitivity=sens,
                     specificity=_ratio(tn, tn + fp), precision=prec, recall=sens,
                     f_measure=f, confusion=cm, positive_class=p,
                     precision_undefined=bool(tp + fp == 0))


def confusion_metrics(predicted, true, positive_class: int = 1, n_classes: int | None = None) -> MetricSet:
    predicted = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if predicted.shape != true.shape:
        raise ValueError("predicted and true labels differ in length")
    M = n_classes or int(max(predicted.max(initial=0), true.max(initial=0), positive_class) + 1)
    M = max(M, 2)
    cm = np.zeros((M, M), dtype=np.int64)
    np.add.at(cm, (true, predicted), 1)
    return metrics_from_confusion(cm, positive_class)


@dataclass
class FoldResult:
    fold: int
    metrics: MetricSet
    seconds: float
    n_train: int
    n_test: int
    theta: np.ndarray | None = None
    q_mean: np.ndarray | None = None
    acceptance_rate_q: np.ndarray | None = None

    def as_dict(self) -> dict:
        d = {"fold": self.fold, "seconds": self.seconds, "n_train": self.n_train,
             "n_test": self.n_test, "metrics": self.metrics.as_dict()}
        if self.q_mean is not None:
            d["q_mean"] = self.q_mean.tolist()
        if self.acceptance_rate_q is not None:
            d["acceptance_rate_q"] = self.acceptance_rate_q.tolist()
        return d


@dataclass
class ExperimentReport:
    """Per-fold metrics with their mean and sample standard deviation (ddof=1)."""

    name: str
    folds: list[FoldResult]
    config: dict = field(default_factory=dict)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(f.metrics, metric) for f in self.folds])

    def mean(self, metric: str = "accuracy") -> float:
        return float(self.values(metric).mean())

    def std(self, metric: str = "accuracy") -> float:
        v = self.values(metric)
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    @property
    def seconds(self) -> float:
        return float(sum(f.seconds for f in self.folds))

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config,
            "folds": [f.as_dict() for f in self.folds],
            "mean": {m: self.mean(m) for m in METRICS},
            "std": {m: self.std(m) for m in METRICS},
            "seconds": self.seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, default=_json_default)

    def to_text(self) -> str:
        """Aligned table in percent, one row per fold plus Mean and SD."""
        head = ["Fold", "Accuracy", "Sensitivity", "Specificity", "Precision", "Recall", "F-measure"]
        rows = [[str(f.fold + 1), *(f"{100 * getattr(f.metrics, m):.2f}" for m in METRICS)]
                for f in self.folds]
        rows.append(["Mean", *(f"{100 * self.mean(m):.2f}" for m in METRICS)])
        rows.append(["SD", *(f"{100 * self.std(m):.2f}" for m in METRICS)])
        widths = [max(len(r[c]) for r in [head, *rows]) for c in range(len(head))]
        lines = [self.name, "  ".join(h.rjust(w) for h, w in zip(head, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Variant):
        return o.value
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _fold_seed(seed: int, f: int, salt: int = 0) -> int:
    return int(np.random.SeedSequence([int(seed), int(f), int(salt)]).generate_state(1)[0]
               & 0x7FFFFFFF)


# ---------------------------------------------------------------- cross-validation

def _run_fold(data, hp, config, plan, f, threshold, positive_class, n_sweeps_new):
    t0 = time.perf_counter()
    train, parents, test = fold_data(data, plan, f)
    cfg = replace(config, rng_seed=_fold_seed(config.rng_seed, f))
    fitted = run_chain(train, parents, hp, cfg)
    theta = predict_theta_many(test.features, fitted, parents, hp, n_sweeps_new,
                               rng_seed=_fold_seed(config.rng_seed, f, 1))
    pred = np.array([classify(t, threshold) for t in theta])
    m = confusion_metrics(pred, test.labels, positive_class, data.n_classes)
    return FoldResult(fold=f, metrics=m, seconds=time.perf_counter() - t0,
                      n_train=train.n_cases + parents.size, n_test=test.n_cases,
                      theta=theta, q_mean=fitted.q.mean(axis=0),
                      acceptance_rate_q=fitted.acceptance_rate_q)


def cross_validate(data: CategoricalDataset, hp: Hyperparameters, config: ChainConfig,
                   plan: FoldPlan, threshold: float = 0.5, positive_class: int = 1,
                   n_jobs: int = 1, n_sweeps_new: int = NEW_CASE_SWEEPS,
                   name: str = "cv") -> ExperimentReport:
    """Train per fold on the non-parent training cases and score the held-out fold.

    Parent labels are always used for prediction; ``config.supervised`` only
    decides whether training-case labels enter the chain.
    """
    if data.labels is None:
        raise ValueError("cross-validation needs labels")
    if any(p.size == 0 for p in plan.parent_rows):
        raise ValueError("fold plan has no parents; build it with n_parents")
    jobs = (delayed(_run_fold)(data, hp, config, plan, f, threshold, positive_class, n_sweeps_new)
            for f in range(plan.k))
    folds = Parallel(n_jobs=n_jobs)(jobs)
    cfg = {"hyperparameters": hp.as_dict(), "chain": asdict(config),
           "n_parents": int(plan.parent_rows[0].size), "k": plan.k, "plan_seed": plan.seed,
           "threshold": threshold, "positive_class": positive_class,
           "new_case_sweeps": n_sweeps_new, "n_cases": data.n_cases,
           "feature_names": list(data.feature_names)}
    return ExperimentReport(name=name, folds=list(folds), config=cfg)


def with_parents(plan: FoldPlan, n_parents: int, seed: int) -> FoldPlan:
    """Same fold membership, parents redrawn (e.g. for a different S)."""
    rng = np.random.default_rng(seed)
    parents = tuple(np.sort(select_parents(plan.train_rows(f), n_parents, rng))
                    for f in range(plan.k))
    return FoldPlan(k=plan.k, assignments=plan.assignments, parent_rows=parents,
                    seed=plan.seed, stratified=plan.stratified)


# ---------------------------------------------------------------- KNN baselines

def hamming_distances(train_X, test_X, feature_weights=None) -> np.ndarray:
    train_X = np.asarray(train_X)
    test_X = np.asarray(test_X)
    diff = test_X[:, None, :] != train_X[None, :, :]
    if feature_weights is None:
        return diff.sum(axis=2).astype(float)
    w = np.asarray(feature_weights, dtype=float)
    # summation order varies with layout; round so equal counts stay tied
    return np.round(diff @ w, 10)


def knn_predict(train_X, train_y, test_X, K: int, mode: str = "plain", feature_weights=None,
                n_classes: int | None = None, eps: float = 1e-9) -> np.ndarray:
    """Hamming-distance KNN.

    Every training point tied with the K-th nearest is included.  ``plain``
    counts votes, ``distance-weighted`` weighs them by 1/d (1/eps at d=0), and
    ``feature-weighted`` uses a weighted Hamming distance with plain votes.
    Vote ties go to the lowest class index, i.e. the negative class.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if mode not in ("plain", "distance-weighted", "feature-weighted"):
        raise ValueError(f"unknown KNN mode {mode!r}")
    train_y = np.asarray(train_y, dtype=np.int64)
    P = np.asarray(train_X).shape[1]
    weights = None
    if mode == "feature-weighted":
        weights = np.ones(P) if feature_weights is None else np.asarray(feature_weights, float)
        if weights.shape != (P,) or np.any(weights < 0):
            raise ValueError("feature weights must be nonnegative, one per feature")
    d = hamming_distances(train_X, test_X, weights)
    M = n_classes or int(train_y.max() + 1)
    k = min(K, train_y.size)
    out = np.empty(d.shape[0], dtype=np.int64)
    for r in range(d.shape[0]):
        kth = np.partition(d[r], k - 1)[k - 1]
        idx = np.flatnonzero(d[r] <= kth)
        if mode == "distance-weighted":
            vote_w = 1.0 / np.maximum(d[r, idx], eps)
        else:
            vote_w = np.ones(idx.size)
        votes = np.bincount(train_y[idx], weights=vote_w, minlength=M)
        out[r] = int(np.argmax(votes))
    return out


def knn_cross_validate(data: CategoricalDataset, plan: FoldPlan, K: int, mode: str = "plain",
                       feature_weights=None, positive_class: int = 1,
                       name: str | None = None) -> ExperimentReport:
    """KNN on the same folds; the whole training portion is the reference set."""
    folds = []
    for f in range(plan.k):
        t0 = time.perf_counter()
        tr, te = plan.train_rows(f), plan.test_rows(f)
        pred = knn_predict(data.features[tr], data.labels[tr], data.features[te], K, mode,
                           feature_weights, data.n_classes)
        m = confusion_metrics(pred, data.labels[te], positive_class, data.n_classes)
        folds.append(FoldResult(f, m, time.perf_counter() - t0, tr.size, te.size))
    cfg = {"K": K, "mode": mode, "k": plan.k, "plan_seed": plan.seed,
           "feature_weights": None if feature_weights is None else list(map(float, feature_weights))}
    return ExperimentReport(name=name or f"KNN ({K})", folds=folds, config=cfg)


# ---------------------------------------------------------------- sweeps

_HP_FIELDS = ("alpha", "gamma", "sigma1", "sigma2", "lambda0", "lam", "mu0", "mu", "variant")


def _grid_points(grid) -> list[dict]:
    if isinstance(grid, dict):
        if len(grid) != 1:
            raise ValueError("a dict grid sweeps exactly one parameter; pass a list of dicts "
                             "for joint points")
        (name, values), = grid.items()
        return [{name: v} for v in values]
    points = [dict(p) for p in grid]
    if not points:
        raise ValueError("parameter grid is empty")
    return points


def sensitivity_sweep(data: CategoricalDataset, base_hp: Hyperparameters, grid,
                      config: ChainConfig, plan: FoldPlan, n_jobs: int = 1,
                      threshold: float = 0.5, positive_class: int = 1,
                      n_sweeps_new: int = NEW_CASE_SWEEPS) -> list[tuple[dict, ExperimentReport]]:
    """One CV per grid point over a shared fold plan and shared seeds.

    A point may set any hyperparameter, ``S`` (parents are redrawn for the
    shared folds with the plan's seed) or ``supervised``.
    """
    points = _grid_points(grid)
    out = []
    for point in points:
        hp_kw = {k: v for k, v in point.items() if k in _HP_FIELDS}
        unknown = set(point) - set(_HP_FIELDS) - {"S", "supervised"}
        if unknown:
            raise ValueError(f"unknown sweep parameter(s): {sorted(unknown)}")
        hp = replace(base_hp, **hp_kw)
        cfg = replace(config, supervised=point.get("supervised", config.supervised))
        p = plan if "S" not in point else with_parents(plan, int(point["S"]),
                                                       _fold_seed(max(plan.seed, 0), 0, 7))
        label = ", ".join(f"{k}={v}" for k, v in point.items())
        rep = cross_validate(data, hp, cfg, p, threshold, positive_class, n_jobs,
                             n_sweeps_new, name=label)
        out.append((point, rep))
    return out


def default_subset_groups(ranking) -> dict[str, np.ndarray]:
    ranking = np.asarray(ranking)
    return {"top3": ranking[:3], "next3": ranking[3:6], "next3b": ranking[6:9],
            "all": np.sort(ranking)}


def feature_subset_eval(data: CategoricalDataset, ranking, hp: Hyperparameters,
                        config: ChainConfig, plan: FoldPlan, groups=None, n_jobs: int = 1,
                        threshold: float = 0.5, positive_class: int = 1,
                        n_sweeps_new: int = NEW_CASE_SWEEPS) -> dict[str, ExperimentReport]:
    """Retrain on selected feature columns only (kept in their original order)."""
    ranking = np.asarray(ranking)
    if sorted(ranking.tolist()) != list(range(data.n_features)):
        raise ValueError("ranking must be a permutation of the feature indices")
    groups = default_subset_groups(ranking) if groups is None else groups
    out = {}
    for name, cols in groups.items():
        cols = np.sort(np.asarray(cols))
        if cols.size == 0:
            continue
        sub = data.subset(columns=cols)
        rep = cross_validate(sub, hp, config, plan, threshold, positive_class, n_jobs,
                             n_sweeps_new, name=f"{name}: {', '.join(sub.feature_names)}")
        out[name] = rep
    return out


def rank_features(data: CategoricalDataset, hp: Hyperparameters, config: ChainConfig,
                  plan: FoldPlan, fold: int = 0) -> np.ndarray:
    """Feature ranking by posterior mean q_j from one fold's training chain."""
    train, parents, _ = fold_data(data, plan, fold)
    fitted = run_chain(train, parents, hp, config)
    return feature_importance(fitted, data.feature_names).ranking


# ---------------------------------------------------------------- runtime

def time_sweeps(n_cases: int, n_parents: int, n_features: int, variant, n_sweeps: int = 20,
                cardinality: int = 3, seed: int = 0, supervised: bool = True) -> float:
    """Mean wall-clock seconds per sweep on random data (compilation excluded)."""
    rng = np.random.default_rng(seed)
    card = np.full(n_features, cardinality, dtype=np.int64)
    hp = Hyperparameters(variant=variant)
    data = CategoricalDataset(rng.integers(0, cardinality, (n_cases, n_features)), card,
                              rng.integers(0, 2, n_cases))
    parents = ParentSet(rng.integers(0, cardinality, (n_parents, n_features)), card,
                        rng.integers(0, 2, n_parents))
    pb = _Problem(data, parents, hp, supervised)
    state = initial_state(n_cases, n_parents, n_features, hp, rng)
    c = CountCache.from_state(state, parents, hp, pb.M)
    z, w, q = state.z.copy(), state.w.copy(), state.q.copy()
    acc = np.zeros(n_features, dtype=np.int64)
    args = (pb.X, pb.Y, pb.Xp, pb.Yp, pb.card, pb.M, pb.hp, pb.variant, pb.use_label,
            z, w, c.wsum, q, c.col, c.cnt, c.tot, c.hc, c.htot)
    K.run_sweeps(*args, 1, 0.5, 1, False, acc)          # warm-up / compile
    t0 = time.perf_counter()
    K.run_sweeps(*args, n_sweeps, 0.5, 2, False, acc)
    return (time.perf_counter() - t0) / n_sweeps


def runtime_profile(sizes, s_grid, variants=("model1", "model2"), n_sweeps: int = 20,
                    seed: int = 0) -> list[dict]:
    """Per-sweep and total wall-clock for every (N, P) x S x variant combination."""
    rows = []
    for n_cases, n_features in sizes:
        for S in s_grid:
            for v in variants:
                t = time_sweeps(n_cases, S, n_features, v, n_sweeps, seed=seed)
                rows.append({"n_cases": n_cases, "n_features": n_features, "S": S,
                             "variant": Variant.parse(v).value, "sweeps": n_sweeps,
                             "seconds_per_sweep": t, "seconds_total": t * n_sweeps})
    return rows


def runtime_table(rows: list[dict]) -> str:
    head = ["N", "P", "S", "variant", "ms/sweep"]
    body = [[str(r["n_cases"]), str(r["n_features"]), str(r["S"]), r["variant"],
             f"{1000 * r['seconds_per_sweep']:.2f}"] for r in rows]
    widths = [max(len(r[c]) for r in [head, *body]) for c in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths))
                     for r in [head, *body]) + "\n"


# ---------------------------------------------------------------- output helpers

def sweep_table(results: list[tuple[dict, ExperimentReport]], metric: str = "accuracy") -> str:
    lines = [f"{'point':<30} {'mean':>8} {'sd':>8}"]
    for point, rep in results:
        label = ", ".join(f"{k}={v}" for k, v in point.items())
        lines.append(f"{label:<30} {100 * rep.mean(metric):8.2f} {100 * rep.std(metric):8.2f}")
    return "\n".join(lines) + "\n"


def write_plot_data(directory, name: str, x, y, x_label: str = "x", y_label: str = "y") -> Path:
    """Two-column CSV series for external plotting."""
    path = Path(directory) / f"{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([x_label, y_label])
        for a, b in zip(x, y):
            wr.writerow([a, b])
    return path
