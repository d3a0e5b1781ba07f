"""Label prediction, neighbor inference for new cases, and explanations.

A new case is handled by a short conditional chain over its own (z_r, w_r)
for every retained training draw, with the training variables frozen at
that draw.  The three prediction types map onto the arguments:

* type I  - neighbors for a case without a label: ``infer_new_case(x, None, ...)``
* type II - its label: :func:`predict_label_distribution`
* type III - neighbors for a case whose label is known: ``infer_new_case(x, y, ...)``
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .inference import PosteriorSamples, _hp_array, _variant_code
from .model import Hyperparameters, LabelsRequiredError, ParentSet, StructuralError

NEW_CASE_SWEEPS = 10


@dataclass(frozen=True)
class NewCaseDraws:
    theta: np.ndarray     # averaged label predictive, length M
    z: np.ndarray         # K x S
    w: np.ndarray         # K x S x P

    @property
    def kappa(self) -> np.ndarray:
        return self.z.astype(np.int64) * self.w.sum(axis=2, dtype=np.int64)


@dataclass(frozen=True)
class PredictiveResult:
    theta: np.ndarray
    predicted_label: int
    per_sample_neighbor_posterior: np.ndarray
    per_sample_influence: np.ndarray


@dataclass(frozen=True)
class RankedParent:
    parent_id: int
    kappa_mean: float
    important_features: tuple[bool, ...]
    parent_label: int | None
    feature_match_vector: tuple[bool, ...]


@dataclass(frozen=True)
class NeighborExplanation:
    case_id: object
    ranked_parents: tuple[RankedParent, ...]
    top_k: int
    theta: np.ndarray | None = None


@dataclass(frozen=True)
class FeatureImportance:
    names: tuple[str, ...]
    mean: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray
    ranking: np.ndarray   # feature indices, most important first

    def top(self, n: int) -> np.ndarray:
        return self.ranking[:n]


def case_seed(seed: int, case_index: int) -> int:
    """Independent per-case stream, so results do not depend on evaluation order."""
    ss = np.random.SeedSequence([int(seed), int(case_index)])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def _check_case(x_r, parents: ParentSet) -> np.ndarray:
    x = np.asarray(x_r, dtype=np.int64)
    P = parents.features.shape[1]
    if x.shape != (P,):
        raise StructuralError(f"case has {x.size} features, the parent set has {P}")
    if np.any(x < 0) or np.any(x >= parents.cardinalities):
        bad = int(np.flatnonzero((x < 0) | (x >= parents.cardinalities))[0])
        raise ValueError(f"feature {bad} value {x[bad]} outside its cardinality "
                         f"{parents.cardinalities[bad]}")
    return x


def infer_new_case(x_r, y_r, fitted: PosteriorSamples, parents: ParentSet,
                   hp: Hyperparameters | None = None, n_sweeps: int = NEW_CASE_SWEEPS,
                   rng_seed: int = 0) -> NewCaseDraws:
    """Draw (z_r, w_r) once per retained sample; y_r adds the label factor."""
    if parents.labels is None:
        raise LabelsRequiredError("prediction uses the parents' labels")
    hp = fitted.hp if hp is None else hp
    x = _check_case(x_r, parents)
    N, S, P = fitted.shape
    if S != parents.size or P != parents.features.shape[1]:
        raise StructuralError("posterior samples were fitted with a different parent set")
    M = int(parents.n_classes)
    y = -1 if y_r is None else int(y_r)
    if y >= M:
        raise ValueError(f"label {y} outside 0..{M - 1}")
    theta, z_d, w_d = K.infer_new_case(
        x, y, np.ascontiguousarray(parents.features, dtype=np.int64),
        np.ascontiguousarray(parents.labels, dtype=np.int64),
        np.ascontiguousarray(parents.cardinalities, dtype=np.int64),
        int(parents.cardinalities.max()), M, _hp_array(hp), _variant_code(hp),
        np.ascontiguousarray(fitted.q), np.ascontiguousarray(fitted.col),
        N, int(n_sweeps), int(rng_seed))
    return NewCaseDraws(theta=theta, z=z_d, w=w_d)


def classify(theta, threshold: float = 0.5) -> int:
    """0-based class index. Two classes: the second iff theta[1] > threshold."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("theta must be a probability vector")
    if theta.size == 2:
        return int(theta[1] > threshold)
    return int(np.argmax(theta))   # first maximum wins ties


def predict_label_distribution(x_r, fitted: PosteriorSamples, parents: ParentSet,
                               hp: Hyperparameters | None = None, threshold: float = 0.5,
                               n_sweeps: int = NEW_CASE_SWEEPS,
                               rng_seed: int = 0) -> PredictiveResult:
    draws = infer_new_case(x_r, None, fitted, parents, hp, n_sweeps, rng_seed)
    return PredictiveResult(
        theta=draws.theta,
        predicted_label=classify(draws.theta, threshold),
        per_sample_neighbor_posterior=draws.z.mean(axis=0),
        per_sample_influence=draws.w.mean(axis=0),
    )


def predict_theta_many(X, fitted: PosteriorSamples, parents: ParentSet,
                       hp: Hyperparameters | None = None, n_sweeps: int = NEW_CASE_SWEEPS,
                       rng_seed: int = 0, labels=None) -> np.ndarray:
    """theta for every row of X (n x M); per-row seeds come from :func:`case_seed`."""
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    out = np.empty((X.shape[0], parents.n_classes))
    for r in range(X.shape[0]):
        y = None if labels is None else labels[r]
        out[r] = infer_new_case(X[r], y, fitted, parents, hp, n_sweeps,
                                case_seed(rng_seed, r)).theta
    return out


# ---------------------------------------------------------------- explanations

def explain(case_id, x_r, draws: NewCaseDraws, parents: ParentSet,
            top_k: int = 4) -> NeighborExplanation:
    """Rank parents by mean kappa over the draws and mark influential features."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    x = _check_case(x_r, parents)
    kappa_mean = draws.kappa.mean(axis=0)
    # w only counts while the parent is a neighbor
    gated = draws.z[:, :, None] * draws.w
    important = gated.mean(axis=0) > 0.5
    # kappa descending, then parent id ascending
    order = np.lexsort((np.asarray(parents.case_ids), -kappa_mean))
    rows = []
    for b in order[:top_k]:
        rows.append(RankedParent(
            parent_id=int(parents.case_ids[b]),
            kappa_mean=float(kappa_mean[b]),
            important_features=tuple(bool(v) for v in important[b]),
            parent_label=None if parents.labels is None else int(parents.labels[b]),
            feature_match_vector=tuple(bool(v) for v in parents.features[b] == x),
        ))
    return NeighborExplanation(case_id=case_id, ranked_parents=tuple(rows),
                               top_k=int(top_k), theta=draws.theta)


def explanation_to_dict(expl: NeighborExplanation, x_r, parents: ParentSet,
                        feature_names=None) -> dict:
    """JSON record; categories and labels are 1-based here."""
    P = parents.features.shape[1]
    names = list(feature_names) if feature_names else [f"f{j + 1}" for j in range(P)]
    row_of = {int(cid): r for r, cid in enumerate(parents.case_ids)}
    out = {
        "case_id": _jsonable(expl.case_id),
        "features": dict(zip(names, (int(v) + 1 for v in x_r))),
        "theta": None if expl.theta is None else [float(t) for t in expl.theta],
        "top_k": expl.top_k,
        "parents": [],
    }
    for rp in expl.ranked_parents:
        vals = parents.features[row_of[rp.parent_id]]
        out["parents"].append({
            "parent_id": rp.parent_id,
            "kappa_mean": rp.kappa_mean,
            "label": None if rp.parent_label is None else rp.parent_label + 1,
            "features": dict(zip(names, (int(v) + 1 for v in vals))),
            "important": [n for n, m in zip(names, rp.important_features) if m],
            "matches": [n for n, m in zip(names, rp.feature_match_vector) if m],
        })
    return out


def explanation_to_text(expl: NeighborExplanation, x_r, parents: ParentSet,
                        feature_names=None) -> str:
    """Plain table: the case, then one row per parent; '*' marks influential values."""
    P = parents.features.shape[1]
    names = list(feature_names) if feature_names else [f"f{j + 1}" for j in range(P)]
    row_of = {int(cid): r for r, cid in enumerate(parents.case_ids)}
    head = ["", *names, "kappa", "label"]
    rows = [[f"case {expl.case_id}", *(str(int(v) + 1) for v in x_r), "",
             "" if expl.theta is None else f"p={expl.theta[-1]:.3f}"]]
    for rank, rp in enumerate(expl.ranked_parents, 1):
        vals = parents.features[row_of[rp.parent_id]]
        cells = [f"{int(v) + 1}*" if m else f"{int(v) + 1}"
                 for v, m in zip(vals, rp.important_features)]
        lab = "" if rp.parent_label is None else str(rp.parent_label + 1)
        rows.append([f"parent {rank} (#{rp.parent_id})", *cells, f"{rp.kappa_mean:.2f}", lab])
    widths = [max(len(r[c]) for r in [head, *rows]) for c in range(len(head))]
    fmt = lambda r: "  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(head), *(fmt(r) for r in rows)]) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def dump_explanations(records: list[dict]) -> str:
    return json.dumps(records, indent=2, sort_keys=True)


# ---------------------------------------------------------------- feature ranking

def feature_importance(fitted: PosteriorSamples, feature_names=None) -> FeatureImportance:
    """Posterior summaries of q_j; features ranked by descending mean."""
    if fitted.n_samples == 0:
        raise ValueError("no retained draws")
    q = fitted.q
    P = q.shape[1]
    names = tuple(feature_names) if feature_names else tuple(f"f{j + 1}" for j in range(P))
    mean = q.mean(axis=0)
    q25, med, q75 = np.quantile(q, [0.25, 0.5, 0.75], axis=0)
    ranking = np.argsort(-mean, kind="stable")
    return FeatureImportance(names, mean, q25, med, q75, ranking)
