"""CSV ingestion, discretization, missing values, parent selection and folds.

Discretization specs are JSON documents (see ``specs/*.json``).  Each feature
entry has a ``kind``:

``numeric-bins``
    ``edges`` are the interior cut points.  Bins are left-closed and
    right-open, the first bin reaches down to minus infinity and the last one
    up to plus infinity, so a value equal to an edge falls in the bin to its
    right.
``category-map``
    ``map`` sends raw strings to 1-based categories; ``default`` (optional)
    catches every other value.
``range-map``
    ``ranges`` is a list of ``[lo, hi, category]`` with inclusive bounds;
    values that do not parse as numbers or fall outside every range get
    ``default``.

Categories are 1-based in specs and exported files and 0-based in memory.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .model import CategoricalDataset, ParentSet

log = logging.getLogger(__name__)

DEFAULT_MISSING = ("?", "")
POLICIES = ("drop-row", "artificial-category")
BUILTIN_SPECS = ("heart", "heart_corrected", "breast", "readmission")


class IngestionError(ValueError):
    """A raw value the discretization spec cannot place, or a malformed file."""


# ---------------------------------------------------------------- specs

@dataclass(frozen=True)
class FeatureRule:
    name: str
    column: str
    kind: str
    edges: tuple = ()
    mapping: dict = field(default_factory=dict)
    ranges: tuple = ()
    default: int | None = None
    labels: tuple = ()
    missing_policy: str | None = None

    @property
    def cardinality(self) -> int:
        if self.kind == "numeric-bins":
            return len(self.edges) + 1
        if self.labels:
            return len(self.labels)
        cats = set(self.mapping.values()) | {r[2] for r in self.ranges}
        if self.default is not None:
            cats.add(self.default)
        return max(cats)

    def apply(self, raw: str) -> int:
        """1-based category for one raw cell; raises KeyError if unmapped."""
        if self.kind == "numeric-bins":
            try:
                v = float(raw)
            except ValueError:
                raise KeyError(raw) from None
            return int(np.searchsorted(self.edges, v, side="right")) + 1
        if self.kind == "category-map":
            key = _norm(raw)
            if key in self.mapping:
                return self.mapping[key]
            if self.default is not None:
                return self.default
            raise KeyError(raw)
        try:
            v = float(raw)
        except ValueError:
            v = None
        if v is not None:
            for lo, hi, cat in self.ranges:
                if lo <= v <= hi:
                    return int(cat)
        if self.default is not None:
            return self.default
        raise KeyError(raw)


def _norm(raw: str) -> str:
    """'1.0' and '1' name the same category."""
    s = raw.strip()
    try:
        f = float(s)
    except ValueError:
        return s
    return str(int(f)) if f.is_integer() else s


def _rule_from_doc(d: dict, policy: str) -> FeatureRule:
    kind = d.get("kind")
    if kind not in ("numeric-bins", "category-map", "range-map"):
        raise ValueError(f"feature {d.get('name')!r}: unknown kind {kind!r}")
    rule = FeatureRule(
        name=d["name"], column=d.get("column", d["name"]), kind=kind,
        edges=tuple(float(e) for e in d.get("edges", ())),
        mapping={_norm(str(k)): int(v) for k, v in d.get("map", {}).items()},
        ranges=tuple((float(a), float(b), int(c)) for a, b, c in d.get("ranges", ())),
        default=None if d.get("default") is None else int(d["default"]),
        labels=tuple(d.get("labels", ())),
        missing_policy=d.get("missing_policy", policy),
    )
    if kind == "numeric-bins":
        if list(rule.edges) != sorted(set(rule.edges)):
            raise ValueError(f"feature {rule.name!r}: bin edges must be strictly increasing")
        if rule.labels and len(rule.labels) != len(rule.edges) + 1:
            raise ValueError(f"feature {rule.name!r}: {len(rule.labels)} labels for "
                             f"{len(rule.edges) + 1} bins")
    cats = set(rule.mapping.values()) | {r[2] for r in rule.ranges}
    if rule.default is not None:
        cats.add(rule.default)
    if cats and (min(cats) < 1 or max(cats) > rule.cardinality):
        raise ValueError(f"feature {rule.name!r}: categories must lie in 1..{rule.cardinality}")
    if rule.missing_policy not in POLICIES:
        raise ValueError(f"feature {rule.name!r}: unknown missing policy {rule.missing_policy!r}")
    return rule


@dataclass(frozen=True)
class DiscretizationSpec:
    name: str
    features: tuple[FeatureRule, ...]
    label: FeatureRule | None
    positive_class: int = 2          # 1-based
    missing_markers: tuple[str, ...] = DEFAULT_MISSING
    missing_policy: str = "drop-row"

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([f.cardinality for f in self.features], dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return 2 if self.label is None else self.label.cardinality

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscretizationSpec":
        policy = doc.get("missing_policy", "drop-row")
        feats = tuple(_rule_from_doc(d, policy) for d in doc["features"])
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in spec")
        label = None
        positive = 2
        if doc.get("label"):
            label = _rule_from_doc({"name": "label", **doc["label"]}, "drop-row")
            positive = int(doc["label"].get("positive", label.cardinality))
        return cls(name=doc.get("name", "dataset"), features=feats, label=label,
                   positive_class=positive,
                   missing_markers=tuple(doc.get("missing_markers", DEFAULT_MISSING)),
                   missing_policy=policy)

    @classmethod
    def from_json(cls, path) -> "DiscretizationSpec":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"spec file not found: {path}")
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def builtin(cls, name: str) -> "DiscretizationSpec":
        if name not in BUILTIN_SPECS:
            raise ValueError(f"no built-in spec {name!r}; choose from {BUILTIN_SPECS}")
        text = resources.files("bpatch").joinpath("specs", f"{name}.json").read_text()
        return cls.from_dict(json.loads(text))

    def identity(self) -> "DiscretizationSpec":
        """Spec that maps already-discretized 1-based codes onto themselves."""
        def ident(rule):
            V = rule.cardinality
            return FeatureRule(name=rule.name, column=rule.name, kind="category-map",
                               mapping={str(v): v for v in range(1, V + 1)},
                               labels=rule.labels or tuple(str(v) for v in range(1, V + 1)),
                               missing_policy=rule.missing_policy)
        return DiscretizationSpec(
            name=self.name, features=tuple(ident(f) for f in self.features),
            label=None if self.label is None else
            FeatureRule(name="label", column="label", kind="category-map",
                        mapping={str(m): m for m in range(1, self.n_classes + 1)},
                        labels=self.label.labels or tuple(str(m) for m in range(1, self.n_classes + 1))),
            positive_class=self.positive_class, missing_markers=self.missing_markers,
            missing_policy=self.missing_policy)


def resolve_spec(spec) -> DiscretizationSpec:
    """Accept a spec object, a built-in name, or a path to a JSON file."""
    if isinstance(spec, DiscretizationSpec):
        return spec
    if isinstance(spec, str) and spec in BUILTIN_SPECS and not Path(spec).exists():
        return DiscretizationSpec.builtin(spec)
    return DiscretizationSpec.from_json(spec)


# ---------------------------------------------------------------- loading

@dataclass(frozen=True)
class LoadReport:
    n_rows: int
    dropped_ids: tuple[int, ...]
    augmented: tuple[str, ...]


def augment_missing(features: np.ndarray, cardinalities: np.ndarray, j: int):
    """Give feature j one extra category that absorbs its missing (-1) cells.

    Returns new (features, cardinalities); a feature without missing cells
    comes back unchanged.
    """
    x = np.array(features, dtype=np.int64, copy=True)
    card = np.array(cardinalities, dtype=np.int64, copy=True)
    miss = x[:, j] < 0
    if not miss.any():
        return x, card
    x[miss, j] = card[j]
    card[j] += 1
    return x, card


def discretize_rows(rows, header, spec: DiscretizationSpec, missing_markers=None,
                    first_line: int = 2):
    """Turn raw string rows into (features with -1 for missing, labels, report)."""
    spec = resolve_spec(spec)
    markers = set(spec.missing_markers if missing_markers is None else missing_markers)
    index = {name.strip(): k for k, name in enumerate(header)}
    need = [f.column for f in spec.features]
    if spec.label is not None:
        need.append(spec.label.column)
    absent = [c for c in need if c not in index]
    if absent:
        raise IngestionError(f"columns missing from header: {', '.join(absent)}")

    n, P = len(rows), len(spec.features)
    x = np.full((n, P), -1, dtype=np.int64)
    y = np.full(n, -1, dtype=np.int64) if spec.label is not None else None
    for r, row in enumerate(rows):
        line = first_line + r
        if len(row) != len(header):
            raise IngestionError(f"line {line}: expected {len(header)} cells, got {len(row)}")
        for j, rule in enumerate(spec.features):
            raw = row[index[rule.column]].strip()
            if raw in markers:
                continue
            try:
                x[r, j] = rule.apply(raw) - 1
            except KeyError:
                raise IngestionError(
                    f"line {line}, column {rule.column!r}: value {raw!r} is not covered "
                    f"by the discretization spec") from None
        if y is not None:
            raw = row[index[spec.label.column]].strip()
            if raw in markers:
                continue
            try:
                y[r] = spec.label.apply(raw) - 1
            except KeyError:
                raise IngestionError(
                    f"line {line}, column {spec.label.column!r}: label {raw!r} is not "
                    f"covered by the discretization spec") from None
    return x, y


def load_csv(path, spec, missing_markers=None) -> tuple[CategoricalDataset, LoadReport]:
    """Read a CSV with a header row and discretize it.

    Missing cells follow each feature's policy: ``drop-row`` removes the row,
    ``artificial-category`` adds one extra category.  Rows with a missing
    label are always dropped.  Case ids are 0-based data-row indices.
    """
    spec = resolve_spec(spec)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    x, y = discretize_rows(rows, header, spec, missing_markers)
    return _finish(x, y, spec)


def _finish(x, y, spec: DiscretizationSpec):
    card = spec.cardinalities
    ids = np.arange(x.shape[0])
    drop = np.zeros(x.shape[0], dtype=bool)
    augmented = []
    for j, rule in enumerate(spec.features):
        if rule.missing_policy == "drop-row":
            drop |= x[:, j] < 0
    if y is not None:
        drop |= y < 0
    keep = ~drop
    x, ids = x[keep], ids[keep]
    y = None if y is None else y[keep]
    for j, rule in enumerate(spec.features):
        if rule.missing_policy == "artificial-category" and (x[:, j] < 0).any():
            x, card = augment_missing(x, card, j)
            augmented.append(rule.name)
    dropped = tuple(int(i) for i in np.flatnonzero(drop))
    if dropped:
        log.info("dropped %d rows with missing values", len(dropped))
    data = CategoricalDataset(features=x, cardinalities=card, labels=y,
                              n_classes=spec.n_classes, feature_names=spec.feature_names,
                              case_ids=ids, dropped_ids=dropped)
    return data, LoadReport(n_rows=int(keep.size), dropped_ids=dropped, augmented=tuple(augmented))


def dataset_to_dict(data: CategoricalDataset) -> dict:
    """Columnar JSON layout with 1-based categories and provenance."""
    return {
        "format": "bpatch-dataset/1",
        "feature_names": list(data.feature_names),
        "cardinalities": [int(v) for v in data.cardinalities],
        "n_classes": int(data.n_classes),
        "case_ids": [int(i) for i in data.case_ids],
        "dropped_ids": list(data.dropped_ids),
        "columns": {name: (data.features[:, j] + 1).tolist()
                    for j, name in enumerate(data.feature_names)},
        "labels": None if data.labels is None else (data.labels + 1).tolist(),
    }


def dataset_from_dict(doc: dict) -> CategoricalDataset:
    names = doc["feature_names"]
    x = np.column_stack([np.asarray(doc["columns"][n], dtype=np.int64) - 1 for n in names]) \
        if names else np.zeros((len(doc["case_ids"]), 0), dtype=np.int64)
    labels = doc.get("labels")
    return CategoricalDataset(
        features=x, cardinalities=np.asarray(doc["cardinalities"], dtype=np.int64),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64) - 1,
        n_classes=int(doc.get("n_classes", 2)), feature_names=tuple(names),
        case_ids=np.asarray(doc["case_ids"]), dropped_ids=tuple(doc.get("dropped_ids", ())))


def write_csv(data: CategoricalDataset, path, label_column: str = "label") -> None:
    """1-based codes, one column per feature plus the label."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([*data.feature_names, *([label_column] if data.labels is not None else [])])
        for r in range(data.n_cases):
            row = [int(v) + 1 for v in data.features[r]]
            if data.labels is not None:
                row.append(int(data.labels[r]) + 1)
            wr.writerow(row)


# ---------------------------------------------------------------- built-in data

def _builtin_csv(name: str) -> Path:
    return Path(str(resources.files("bpatch").joinpath("datasets", name)))


def load_heart(corrected: bool = False) -> CategoricalDataset:
    """Cleveland heart disease, complete cases only."""
    spec = DiscretizationSpec.builtin("heart_corrected" if corrected else "heart")
    data, _ = load_csv(_builtin_csv("heart_cleveland.csv"), spec)
    return data


def load_breast(balanced: bool = True, seed: int = 0) -> CategoricalDataset:
    """Ljubljana breast cancer recurrence; by default a seeded class-balanced subset."""
    data, _ = load_csv(_builtin_csv("breast_cancer_ljubljana.csv"),
                       DiscretizationSpec.builtin("breast"))
    if balanced:
        data = balanced_subsample(data, np.random.default_rng(seed))
    return data


def balanced_subsample(data: CategoricalDataset, rng: np.random.Generator) -> CategoricalDataset:
    """Downsample every class to the size of the smallest one (rows keep their order)."""
    if data.labels is None:
        raise ValueError("balancing needs labels")
    classes, counts = np.unique(data.labels, return_counts=True)
    n = counts.min()
    keep = []
    for c in classes:
        rows = np.flatnonzero(data.labels == c)
        keep.append(rng.choice(rows, size=n, replace=False))
    return data.subset(np.sort(np.concatenate(keep)))


# raw values the synthetic readmission rows are rendered with, per category
_READMISSION_RAW = {
    "race": ["Caucasian", "AfricanAmerican", "Hispanic"],
    "gender": ["Male", "Female"],
    "age": [f"[{10 * i}-{10 * (i + 1)})" for i in range(9)],
    "discharge_disposition_id": ["1", "3"],
    "admission_source_id": ["7", "1", "4"],
    "time_in_hospital": ["1", "4", "9"],
    "medical_specialty": ["InternalMedicine", "Family/GeneralPractice", "Cardiology", "Surgery-General"],
    "A1Cresult": [">7", ">8", "None", "Norm"],
    "diabetesMed": ["Yes", "No"],
    "change": ["Ch", "No"],
    "diag_1": ["250.02", "414", "486", "562", "820", "V57"],
    "metformin": ["Up", "Steady"],
    "glimepiride": ["Up", "No"],
    "glipizide": ["Up", "Down"],
    "glyburide": ["Up", "No"],
    "pioglitazone": ["Up", "No"],
    "rosiglitazone": ["Up", "Steady"],
    "insulin": ["Up", "Down"],
    "admission_type_id": ["1", "3"],
}


def make_readmission_rows(n_cases: int = 500, seed: int = 0, n_prototypes: int = 8,
                          copy_prob: float = 0.75, label_noise: float = 0.12):
    """Raw CSV rows shaped like the diabetes readmission extract.

    Each case copies most features from one of a few labelled prototypes and
    fills the rest at random; its label is the prototype's label, flipped with
    probability ``label_noise``.  Returns (header, rows).
    """
    spec = DiscretizationSpec.builtin("readmission")
    rng = np.random.default_rng(seed)
    card = spec.cardinalities
    protos = np.column_stack([rng.integers(0, v, n_prototypes) for v in card])
    proto_label = np.arange(n_prototypes) % 2
    which = rng.integers(0, n_prototypes, n_cases)
    copy = rng.random((n_cases, card.size)) < copy_prob
    noise = np.column_stack([rng.integers(0, v, n_cases) for v in card])
    x = np.where(copy, protos[which], noise)
    y = proto_label[which] ^ (rng.random(n_cases) < label_noise)
    header = [f.column for f in spec.features] + [spec.label.column]
    rows = []
    for r in range(n_cases):
        cells = [_READMISSION_RAW[f.column][x[r, j]] for j, f in enumerate(spec.features)]
        cells.append("<30" if y[r] else rng.choice([">30", "NO"]))
        rows.append(cells)
    return header, rows


def make_readmission_like(n_cases: int = 500, seed: int = 0) -> CategoricalDataset:
    header, rows = make_readmission_rows(n_cases, seed)
    x, y = discretize_rows(rows, header, DiscretizationSpec.builtin("readmission"))
    data, _ = _finish(x, y, DiscretizationSpec.builtin("readmission"))
    return data


def load_builtin(name: str, seed: int = 0) -> CategoricalDataset:
    if name == "heart":
        return load_heart()
    if name == "heart_corrected":
        return load_heart(corrected=True)
    if name == "breast":
        return load_breast(seed=seed)
    if name == "readmission":
        return make_readmission_like(seed=seed)
    raise ValueError(f"unknown built-in dataset {name!r}")


# ---------------------------------------------------------------- parents and folds

def select_parents(train_ids, S: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of S ids without replacement."""
    train_ids = np.asarray(train_ids)
    if not 1 <= S <= train_ids.size:
        raise ValueError(f"cannot draw {S} parents from {train_ids.size} training cases")
    return rng.choice(train_ids, size=S, replace=False)


@dataclass(frozen=True)
class FoldPlan:
    """Fold membership by row index, plus the parent rows of each fold."""

    k: int
    assignments: np.ndarray
    parent_rows: tuple[np.ndarray, ...]
    seed: int
    stratified: bool = False

    def test_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == f)

    def train_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != f)

    def case_rows(self, f: int) -> np.ndarray:
        """Training rows that are not parents: the cases the chain explains."""
        return np.setdiff1d(self.train_rows(f), self.parent_rows[f])

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()

    def as_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "stratified": self.stratified,
                "assignments": self.assignments.tolist(),
                "parent_rows": [p.tolist() for p in self.parent_rows]}

    @classmethod
    def from_dict(cls, doc: dict) -> "FoldPlan":
        return cls(k=int(doc["k"]), assignments=np.asarray(doc["assignments"]),
                   parent_rows=tuple(np.asarray(p) for p in doc["parent_rows"]),
                   seed=int(doc["seed"]), stratified=bool(doc.get("stratified", False)))


def kfold_split(data_or_n, k: int, rng: np.random.Generator | int, stratified: bool = False,
                n_parents: int | None = None) -> FoldPlan:
    """Shuffle into k folds of near-equal size, then draw parents per fold.

    Stratified plans deal each class out in turn so per-fold class counts
    differ by at most one.  Without ``n_parents`` no parents are drawn.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng) if seed is not None else rng
    if isinstance(data_or_n, CategoricalDataset):
        n, labels = data_or_n.n_cases, data_or_n.labels
    else:
        n, labels = int(data_or_n), None
    if n < k:
        raise ValueError(f"{n} cases cannot fill {k} folds")
    if stratified:
        if labels is None:
            raise ValueError("stratified folds need labels")
        order = np.concatenate([gen.permutation(np.flatnonzero(labels == c))
                                for c in np.unique(labels)])
    else:
        order = gen.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    parents = []
    for f in range(k):
        train = np.flatnonzero(assignments != f)
        parents.append(np.sort(select_parents(train, n_parents, gen)) if n_parents
                       else np.array([], dtype=np.int64))
    return FoldPlan(k=k, assignments=assignments, parent_rows=tuple(parents),
                    seed=-1 if seed is None else seed, stratified=stratified)


def fold_data(data: CategoricalDataset, plan: FoldPlan, f: int):
    """(training cases, parent set, test cases) for fold f."""
    return (data.subset(plan.case_rows(f)),
            ParentSet.from_dataset(data, plan.parent_rows[f]),
            data.subset(plan.test_rows(f)))
