"""Domain types and the deterministic vote scores of the patchwork model.

Category indices are 0-based everywhere inside the package. The 1-based
convention of the external CSV/JSON formats is handled in :mod:`bpatch.data`.

The score functions in this module are written for clarity, not speed: they
recompute everything from scratch and double as the reference the numba
sampler is checked against.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

Q_CLAMP = 1e-9


class Variant(str, enum.Enum):
    """Vote weighting: one vote per neighbor (model1) or kappa votes (model2)."""

    MODEL1 = "model1"
    MODEL2 = "model2"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        text = str(value).lower().replace(" ", "").replace("_", "")
        aliases = {"model1": cls.MODEL1, "modeli": cls.MODEL1, "1": cls.MODEL1, "i": cls.MODEL1,
                   "model2": cls.MODEL2, "modelii": cls.MODEL2, "2": cls.MODEL2, "ii": cls.MODEL2}
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unknown model variant {value!r}") from None


class StructuralError(ValueError):
    """Array shapes that do not agree with each other."""


class LabelsRequiredError(ValueError):
    """An operation needed parent labels but the parent set has none."""


@dataclass(frozen=True)
class CategoricalDataset:
    features: np.ndarray
    cardinalities: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int = 2
    feature_names: tuple[str, ...] = ()
    case_ids: np.ndarray | None = None
    dropped_ids: tuple[int, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.int64)
        card = np.asarray(self.cardinalities, dtype=np.int64)
        if x.ndim != 2:
            raise StructuralError("features must be an N x P matrix")
        if card.shape != (x.shape[1],):
            raise StructuralError(
                f"cardinalities has length {card.size}, expected {x.shape[1]}")
        if x.size and (x.min() < 0 or np.any(x >= card[None, :])):
            raise ValueError("feature value outside its declared cardinality")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "cardinalities", card)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise StructuralError("labels must have one entry per case")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError("label outside 0..n_classes-1")
            object.__setattr__(self, "labels", y)
        names = tuple(self.feature_names) or tuple(f"f{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise StructuralError("feature_names length must equal the number of features")
        object.__setattr__(self, "feature_names", names)
        ids = np.arange(x.shape[0]) if self.case_ids is None else np.asarray(self.case_ids)
        object.__setattr__(self, "case_ids", ids)

    @property
    def n_cases(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows=None, columns=None) -> "CategoricalDataset":
        rows = np.arange(self.n_cases) if rows is None else np.asarray(rows)
        columns = np.arange(self.n_features) if columns is None else np.asarray(columns)
        return CategoricalDataset(
            features=self.features[np.ix_(rows, columns)],
            cardinalities=self.cardinalities[columns],
            labels=None if self.labels is None else self.labels[rows],
            n_classes=self.n_classes,
            feature_names=tuple(self.feature_names[j] for j in columns),
            case_ids=self.case_ids[rows],
        )


@dataclass(frozen=True)
class ParentSet:
    features: np.ndarray
    cardinalities: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int = 2
    case_ids: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise StructuralError("a parent set needs at least one S x P row")
        card = np.asarray(self.cardinalities, dtype=np.int64)
        if card.shape != (x.shape[1],):
            raise StructuralError("parent cardinalities do not match the feature count")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "cardinalities", card)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise StructuralError("one label per parent required")
            object.__setattr__(self, "labels", y)
        ids = np.arange(x.shape[0]) if self.case_ids is None else np.asarray(self.case_ids)
        object.__setattr__(self, "case_ids", ids)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_dataset(cls, data: CategoricalDataset, rows) -> "ParentSet":
        rows = np.asarray(rows)
        return cls(
            features=data.features[rows],
            cardinalities=data.cardinalities,
            labels=None if data.labels is None else data.labels[rows],
            n_classes=data.n_classes,
            case_ids=data.case_ids[rows],
        )


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings. Defaults are the values used for the UCI experiments.

    ``sigma2`` is not listed with the others in the experiments; the listed
    second gamma value (0.5) is read as sigma2.
    """

    alpha: float = 0.5
    gamma: float = 0.5
    sigma1: float = 5.0
    sigma2: float = 0.5
    lambda0: float = 0.001
    lam: float = 2.0
    mu0: float = 0.001
    mu: float = 1.0
    variant: Variant = Variant.MODEL2

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for name in ("gamma", "sigma1", "sigma2", "lambda0", "lam", "mu0", "mu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def as_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in
             ("alpha", "gamma", "sigma1", "sigma2", "lambda0", "lam", "mu0", "mu")}
        d["variant"] = self.variant.value
        return d


@dataclass(frozen=True)
class ModelState:
    z: np.ndarray
    w: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.uint8)
        w = np.asarray(self.w, dtype=np.uint8)
        q = np.asarray(self.q, dtype=np.float64)
        if z.ndim != 2 or w.shape[:2] != z.shape or w.ndim != 3 or q.shape != (w.shape[2],):
            raise StructuralError("z must be N x S, w N x S x P and q length P")
        if z.max(initial=0) > 1 or w.max(initial=0) > 1:
            raise ValueError("z and w are binary")
        if np.any((q <= 0) | (q >= 1)):
            raise ValueError("q must lie in the open interval (0, 1)")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "q", q)

    @property
    def kappa(self) -> np.ndarray:
        return compute_kappa(self.z, self.w)


@dataclass(frozen=True)
class GenerativeDraw:
    dataset: CategoricalDataset
    parents: ParentSet
    planted_state: ModelState
    planted_qtilde: np.ndarray
    planted_phi: list = field(repr=False)
    planted_theta: np.ndarray = field(repr=False)


def compute_kappa(z_row, w_slab) -> np.ndarray:
    """Degree of influence: number of influential features, gated by z.

    Works on a single case (``z_row`` length S, ``w_slab`` S x P) or on
    whole arrays (N x S and N x S x P).
    """
    z_row = np.asarray(z_row)
    w_slab = np.asarray(w_slab)
    if w_slab.shape[:-1] != z_row.shape:
        raise StructuralError("z and w disagree on the parent dimension")
    return z_row.astype(np.int64) * w_slab.sum(axis=-1, dtype=np.int64)


def _vote_weights(z_row, w_slab, variant: Variant) -> np.ndarray:
    if Variant.parse(variant) is Variant.MODEL1:
        return np.asarray(z_row, dtype=np.int64)
    return compute_kappa(z_row, w_slab)


def compute_g(z_row, w_slab, parents: ParentSet, hp: Hyperparameters, j: int) -> np.ndarray:
    """Feature-vote score over the outcomes of feature ``j`` for one case."""
    z_row = np.asarray(z_row)
    w_slab = np.asarray(w_slab)
    S, P = parents.features.shape
    if z_row.shape != (S,) or w_slab.shape != (S, P):
        raise StructuralError(f"expected z of shape ({S},) and w of shape ({S}, {P})")
    if not 0 <= j < P:
        raise StructuralError(f"feature index {j} out of range")
    weights = _vote_weights(z_row, w_slab, hp.variant) * w_slab[:, j]
    votes = np.bincount(parents.features[:, j], weights=weights,
                        minlength=parents.cardinalities[j])
    return hp.lambda0 + hp.lam * votes


def compute_h(z_row, w_slab, parents: ParentSet, hp: Hyperparameters, n_classes=None) -> np.ndarray:
    """Label-vote score over the classes for one case."""
    if parents.labels is None:
        raise LabelsRequiredError("label votes need a labelled parent set")
    z_row = np.asarray(z_row)
    w_slab = np.asarray(w_slab)
    if z_row.shape != (parents.size,) or w_slab.shape[0] != parents.size:
        raise StructuralError("z/w do not match the parent set size")
    M = parents.n_classes if n_classes is None else n_classes
    weights = _vote_weights(z_row, w_slab, hp.variant)
    return hp.mu0 + hp.mu * np.bincount(parents.labels, weights=weights, minlength=M)


def kernel_indicator(x_bj: float, v: float, r_j: float) -> int:
    """Binary similarity for continuous features: 1 iff |x_bj - v| <= r_j."""
    if r_j < 0:
        raise ValueError("bandwidth must be nonnegative")
    return int(abs(x_bj - v) <= r_j)


def clamp_q(q):
    return np.clip(q, Q_CLAMP, 1.0 - Q_CLAMP)


def generate_synthetic(hp: Hyperparameters, parents: ParentSet, n_cases: int,
                       rng_seed=None) -> GenerativeDraw:
    """Draw a dataset from the full generative model given a labelled parent set."""
    if parents.labels is None:
        raise LabelsRequiredError("synthetic generation needs parent labels")
    rng = np.random.default_rng(rng_seed)
    S, P = parents.features.shape
    N, M = int(n_cases), parents.n_classes
    card = parents.cardinalities

    z = (rng.random((N, S)) < hp.alpha).astype(np.uint8)
    q = clamp_q(rng.beta(hp.gamma, hp.sigma1, size=P))
    qtilde = rng.beta(hp.sigma2 * q / (1.0 - q), hp.sigma2, size=(S, P))
    w = (rng.random((N, S, P)) < qtilde[None, :, :]).astype(np.uint8)

    x = np.empty((N, P), dtype=np.int64)
    y = np.empty(N, dtype=np.int64)
    phi = []
    theta = np.empty((N, M))
    for i in range(N):
        row = []
        for j in range(P):
            p = _dirichlet(rng, compute_g(z[i], w[i], parents, hp, j))
            row.append(p)
            x[i, j] = rng.choice(card[j], p=p)
        phi.append(row)
        theta[i] = _dirichlet(rng, compute_h(z[i], w[i], parents, hp, M))
        y[i] = rng.choice(M, p=theta[i])

    data = CategoricalDataset(x, card, y, M)
    return GenerativeDraw(data, parents, ModelState(z, w, q), qtilde, phi, theta)


def _dirichlet(rng, conc):
    p = rng.dirichlet(conc)
    # tiny concentrations can leave all mass underflowed; fall back to a vertex
    if not np.all(np.isfinite(p)) or p.sum() <= 0:
        p = np.zeros_like(conc)
        p[rng.choice(conc.size, p=conc / conc.sum())] = 1.0
    return p / p.sum()
