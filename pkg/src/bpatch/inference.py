"""Collapsed posterior, full conditionals and the Metropolis-within-Gibbs driver.

The per-parent and per-feature success probabilities, the feature
distributions and the label distributions are integrated out analytically,
leaving a chain over (z, w, q).  The heavy lifting is in
:mod:`bpatch._kernels`; this module owns the public types, the closed forms
and a slow from-scratch log joint used to cross-check the kernels.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special, stats

from . import _kernels as K
from .model import (CategoricalDataset, Hyperparameters, LabelsRequiredError, ModelState,
                    ParentSet, StructuralError, Variant, clamp_q, compute_g, compute_h)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- closed forms

def _check_q(q_j):
    if not 0.0 < q_j < 1.0:
        raise ValueError(f"q_j must lie in (0, 1), got {q_j}")


def log_marginal_w_column(w_column, q_j: float, sigma2: float) -> float:
    """Beta-Binomial log probability of one w column given q_j."""
    _check_q(q_j)
    w_column = np.asarray(w_column)
    n = w_column.size
    c = int(w_column.sum())
    qp = sigma2 * q_j / (1.0 - q_j)
    return float(special.betaln(qp + c, sigma2 + n - c) - special.betaln(qp, sigma2))


def posterior_mean_qtilde(w_column, q_j: float, sigma2: float, n_cases: int | None = None) -> float:
    _check_q(q_j)
    w_column = np.asarray(w_column)
    n = w_column.size if n_cases is None else n_cases
    qp = sigma2 * q_j / (1.0 - q_j)
    return float((qp + w_column.sum()) / (qp + sigma2 + n))


# Offset added to numerator and denominator of both predictives.  1.0 is the
# form used throughout; tests set 0.0 to compare against the plain
# Dirichlet-categorical predictive g(x) / sum g.
PREDICTIVE_OFFSET = 1.0


def predictive_x(g, x_val: int) -> float:
    """Collapsed probability of an observed outcome, (g(x)+1) / (sum g + 1)."""
    g = np.asarray(g, dtype=float)
    return float((g[x_val] + PREDICTIVE_OFFSET) / (g.sum() + PREDICTIVE_OFFSET))


def predictive_y(h, y_val: int) -> float:
    h = np.asarray(h, dtype=float)
    return float((h[y_val] + PREDICTIVE_OFFSET) / (h.sum() + PREDICTIVE_OFFSET))


def log_q_prior(q_j: float, hp: Hyperparameters) -> float:
    return float(stats.beta.logpdf(q_j, hp.gamma, hp.sigma1))


# ---------------------------------------------------------------- config / cache

@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 5000
    burn_in: int = 2000
    thinning: int = 5
    mh_step_size: float = 0.5
    rng_seed: int = 0
    supervised: bool = True
    debug: bool = False

    def __post_init__(self):
        if self.n_iterations < 1 or not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if not self.mh_step_size > 0:
            raise ValueError("mh_step_size must be positive")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thinning


@dataclass
class CountCache:
    """Vote counts behind g and h plus the w column sums."""

    cnt: np.ndarray
    tot: np.ndarray
    hc: np.ndarray
    htot: np.ndarray
    col: np.ndarray
    wsum: np.ndarray

    @classmethod
    def from_state(cls, state: ModelState, parents: ParentSet, hp: Hyperparameters,
                   n_classes: int | None = None) -> "CountCache":
        z = state.z.astype(np.int64)
        w = state.w.astype(np.int64)
        M = parents.n_classes if n_classes is None else n_classes
        vmax = int(parents.cardinalities.max())
        wsum = w.sum(axis=2)
        weights = z if hp.variant is Variant.MODEL1 else z * wsum
        onehot = np.eye(vmax, dtype=np.int64)[parents.features]          # S x P x V
        cnt = np.einsum("ib,ibj,bjv->ijv", weights, w, onehot)
        if parents.labels is not None:
            hc = weights @ np.eye(M, dtype=np.int64)[parents.labels]
        else:
            hc = np.zeros((z.shape[0], M), dtype=np.int64)
        return cls(cnt=cnt, tot=cnt.sum(axis=2), hc=hc, htot=hc.sum(axis=1),
                   col=w.sum(axis=0), wsum=wsum)

    def copy(self) -> "CountCache":
        return CountCache(*(a.copy() for a in
                            (self.cnt, self.tot, self.hc, self.htot, self.col, self.wsum)))

    def equals(self, other: "CountCache") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("cnt", "tot", "hc", "htot", "col", "wsum"))

    def verify(self, state, parents, hp, n_classes=None):
        fresh = CountCache.from_state(state, parents, hp, n_classes)
        if not self.equals(fresh):
            raise RuntimeError("count cache diverged from a fresh recount")


# ---------------------------------------------------------------- reference joint

def log_joint(state: ModelState, data: CategoricalDataset, parents: ParentSet,
              hp: Hyperparameters, supervised: bool = True) -> float:
    """Collapsed log posterior of (z, w, q) recomputed from scratch.

    Slow; meant for tests and small problems.
    """
    N, S, P = state.w.shape
    if data.features.shape != (N, P) or parents.size != S:
        raise StructuralError("state does not match data/parents")
    out = 0.0
    for j in range(P):
        out += log_q_prior(state.q[j], hp)
        for b in range(S):
            out += log_marginal_w_column(state.w[:, b, j], state.q[j], hp.sigma2)
    for i in range(N):
        for j in range(P):
            g = compute_g(state.z[i], state.w[i], parents, hp, j)
            out += np.log(predictive_x(g, data.features[i, j]))
        if supervised:
            h = compute_h(state.z[i], state.w[i], parents, hp, data.n_classes)
            out += np.log(predictive_y(h, data.labels[i]))
    nz = int(state.z.sum())
    for count, p in ((nz, hp.alpha), (state.z.size - nz, 1.0 - hp.alpha)):
        if count:
            out += count * np.log(p) if p > 0 else -np.inf
    return float(out)


# ---------------------------------------------------------------- kernel plumbing

def _hp_array(hp: Hyperparameters) -> np.ndarray:
    return np.array([hp.alpha, hp.gamma, hp.sigma1, hp.sigma2,
                     hp.lambda0, hp.lam, hp.mu0, hp.mu, PREDICTIVE_OFFSET], dtype=np.float64)


def _variant_code(hp: Hyperparameters) -> int:
    return 1 if hp.variant is Variant.MODEL1 else 2


def _labels_or_missing(labels, n):
    if labels is None:
        return np.full(n, -1, dtype=np.int64)
    return np.ascontiguousarray(labels, dtype=np.int64)


def _check_compatible(data: CategoricalDataset, parents: ParentSet):
    if data.n_features != parents.features.shape[1]:
        raise StructuralError("data and parents disagree on the number of features")
    if not np.array_equal(data.cardinalities, parents.cardinalities):
        raise StructuralError("data and parents disagree on feature cardinalities")


class _Problem:
    """Contiguous kernel inputs for one (data, parents, hp) triple."""

    def __init__(self, data, parents, hp, supervised):
        _check_compatible(data, parents)
        if supervised and (data.labels is None or parents.labels is None):
            raise LabelsRequiredError("supervised training needs case and parent labels")
        self.X = np.ascontiguousarray(data.features, dtype=np.int64)
        self.Y = _labels_or_missing(data.labels if supervised else None, data.n_cases)
        self.Xp = np.ascontiguousarray(parents.features, dtype=np.int64)
        self.Yp = _labels_or_missing(parents.labels, parents.size)
        self.card = np.ascontiguousarray(data.cardinalities, dtype=np.int64)
        self.M = int(max(data.n_classes, parents.n_classes))
        self.hp = _hp_array(hp)
        self.variant = _variant_code(hp)
        self.use_label = bool(supervised)

    def cache_arrays(self, state: ModelState, counts: CountCache | None, parents, hp):
        if counts is None:
            counts = CountCache.from_state(state, parents, hp, self.M)
        return counts.copy()


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


# ---------------------------------------------------------------- conditionals

def cond_q_logdensity(j: int, q_candidate: float, state: ModelState, counts: CountCache,
                      hp: Hyperparameters) -> float:
    """Unnormalized log conditional density of q_j: prior plus column marginals."""
    _check_q(q_candidate)
    n = state.z.shape[0]
    return float(K.q_logdensity(j, q_candidate, _hp_array(hp), counts.col, n))


def mh_step_q(j: int, state: ModelState, counts: CountCache, step_size: float,
              rng: np.random.Generator, hp: Hyperparameters) -> tuple[float, bool]:
    """One random-walk Metropolis step for q_j on the logit scale."""
    q_j = float(state.q[j])
    u = special.logit(q_j) + step_size * rng.standard_normal()
    prop = float(special.expit(u))
    if not K.Q_LO <= prop <= K.Q_HI:
        return q_j, False
    log_ratio = (cond_q_logdensity(j, prop, state, counts, hp) + np.log(prop) + np.log1p(-prop)
                 - cond_q_logdensity(j, q_j, state, counts, hp) - np.log(q_j) - np.log1p(-q_j))
    if np.log(rng.random()) < log_ratio:
        return prop, True
    return q_j, False


def cond_w_prob(i: int, b: int, j: int, state: ModelState, counts: CountCache,
                data: CategoricalDataset, parents: ParentSet, hp: Hyperparameters,
                supervised: bool = True) -> float:
    """Pr(w_ibj = 1 | everything else)."""
    pb = _Problem(data, parents, hp, supervised)
    d = K.logodds_train(i, b, j, pb.X, pb.Y, pb.Xp, pb.Yp, pb.card, pb.M, pb.hp, pb.variant,
                        pb.use_label, state.z, state.w, counts.wsum, state.q, counts.col,
                        counts.cnt, counts.tot, counts.hc, counts.htot)
    return float(special.expit(d))


def cond_z_prob(i: int, b: int, state: ModelState, counts: CountCache,
                data: CategoricalDataset, parents: ParentSet, hp: Hyperparameters,
                supervised: bool = True) -> float:
    """Pr(z_ib = 1 | everything else); the label factor enters only when supervised."""
    if hp.alpha <= 0.0:
        return 0.0
    if hp.alpha >= 1.0:
        return 1.0
    pb = _Problem(data, parents, hp, supervised)
    d = K.logodds_train(i, b, -1, pb.X, pb.Y, pb.Xp, pb.Yp, pb.card, pb.M, pb.hp, pb.variant,
                        pb.use_label, state.z, state.w, counts.wsum, state.q, counts.col,
                        counts.cnt, counts.tot, counts.hc, counts.htot)
    return float(special.expit(d))


# ---------------------------------------------------------------- chain

def initial_state(n_cases: int, n_parents: int, n_features: int, hp: Hyperparameters,
                  rng: np.random.Generator) -> ModelState:
    """Prior draw for z and q, fair coin for w."""
    z = (rng.random((n_cases, n_parents)) < hp.alpha).astype(np.uint8)
    q = clamp_q(rng.beta(hp.gamma, hp.sigma1, size=n_features))
    w = (rng.random((n_cases, n_parents, n_features)) < 0.5).astype(np.uint8)
    return ModelState(z, w, q)


def mwg_sweep(state: ModelState, counts: CountCache | None, data: CategoricalDataset,
              parents: ParentSet, hp: Hyperparameters, config: ChainConfig,
              rng: np.random.Generator) -> tuple[ModelState, CountCache]:
    """One full z, q, w pass; returns the new state and its cache."""
    pb = _Problem(data, parents, hp, config.supervised)
    c = pb.cache_arrays(state, counts, parents, hp)
    z, w, q = state.z.copy(), state.w.copy(), state.q.copy()
    accepts = np.zeros(data.n_features, dtype=np.int64)
    K.run_sweeps(pb.X, pb.Y, pb.Xp, pb.Yp, pb.card, pb.M, pb.hp, pb.variant, pb.use_label,
                 z, w, c.wsum, q, c.col, c.cnt, c.tot, c.hc, c.htot, 1,
                 config.mh_step_size, _seed_from(rng), config.debug, accepts)
    return ModelState(z, w, q), c


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws of (z, w, q) plus chain diagnostics.

    ``w`` is stored bit-packed per draw; ``col`` keeps the per-draw column
    sums that new-case inference needs.
    """

    q: np.ndarray
    z: np.ndarray
    w_packed: np.ndarray
    col: np.ndarray
    acceptance_rate_q: np.ndarray
    log_posterior_trace: np.ndarray
    config: ChainConfig
    hp: Hyperparameters
    shape: tuple[int, int, int]
    _w_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_samples(self) -> int:
        return self.q.shape[0]

    @property
    def n_cases(self) -> int:
        return self.shape[0]

    def w_at(self, k: int) -> np.ndarray:
        N, S, P = self.shape
        bits = np.unpackbits(self.w_packed[k], count=N * S * P, bitorder="little")
        return bits.reshape(N, S, P)

    def state(self, k: int) -> ModelState:
        return ModelState(self.z[k], self.w_at(k), self.q[k])

    @property
    def states(self) -> list[ModelState]:
        return [self.state(k) for k in range(self.n_samples)]

    def mean_z(self) -> np.ndarray:
        return self.z.mean(axis=0)

    def mean_w(self) -> np.ndarray:
        acc = np.zeros(self.shape)
        for k in range(self.n_samples):
            acc += self.w_at(k)
        return acc / max(self.n_samples, 1)

    def mean_kappa(self) -> np.ndarray:
        acc = np.zeros(self.shape[:2])
        for k in range(self.n_samples):
            acc += self.z[k] * self.w_at(k).sum(axis=2)
        return acc / max(self.n_samples, 1)


def run_chain(data: CategoricalDataset, parents: ParentSet, hp: Hyperparameters,
              config: ChainConfig, init: ModelState | None = None) -> PosteriorSamples:
    """Initialize, run the sampler, drop burn-in and thin."""
    pb = _Problem(data, parents, hp, config.supervised)
    rng = np.random.default_rng(config.rng_seed)
    N, S, P = data.n_cases, parents.size, data.n_features
    state = initial_state(N, S, P, hp, rng) if init is None else init
    c = CountCache.from_state(state, parents, hp, pb.M)
    z, w, q = state.z.copy(), state.w.copy(), state.q.copy()
    q_s, z_s, w_s, col_s, trace, accepts = K.run_chain(
        pb.X, pb.Y, pb.Xp, pb.Yp, pb.card, pb.M, pb.hp, pb.variant, pb.use_label,
        z, w, c.wsum, q, c.col, c.cnt, c.tot, c.hc, c.htot,
        config.n_iterations, config.burn_in, config.thinning, config.mh_step_size,
        _seed_from(rng), config.debug)
    bad = np.flatnonzero(~np.isfinite(trace))
    if bad.size:
        raise FloatingPointError(
            f"non-finite log posterior at iteration {bad[0]} (value {trace[bad[0]]})")
    log.debug("chain done: N=%d S=%d P=%d, final log posterior %.3f", N, S, P, trace[-1])
    return PosteriorSamples(
        q=q_s, z=z_s, w_packed=w_s, col=col_s,
        acceptance_rate_q=accepts / config.n_iterations,
        log_posterior_trace=trace, config=config, hp=hp, shape=(N, S, P))


# ---------------------------------------------------------------- serialization

def _rle_encode(bits: np.ndarray) -> dict:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size == 0:
        return {"length": 0, "first": 0, "runs": []}
    edges = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate(([0], edges, [bits.size]))
    return {"length": int(bits.size), "first": int(bits[0]),
            "runs": np.diff(bounds).astype(int).tolist()}


def _rle_decode(doc: dict) -> np.ndarray:
    out = np.empty(doc["length"], dtype=np.uint8)
    pos, val = 0, doc["first"]
    for run in doc["runs"]:
        out[pos:pos + run] = val
        pos += run
        val ^= 1
    return out


def samples_to_json(samples: PosteriorSamples) -> dict:
    """JSON layout: z/w as run-length-encoded bitsets, q as float lists."""
    N, S, P = samples.shape
    return {
        "format": "bpatch-posterior-samples/1",
        "shape": {"n_cases": N, "n_parents": S, "n_features": P},
        "config": asdict(samples.config),
        "hyperparameters": samples.hp.as_dict(),
        "acceptance_rate_q": samples.acceptance_rate_q.tolist(),
        "log_posterior_trace": samples.log_posterior_trace.tolist(),
        "draws": [
            {"q": samples.q[k].tolist(),
             "z": _rle_encode(samples.z[k]),
             "w": _rle_encode(samples.w_at(k))}
            for k in range(samples.n_samples)
        ],
    }


def samples_from_json(doc: dict) -> PosteriorSamples:
    shp = doc["shape"]
    N, S, P = shp["n_cases"], shp["n_parents"], shp["n_features"]
    draws = doc["draws"]
    q = np.array([d["q"] for d in draws], dtype=float).reshape(len(draws), P)
    z = np.array([_rle_decode(d["z"]) for d in draws], dtype=np.uint8).reshape(len(draws), N, S)
    w_full = [_rle_decode(d["w"]).reshape(N, S, P) for d in draws]
    w_packed = np.array([np.packbits(x.ravel(), bitorder="little") for x in w_full],
                        dtype=np.uint8).reshape(len(draws), (N * S * P + 7) // 8)
    col = np.array([x.sum(axis=0) for x in w_full], dtype=np.int32).reshape(len(draws), S, P)
    hp_doc = dict(doc["hyperparameters"])
    return PosteriorSamples(
        q=q, z=z, w_packed=w_packed, col=col,
        acceptance_rate_q=np.asarray(doc["acceptance_rate_q"], dtype=float),
        log_posterior_trace=np.asarray(doc["log_posterior_trace"], dtype=float),
        config=ChainConfig(**doc["config"]), hp=Hyperparameters(**hp_doc), shape=(N, S, P))
