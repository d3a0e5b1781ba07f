"""scikit-learn style wrappers around the sampler and the KNN baseline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder, OrdinalEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .evaluation import knn_predict
from .inference import ChainConfig, run_chain
from .model import CategoricalDataset, Hyperparameters, ParentSet
from .prediction import (classify, explain, feature_importance, infer_new_case,
                         predict_theta_many)


def _encode_fit(X):
    enc = OrdinalEncoder(dtype=np.int64)
    codes = enc.fit_transform(X).astype(np.int64)
    card = np.array([len(c) for c in enc.categories_], dtype=np.int64)
    return enc, codes, card


class BayesianPatchworksClassifier(ClassifierMixin, BaseEstimator):
    """Case-based classifier: each case is explained by a patchwork of parents.

    ``X`` holds categorical values (any hashable codes; each column is
    ordinally encoded on fit).  ``n_parents`` training rows are drawn at
    random as the parent set and the rest are the cases the chain explains.
    """

    def __init__(self, n_parents=80, alpha=0.5, gamma=0.5, sigma1=5.0, sigma2=0.5,
                 lambda0=0.001, lam=2.0, mu0=0.001, mu=1.0, variant="model2",
                 supervised=True, n_iterations=5000, burn_in=2000, thinning=5,
                 mh_step_size=0.5, n_new_sweeps=10, threshold=0.5, random_state=None):
        self.n_parents = n_parents
        self.alpha = alpha
        self.gamma = gamma
        self.sigma1 = sigma1
        self.sigma2 = sigma2
        self.lambda0 = lambda0
        self.lam = lam
        self.mu0 = mu0
        self.mu = mu
        self.variant = variant
        self.supervised = supervised
        self.n_iterations = n_iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.mh_step_size = mh_step_size
        self.n_new_sweeps = n_new_sweeps
        self.threshold = threshold
        self.random_state = random_state

    def _hp(self):
        return Hyperparameters(alpha=self.alpha, gamma=self.gamma, sigma1=self.sigma1,
                               sigma2=self.sigma2, lambda0=self.lambda0, lam=self.lam,
                               mu0=self.mu0, mu=self.mu, variant=self.variant)

    def _seed(self):
        rs = self.random_state
        if isinstance(rs, np.random.Generator):
            return int(rs.integers(0, 2**31 - 1))
        return int(np.random.default_rng(rs).integers(0, 2**31 - 1))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=None)
        self._label_encoder = LabelEncoder().fit(y)
        self.classes_ = self._label_encoder.classes_
        yc = self._label_encoder.transform(y)
        self._encoder, codes, card = _encode_fit(X)
        self.n_features_in_ = X.shape[1]
        n = codes.shape[0]
        if not 1 <= self.n_parents < n:
            raise ValueError(f"n_parents must lie in [1, {n - 1}] for {n} training rows")
        seed = self._seed()
        rng = np.random.default_rng(seed)
        parent_rows = np.sort(rng.choice(n, size=self.n_parents, replace=False))
        case_rows = np.setdiff1d(np.arange(n), parent_rows)
        M = max(len(self.classes_), 2)
        self.parents_ = ParentSet(codes[parent_rows], card, yc[parent_rows], M, parent_rows)
        data = CategoricalDataset(codes[case_rows], card, yc[case_rows], M, case_ids=case_rows)
        hp = self._hp()
        config = ChainConfig(self.n_iterations, self.burn_in, self.thinning, self.mh_step_size,
                             int(rng.integers(0, 2**31 - 1)), self.supervised)
        self.samples_ = run_chain(data, self.parents_, hp, config)
        self.hyperparameters_ = hp
        self._predict_seed = int(rng.integers(0, 2**31 - 1))
        self.feature_importances_ = feature_importance(self.samples_).mean
        return self

    def _codes(self, X):
        check_is_fitted(self, "samples_")
        X = check_array(X, dtype=None)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._encoder.transform(X).astype(np.int64)

    def predict_proba(self, X):
        theta = predict_theta_many(self._codes(X), self.samples_, self.parents_,
                                   self.hyperparameters_, self.n_new_sweeps, self._predict_seed)
        return theta[:, :len(self.classes_)]

    def predict(self, X):
        proba = self.predict_proba(X)
        idx = np.array([classify(p, self.threshold) for p in proba], dtype=np.int64)
        return self.classes_[idx]

    def explain(self, X, top_k=4, y=None):
        """Neighbor explanations; passing ``y`` conditions on the known labels."""
        codes = self._codes(X)
        yc = None if y is None else self._label_encoder.transform(np.asarray(y))
        out = []
        for r, x in enumerate(codes):
            draws = infer_new_case(x, None if yc is None else yc[r], self.samples_,
                                   self.parents_, self.hyperparameters_, self.n_new_sweeps,
                                   self._predict_seed + r)
            out.append(explain(r, x, draws, self.parents_, top_k))
        return out


class HammingKNNClassifier(ClassifierMixin, BaseEstimator):
    """K nearest neighbors under (optionally feature-weighted) Hamming distance."""

    def __init__(self, n_neighbors=30, mode="plain", feature_weights=None):
        self.n_neighbors = n_neighbors
        self.mode = mode
        self.feature_weights = feature_weights

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=None)
        self._label_encoder = LabelEncoder().fit(y)
        self.classes_ = self._label_encoder.classes_
        self._y = self._label_encoder.transform(y)
        self._encoder = OrdinalEncoder(dtype=np.int64, handle_unknown="use_encoded_value",
                                       unknown_value=-1)
        self._X = self._encoder.fit_transform(X).astype(np.int64)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "_X")
        X = check_array(X, dtype=None)
        codes = self._encoder.transform(X).astype(np.int64)
        idx = knn_predict(self._X, self._y, codes, self.n_neighbors, self.mode,
                          self.feature_weights, len(self.classes_))
        return self.classes_[idx]
