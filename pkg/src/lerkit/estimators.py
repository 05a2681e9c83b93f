"""scikit-learn style wrappers around the LER and G-BLUP fits.

``X`` is an n x m genotype matrix (0/1/2, ``nan`` for missing). Fixed
effects other than the intercept go in ``covariates``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .genotype import MarkerMatrix, PhenotypeTable, center_markers
from .mixed_model import gblup_fit
from .pipeline import HyperParams, fit_ler, importance, predict_ler
from .rules import IsleParams


def check_genotypes(X, n_markers=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D genotype matrix, got shape {X.shape}")
    bad = ~np.isnan(X) & ~np.isin(X, (0.0, 1.0, 2.0))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"invalid genotype code {X[i, j]!r} at ({i}, {j})")
    if n_markers is not None and X.shape[1] != n_markers:
        raise ValueError(f"expected {n_markers} markers, got {X.shape[1]}")
    return X


def _phenotypes(y, covariates, n):
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} entries for {n} genotype rows")
    cov = None if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
    names = None if cov is None else [f"cov{k + 1}" for k in range(cov.shape[1])]
    return PhenotypeTable.from_arrays(y, cov, None, names)


def _fixed(covariates, n):
    X = np.ones((n, 1))
    if covariates is not None:
        X = np.column_stack([X, np.asarray(covariates, dtype=float).reshape(n, -1)])
    return X


class LERRegressor(RegressorMixin, BaseEstimator):
    def __init__(
        self,
        nsplits=5,
        nrules=500,
        mean_depth=4.0,
        proprow=0.3,
        propcol=0.1,
        nu=0.1,
        min_node=5,
        l1_ratio=0.5,
        n_pcs=3,
        target="blup",
        enet_folds=5,
        seed=0,
        threads=1,
    ):
        self.nsplits = nsplits
        self.nrules = nrules
        self.mean_depth = mean_depth
        self.proprow = proprow
        self.propcol = propcol
        self.nu = nu
        self.min_node = min_node
        self.l1_ratio = l1_ratio
        self.n_pcs = n_pcs
        self.target = target
        self.enet_folds = enet_folds
        self.seed = seed
        self.threads = threads

    def hyperparams(self):
        isle = IsleParams(self.nrules, self.mean_depth, self.proprow, self.propcol, self.nu, self.seed, self.min_node)
        return HyperParams(
            nsplits=self.nsplits,
            isle=isle,
            l1_ratio=self.l1_ratio,
            n_pcs=self.n_pcs,
            target=self.target,
            enet_folds=self.enet_folds,
        )

    def fit(self, X, y, covariates=None):
        X = check_genotypes(X)
        M = MarkerMatrix.from_array(X)
        self.model_ = fit_ler(M, _phenotypes(y, covariates, X.shape[0]), self.hyperparams(), threads=self.threads)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, covariates=None):
        check_is_fitted(self, "model_")
        X = check_genotypes(X, self.n_features_in_)
        return predict_ler(self.model_, X, covariates)

    def predict_genetic(self, X):
        check_is_fitted(self, "model_")
        return predict_ler(self.model_, check_genotypes(X, self.n_features_in_), genetic_only=True)

    def importance(self, order=2):
        check_is_fitted(self, "model_")
        return importance(self.model_, order)


class GBLUPRegressor(RegressorMixin, BaseEstimator):
    """G-BLUP with REML variance components; ``ratio`` fixes ``sigma2_e / sigma2_g``."""

    def __init__(self, ratio=None):
        self.ratio = ratio

    def fit(self, X, y, covariates=None):
        X = check_genotypes(X)
        M = MarkerMatrix.from_array(X)
        ph = _phenotypes(y, covariates, X.shape[0])
        self.fit_ = gblup_fit(ph.y, ph.covariates, M, ratio=self.ratio)
        _, self.frequencies_ = center_markers(M)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_genetic(self, X):
        check_is_fitted(self, "fit_")
        X = check_genotypes(X, self.n_features_in_)
        C = X - 2.0 * self.frequencies_
        C[np.isnan(C)] = 0.0
        return C @ self.fit_.feature_effects

    def predict(self, X, covariates=None):
        g = self.predict_genetic(X)
        Xf = _fixed(covariates, g.shape[0])
        if Xf.shape[1] != self.fit_.beta.shape[0]:
            raise ValueError(f"model has {self.fit_.beta.shape[0]} fixed effects, got {Xf.shape[1]} columns")
        return Xf @ self.fit_.beta + g
