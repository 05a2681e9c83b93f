import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import random_markers
from lerkit.estimators import GBLUPRegressor, LERRegressor, check_genotypes


def _data(seed=0, n=200, m=40):
    rng = np.random.default_rng(seed)
    G = random_markers(rng, n, m).values
    y = G[:, 1] - (G[:, 4] > 1) * (G[:, 6] < 1) + 0.5 * rng.normal(size=n)
    return G, y


def test_check_genotypes():
    with pytest.raises(ValueError, match="invalid genotype"):
        check_genotypes([[0, 3]])
    with pytest.raises(ValueError, match="2-D"):
        check_genotypes([0, 1])
    with pytest.raises(ValueError, match="expected 3"):
        check_genotypes([[0, 1]], n_markers=3)


def test_params_round_trip():
    est = LERRegressor(nrules=30, mean_depth=2.0)
    assert est.get_params()["nrules"] == 30
    twin = clone(est).set_params(seed=5)
    assert twin.seed == 5 and twin.nrules == 30


def test_not_fitted():
    with pytest.raises(NotFittedError):
        LERRegressor().predict(np.zeros((2, 3)))
    with pytest.raises(NotFittedError):
        GBLUPRegressor().predict(np.zeros((2, 3)))


def test_ler_fit_predict():
    G, y = _data()
    est = LERRegressor(nsplits=2, nrules=40, mean_depth=2.0, propcol=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est.fit(G[:150], y[:150])
    pred = est.predict(G[150:])
    assert pred.shape == (50,)
    assert np.corrcoef(pred, y[150:])[0, 1] > 0.3
    assert est.score(G[:150], y[:150]) > 0.3
    assert est.importance().marker_scores.shape == (40,)


def test_gblup_matches_covariate_design():
    G, y = _data(1)
    sex = np.arange(200) % 2
    est = GBLUPRegressor().fit(G, y + 3 * sex, covariates=sex)
    assert est.fit_.beta.shape == (2,)
    full = est.predict(G, covariates=sex)
    assert np.allclose(full, est.fit_.fitted, atol=1e-8)
    with pytest.raises(ValueError, match="fixed effects"):
        est.predict(G)
