"""Single-kernel linear mixed models fit by REML.

The model is ``y = X b + g + e`` with ``g ~ N(0, s2g K)`` and
``e ~ N(0, s2e I)``. Everything is parameterised by the variance ratio
``delta = s2e / s2g``. With ``S = I - X (X'X)^-1 X'`` and the nonzero
spectrum of ``S K S``, the restricted likelihood is a cheap function of
``delta`` alone, so it is maximised by a grid scan over ``log(delta)``
followed by root-finding on its derivative (bounded Brent search when
the maximum sits on the bracket edge).

``K`` may be passed dense or as a factor ``F`` with ``K = F F'``; the
factor route never forms an ``n x n`` matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .genotype import DegenerateKinshipError, MarkerMatrix, center_markers, compute_grm, kinship_scale

LOG_DELTA_BOUNDS = (-10.0, 10.0)
LOG_DELTA_TOL = 1e-8
_GRID_POINTS = 201


@dataclass
class VarianceComponents:
    sigma2_g: float
    sigma2_e: float

    @property
    def ratio(self):
        """``sigma2_e / sigma2_g`` (``inf`` when the genetic variance is zero)."""
        if self.sigma2_g == 0:
            return np.inf
        return self.sigma2_e / self.sigma2_g

    @property
    def heritability(self):
        total = self.sigma2_g + self.sigma2_e
        return self.sigma2_g / total if total > 0 else 0.0


@dataclass
class MixedModelFit:
    """Result of a REML fit.

    Attributes
    ----------
    beta : ndarray of shape (p,)
        GLS fixed effects at the REML optimum.
    random_effects : ndarray
        BLUPs: genetic values for a kernel fit, feature effects for a
        ridge (rr-BLUP) fit.
    vc : VarianceComponents
    log_likelihood : float
        Restricted log-likelihood at the optimum (constant terms in
        ``X`` dropped).
    fitted : ndarray of shape (n,)
        ``X beta`` plus the random-effect contribution.
    genetic_values : ndarray of shape (n,)
        Random-effect contribution to the training fit.
    weights : ndarray of shape (n,)
        ``V^-1 (y - X beta)`` scaled by ``s2g``; BLUPs for new samples
        are ``K(new, train) @ weights``.
    log_delta : float
    at_boundary : bool
        The optimum sits on an edge of the ``log(delta)`` bracket.
    """

    beta: np.ndarray
    random_effects: np.ndarray
    vc: VarianceComponents
    log_likelihood: float
    fitted: np.ndarray
    genetic_values: np.ndarray
    weights: np.ndarray
    log_delta: float
    at_boundary: bool = False
    feature_effects: np.ndarray = field(default=None, repr=False)


@dataclass
class _Spectrum:
    """Nonzero spectrum of ``S K S`` restricted to the column space of ``S``."""

    U: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    n_null: int
    ss_total: float
    Sy: np.ndarray
    dof: int


def _residualizer(X):
    Q, _ = np.linalg.qr(X)
    return Q


def _spectrum_dense(y, X, K):
    n, p = X.shape
    Q = np.linalg.qr(X, mode="complete")[0][:, p:]
    A = Q.T @ K @ Q
    xi, W = np.linalg.eigh((A + A.T) / 2.0)
    xi = np.clip(xi, 0.0, None)
    U = Q @ W
    Sy = Q @ (Q.T @ y)
    return _Spectrum(U, xi, U.T @ y, 0, float(Sy @ Sy), Sy, n - p)


def _spectrum_factor(y, X, F):
    n, p = X.shape
    Qx = _residualizer(X)
    SF = F - Qx @ (Qx.T @ F)
    U, s, _ = np.linalg.svd(SF, full_matrices=False)
    xi = s**2
    keep = xi > 1e-10 * max(xi.max(initial=0.0), 1e-300)
    keep[n - p :] = False
    U, xi = U[:, keep], xi[keep]
    Sy = y - Qx @ (Qx.T @ y)
    return _Spectrum(U, xi, U.T @ y, n - p - int(keep.sum()), float(Sy @ Sy), Sy, n - p)


def _restricted_loglik(sp, log_delta):
    delta = np.exp(log_delta)
    nu = sp.dof
    eta2 = sp.eta**2
    quad = np.sum(eta2 / (sp.xi + delta))
    logdet = np.sum(np.log(sp.xi + delta))
    if sp.n_null:
        quad += max(sp.ss_total - eta2.sum(), 0.0) / delta
        logdet += sp.n_null * log_delta
    return 0.5 * (nu * np.log(nu / (2 * np.pi)) - nu - nu * np.log(quad) - logdet)


def restricted_loglik(y, X, K=None, *, factor=None, log_delta=0.0):
    """Restricted log-likelihood at one or many values of ``log(delta)``."""
    sp = _spectrum(np.asarray(y, float), _design(X, len(y)), K, factor)
    ld = np.atleast_1d(np.asarray(log_delta, dtype=float))
    out = np.array([_restricted_loglik(sp, v) for v in ld])
    return out if np.ndim(log_delta) else float(out[0])


def _spectrum(y, X, K, factor):
    if factor is not None:
        return _spectrum_factor(y, X, np.asarray(factor, dtype=float))
    return _spectrum_dense(y, X, np.asarray(K, dtype=float))


def _score(sp, log_delta):
    """Derivative of the restricted log-likelihood in ``log(delta)``."""
    delta = np.exp(log_delta)
    eta2 = sp.eta**2
    inv = 1.0 / (sp.xi + delta)
    quad = np.sum(eta2 * inv)
    dquad = -np.sum(eta2 * inv**2)
    dlogdet = np.sum(inv)
    if sp.n_null:
        null_ss = max(sp.ss_total - eta2.sum(), 0.0)
        quad += null_ss / delta
        dquad -= null_ss / delta**2
        dlogdet += sp.n_null / delta
    return 0.5 * delta * (-sp.dof * dquad / quad - dlogdet)


def _optimize(sp):
    lo, hi = LOG_DELTA_BOUNDS
    grid = np.linspace(lo, hi, _GRID_POINTS)
    values = np.array([_restricted_loglik(sp, g) for g in grid])
    i = int(np.argmax(values))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    sa, sb = _score(sp, a), _score(sp, b)
    if sa > 0 > sb:
        # interior maximum: root of the score is located to machine precision
        best = optimize.brentq(lambda v: _score(sp, v), a, b, xtol=LOG_DELTA_TOL * 1e-4, rtol=4 * np.finfo(float).eps)
    else:
        res = optimize.minimize_scalar(
            lambda v: -_restricted_loglik(sp, v), bounds=(a, b), method="bounded", options={"xatol": LOG_DELTA_TOL}
        )
        best = float(res.x)
    best_val = _restricted_loglik(sp, best)
    if values[i] > best_val + 1e-10 * abs(best_val):
        best, best_val = float(grid[i]), float(values[i])
    at_edge = best - lo < 1e-6 or hi - best < 1e-6
    return best, best_val, at_edge


def _design(X, n):
    if X is None:
        return np.ones((n, 1))
    X = np.asarray(X, dtype=float)
    return X.reshape(n, -1)


def _fit(y, X, K=None, factor=None, log_delta=None):
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    X = _design(X, n)
    if n <= X.shape[1]:
        raise ValueError("need more observations than fixed effects")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("fixed-effect design is rank deficient")
    sp = _spectrum(y, X, K, factor)
    scale = float(y @ y) + 1.0
    if sp.ss_total <= 1e-24 * scale:
        # nothing left after the fixed effects: no genetic signal to share out
        ld = LOG_DELTA_BOUNDS[1] if log_delta is None else float(log_delta)
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        zeros = np.zeros(n)
        vc = VarianceComponents(0.0, 0.0)
        feat = None if factor is None else np.zeros(np.asarray(factor).shape[1])
        return X, sp, MixedModelFit(beta, zeros, vc, -np.inf, X @ beta, zeros, zeros, ld, log_delta is None), feat
    if log_delta is None:
        ld, loglik, at_edge = _optimize(sp)
    else:
        ld, at_edge = float(log_delta), False
        loglik = _restricted_loglik(sp, ld)
    delta = np.exp(ld)
    coef = sp.eta / (sp.xi + delta)
    w = sp.U @ coef
    if sp.n_null:
        w += (sp.Sy - sp.U @ sp.eta) / delta
    quad = float(sp.eta @ coef)
    if sp.n_null:
        quad += max(sp.ss_total - float(sp.eta @ sp.eta), 0.0) / delta
    s2g = quad / sp.dof
    if factor is not None:
        factor = np.asarray(factor, dtype=float)
        feat = factor.T @ w
        g = factor @ feat
    else:
        feat = None
        g = np.asarray(K, dtype=float) @ w
    beta = np.linalg.lstsq(X, y - g - delta * w, rcond=None)[0]
    vc = VarianceComponents(float(s2g), float(delta * s2g))
    fit = MixedModelFit(beta, g, vc, float(loglik), X @ beta + g, g, w, ld, at_edge)
    return X, sp, fit, feat


def reml_fit(y, X, K, *, ratio=None):
    """REML fit of ``y = X b + g + e`` with ``cov(g) = s2g K``.

    Parameters
    ----------
    y : ndarray of shape (n,)
    X : ndarray of shape (n, p) or None
        Fixed-effect design; ``None`` means intercept only.
    K : ndarray of shape (n, n)
        Symmetric positive semidefinite covariance of the random term.
    ratio : float, optional
        Hold ``s2e / s2g`` at this value instead of estimating it.

    Returns
    -------
    MixedModelFit
        ``random_effects`` holds the genetic-value BLUPs.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != len(y):
        raise ValueError("K must be a square matrix matching y")
    if not np.allclose(K, K.T, atol=1e-10 * max(1.0, np.abs(K).max())):
        raise ValueError("K is not symmetric")
    min_eig = np.linalg.eigvalsh(K)[0]
    if min_eig < -1e-6:
        raise ValueError(f"K is not positive semidefinite (min eigenvalue {min_eig:.3g})")
    log_delta = None if ratio is None else np.log(ratio)
    return _fit(y, X, K=K, log_delta=log_delta)[2]


def reml_fit_factor(y, X, F, *, ratio=None):
    """As :func:`reml_fit` with ``K = F F'`` given through its factor."""
    log_delta = None if ratio is None else np.log(ratio)
    X_, sp, fit, feat = _fit(y, X, factor=F, log_delta=log_delta)
    fit.feature_effects = feat
    return fit


def gblup_fit(y, X, M, *, ratio=None, dense=False):
    """G-BLUP with the VanRaden kinship ``G = C C' / k``.

    ``random_effects`` are the training genetic values; ``feature_effects``
    are the equivalent per-marker effects ``C' w / k``, so that the
    genetic value of a new genotype row ``c`` (centered with the training
    frequencies) is ``c @ feature_effects``.
    """
    C, freqs = center_markers(M)
    k = kinship_scale(freqs)
    if k <= 0:
        raise DegenerateKinshipError("all markers are monomorphic; kinship is undefined")
    if dense:
        fit = reml_fit(y, X, compute_grm(M), ratio=ratio)
        fit.feature_effects = C.T @ fit.weights / k
        return fit
    fit = reml_fit_factor(y, X, C / np.sqrt(k), ratio=ratio)
    fit.feature_effects = fit.feature_effects / np.sqrt(k)
    return fit


def rrblup_fit(y, X, features, *, ratio=None, scale=None):
    """Ridge BLUP of feature effects sharing one variance component.

    The kernel is ``K = R R' / scale`` (``scale`` defaults to the number
    of features), and the feature BLUPs are ``R' w / scale``. The
    reported variance components are per feature: ``sigma2_g`` is the
    effect variance and ``ratio`` the ridge penalty ``s2e / s2_alpha``
    of the mixed-model equations. Passing ``ratio`` fixes that penalty.
    """
    R = np.asarray(features, dtype=float)
    if R.ndim != 2 or R.shape[1] == 0 or not np.any(R):
        raise ValueError("feature matrix has rank 0")
    r = R.shape[1]
    scale = float(r if scale is None else scale)
    log_delta = None if ratio is None else np.log(ratio / scale)
    _, _, fit, _ = _fit(y, X, factor=R / np.sqrt(scale), log_delta=log_delta)
    alpha = R.T @ fit.weights / scale
    fit.random_effects = alpha
    fit.feature_effects = alpha
    fit.vc = VarianceComponents(fit.vc.sigma2_g / scale, fit.vc.sigma2_e)
    return fit


@dataclass
class GwasResult:
    marker_ids: list
    chromosomes: list
    positions: np.ndarray
    beta: np.ndarray
    se: np.ndarray
    stat: np.ndarray
    pvalue: np.ndarray
    flag: list
    vc: VarianceComponents

    def ranking(self):
        """Marker indices by ascending p-value (flagged markers last, ties by index)."""
        key = np.where([f == "" for f in self.flag], self.pvalue, 2.0)
        return np.lexsort((np.arange(len(key)), key))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["marker_id", "chromosome", "position", "beta", "se", "stat", "pvalue", "flag"])
            for j, mid in enumerate(self.marker_ids):
                w.writerow(
                    [mid, self.chromosomes[j], int(self.positions[j])]
                    + [repr(float(v)) for v in (self.beta[j], self.se[j], self.stat[j], self.pvalue[j])]
                    + [self.flag[j]]
                )


def _inv_sqrt_apply(U, xi, delta, V):
    """``(U diag(xi) U' + delta I)^{-1/2} V`` for orthonormal ``U``."""
    proj = U.T @ V
    return U @ (proj / np.sqrt(xi + delta)[:, None]) + (V - U @ proj) / np.sqrt(delta)


def gwas_emma(y, X, M, *, exact=False, covariates=None):
    """Single-marker mixed-model association scan.

    The null model (kinship from all markers) is fit once by REML and its
    variance ratio is held fixed while each marker is tested as an extra
    fixed effect; ``exact=True`` re-estimates the ratio for every marker.
    Wald statistics use a t reference with ``n - p - 1`` degrees of
    freedom. Monomorphic markers get ``pvalue = 1`` and flag
    ``"monomorphic"``; markers spanned by ``X`` are flagged ``"collinear"``.

    ``covariates`` are appended to ``X`` (e.g. principal components).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    X = _design(X, n)
    if covariates is not None:
        X = np.column_stack([X, np.asarray(covariates, dtype=float).reshape(n, -1)])
    p = X.shape[1]
    if n <= p + 1:
        raise ValueError("need n > p + 1 for the association scan")
    C, freqs = center_markers(M)
    k = kinship_scale(freqs)
    if k <= 0:
        raise DegenerateKinshipError("all markers are monomorphic; kinship is undefined")
    F = C / np.sqrt(k)
    null = reml_fit_factor(y, X, F)
    m = C.shape[1]
    monomorphic = np.isclose(freqs, 0.0) | np.isclose(freqs, 1.0) | ~np.any(C, axis=0)
    collinear = np.zeros(m, dtype=bool)
    U0, s0, _ = np.linalg.svd(F, full_matrices=False)
    xi0 = s0**2
    keep = xi0 > 1e-10 * max(xi0.max(initial=0.0), 1e-300)
    U0, xi0 = U0[:, keep], xi0[keep]
    beta = np.zeros(m)
    se = np.full(m, np.nan)
    stat = np.zeros(m)
    df = n - p - 1
    deltas = np.full(m, np.exp(null.log_delta))
    if exact:
        for j in np.flatnonzero(~monomorphic):
            Xj = np.column_stack([X, C[:, j]])
            if np.linalg.matrix_rank(Xj) > p:
                deltas[j] = np.exp(_fit(y, Xj, factor=F)[2].log_delta)
    for delta in np.unique(deltas):
        cols = np.flatnonzero((deltas == delta) & ~monomorphic)
        if cols.size == 0:
            continue
        yt = _inv_sqrt_apply(U0, xi0, delta, y[:, None])[:, 0]
        Xt = _inv_sqrt_apply(U0, xi0, delta, X)
        Ct = _inv_sqrt_apply(U0, xi0, delta, C[:, cols])
        Q = _residualizer(Xt)
        yr = yt - Q @ (Q.T @ yt)
        Cr = Ct - Q @ (Q.T @ Ct)
        sxx = np.einsum("ij,ij->j", Cr, Cr)
        sxy = Cr.T @ yr
        ok = sxx > 1e-10 * np.einsum("ij,ij->j", Ct, Ct).clip(min=1e-300)
        b = np.where(ok, sxy / np.where(ok, sxx, 1.0), 0.0)
        rss = np.clip(yr @ yr - b * sxy, 0.0, None)
        s2 = rss / df
        se_c = np.where(ok, np.sqrt(s2 / np.where(ok, sxx, 1.0)), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(ok & (se_c > 0), b / se_c, 0.0)
        beta[cols], se[cols], stat[cols] = b, se_c, t
        collinear[cols[~ok]] = True
    pvalue = np.clip(2.0 * stats.t.sf(np.abs(stat), df), np.finfo(float).tiny, 1.0)
    untested = monomorphic | collinear
    pvalue[untested] = 1.0
    stat[untested] = 0.0
    flag = ["monomorphic" if a else "collinear" if b else "" for a, b in zip(monomorphic, collinear)]
    if isinstance(M, MarkerMatrix):
        ids, chroms, pos = M.marker_ids, M.chromosomes, M.positions
    else:
        ids, chroms, pos = [f"m{j + 1}" for j in range(m)], ["1"] * m, np.arange(1, m + 1)
    return GwasResult(list(ids), list(chroms), np.asarray(pos), beta, se, stat, pvalue, flag, null.vc)
