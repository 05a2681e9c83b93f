"""Locally epistatic rule (LER) models: fit, predict, importance, CV.

A fit partitions the markers into regions, grows rule ensembles inside
each region (markers of the region plus genome-wide principal
components as candidate split variables), keeps the rules an elastic net
finds useful for that region, and combines all surviving rules in one
ridge-BLUP fit with the fixed effects.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .genotype import (
    MarkerMatrix,
    PhenotypeTable,
    RegionPartition,
    center_markers,
    compute_pcs,
    partition_equal,
    partition_hotspots,
)
from .mixed_model import VarianceComponents, gblup_fit, rrblup_fit
from .rules import IsleParams, RuleMatrix, filter_rules_elastic_net, isle_extract, standardize_rules

TARGET_MODES = ("blup", "adjusted_y")


class LerFitError(RuntimeError):
    pass


@dataclass
class HyperParams:
    """Settings of one LER fit; defaults follow the rice configuration."""

    nsplits: int = 5
    hotspots: list = None
    isle: IsleParams = field(default_factory=IsleParams)
    l1_ratio: float = 0.5
    n_pcs: int = 3
    target: str = "blup"
    cv_folds: int = 5
    enet_folds: int = 5

    def __post_init__(self):
        if self.target not in TARGET_MODES:
            raise ValueError(f"target must be one of {TARGET_MODES}")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError("l1_ratio must lie in [0, 1]")
        if self.n_pcs < 0:
            raise ValueError("n_pcs must be >= 0")
        if self.nsplits < 1:
            raise ValueError("nsplits must be >= 1")
        if self.cv_folds < 2 or self.enet_folds < 2:
            raise ValueError("fold counts must be >= 2")

    def with_seed(self, seed):
        return replace(self, isle=replace(self.isle, seed=int(seed)))


@dataclass
class LerModel:
    """A fitted LER model.

    ``rules`` are the retained rules with their training ``means``/``sds``;
    ``rule_region[j]`` is the region that produced rule ``j``. Variable
    ids in the rules are global: markers ``0..m-1``, then PCs.
    """

    partition: RegionPartition
    rules: list
    means: np.ndarray
    sds: np.ndarray
    rule_region: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    vc: VarianceComponents
    pc_loadings: np.ndarray
    pc_frequencies: np.ndarray
    marker_ids: list
    covariate_names: list
    fitted_values: np.ndarray = None
    log_delta: float = 0.0

    @property
    def n_markers(self):
        return len(self.marker_ids)

    @property
    def n_pcs(self):
        return self.pc_loadings.shape[1]

    @property
    def n_regions(self):
        return len(self.partition)

    @property
    def variable_names(self):
        return list(self.marker_ids) + [f"PC{k + 1}" for k in range(self.n_pcs)]

    @property
    def rule_matrix(self):
        return RuleMatrix(self.rules, None, self.means, self.sds)


def _design(values, scores):
    return np.column_stack([values, scores])


def _rowwise(A, B):
    """``A @ B`` reduced row by row, so equal rows of ``A`` give equal rows
    of the result (BLAS kernels do not promise that)."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        return (A * B).sum(axis=1)
    return np.stack([(A * B[:, k]).sum(axis=1) for k in range(B.shape[1])], axis=1).reshape(A.shape[0], B.shape[1])


def _pc_scores(values, loadings, freqs):
    if loadings.shape[1] == 0:
        return np.zeros((values.shape[0], 0))
    centered = values - 2.0 * freqs
    centered[np.isnan(centered)] = 0.0
    return _rowwise(centered, loadings)


def _adjust(y, X):
    return y - X @ np.linalg.lstsq(X, y, rcond=None)[0]


def _partition(M, hp):
    if hp.hotspots is not None:
        return partition_hotspots(M, hp.hotspots)
    return partition_equal(M, hp.nsplits)


def _region_rules(args):
    values, Z, region, region_id, targets, y_adj, hp, scores = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rules = isle_extract(values, region, targets, hp.isle, background=scores, region_id=region_id)
    if not rules:
        return None
    try:
        rm = standardize_rules(rules, Z)
    except ValueError:
        return None
    keep = filter_rules_elastic_net(
        rm.values, y_adj, hp.l1_ratio, folds=hp.enet_folds, seed=_derived_seed(hp.isle.seed, region_id)
    )
    if keep.size == 0:
        return None
    return rm.subset(keep)


def _derived_seed(seed, *keys):
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def fit_ler(M, phenotypes, hp=None, threads=1):
    """Fit an LER model.

    Parameters
    ----------
    M : MarkerMatrix
    phenotypes : PhenotypeTable
        ``covariates`` must hold the intercept column.
    hp : HyperParams, optional
    threads : int
        Regions are processed concurrently on this many threads; the
        result does not depend on it.

    Returns
    -------
    LerModel
    """
    hp = HyperParams() if hp is None else hp
    y = phenotypes.y
    X = phenotypes.covariates
    if y.shape[0] != M.n_samples:
        raise ValueError("phenotypes and genotypes have different sample counts")
    partition = _partition(M, hp)
    partition.validate(M)
    n_pcs = hp.n_pcs
    pcs = compute_pcs(M, n_pcs)
    scores = _pc_scores(M.values, pcs.loadings, pcs.frequencies)
    if hp.target == "blup":
        targets = gblup_fit(y, X, M).genetic_values
    else:
        targets = _adjust(y, X)
    y_adj = _adjust(y, X)
    Z = _design(M.values, scores)
    jobs = [(M.values, Z, region, i, targets, y_adj, hp, scores) for i, region in enumerate(partition.regions)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_region = list(pool.map(_region_rules, jobs))
    else:
        per_region = [_region_rules(job) for job in jobs]
    kept = [(i, rm) for i, rm in enumerate(per_region) if rm is not None]
    if not kept:
        raise LerFitError("no region retained any rule; try a lower l1_ratio")
    rules = [r for _, rm in kept for r in rm.rules]
    means = np.concatenate([rm.means for _, rm in kept])
    sds = np.concatenate([rm.sds for _, rm in kept])
    R = np.column_stack([rm.values for _, rm in kept])
    region_of = np.concatenate([np.full(rm.n_rules, i) for i, rm in kept])
    fit = rrblup_fit(y, X, R)
    return LerModel(
        partition=partition,
        rules=rules,
        means=means,
        sds=sds,
        rule_region=region_of,
        alpha=fit.random_effects,
        beta=fit.beta,
        vc=fit.vc,
        pc_loadings=pcs.loadings,
        pc_frequencies=pcs.frequencies,
        marker_ids=list(M.marker_ids),
        covariate_names=list(getattr(phenotypes, "covariate_names", None) or ["intercept"]),
        fitted_values=fit.fitted,
        log_delta=fit.log_delta,
    )


def _align(model, genotypes):
    if isinstance(genotypes, MarkerMatrix):
        index = {mid: j for j, mid in enumerate(model.marker_ids)}
        unknown = [mid for mid in genotypes.marker_ids if mid not in index]
        if unknown:
            raise KeyError(f"markers not known to the model: {unknown[:5]}")
        values = np.full((genotypes.n_samples, model.n_markers), np.nan)
        cols = [index[mid] for mid in genotypes.marker_ids]
        values[:, cols] = genotypes.values
        present = set(cols)
        needed = {c.variable for r in model.rules for c in r.conditions if c.variable < model.n_markers}
        absent = sorted(needed - present)
        if absent:
            raise KeyError(f"genotypes lack markers used by the model: {[model.marker_ids[j] for j in absent[:5]]}")
        return values
    values = np.asarray(genotypes, dtype=float)
    if values.ndim != 2 or values.shape[1] != model.n_markers:
        raise ValueError(f"expected {model.n_markers} marker columns")
    return values


def rule_design(model, genotypes):
    """Standardized rule matrix of new genotypes under ``model``."""
    values = _align(model, genotypes)
    scores = _pc_scores(values, model.pc_loadings, model.pc_frequencies)
    return model.rule_matrix.transform(_design(values, scores))


def predict_ler(model, genotypes, covariates=None, genetic_only=False):
    """``X beta + R(m) alpha`` for each row.

    ``covariates`` holds the non-intercept fixed-effect columns in the
    order used at fit time. With ``genetic_only`` only ``R(m) alpha`` is
    returned.
    """
    g = _rowwise(rule_design(model, genotypes), model.alpha)
    if genetic_only:
        return g
    n = g.shape[0]
    X = np.ones((n, 1))
    if covariates is not None:
        X = np.column_stack([X, np.asarray(covariates, dtype=float).reshape(n, -1)])
    if X.shape[1] != model.beta.shape[0]:
        raise ValueError(f"model has {model.beta.shape[0]} fixed effects, got {X.shape[1]} columns")
    return X @ model.beta + g


@dataclass
class ImportanceReport:
    """Importance and interaction scores of a fitted model.

    ``pairwise`` maps ``(a, b)`` with ``a < b`` (global variable ids) to a
    score; ``higher_order`` lists ``(variables, score)`` for interaction
    orders 3 and above. PC scores accumulate over every region and are
    inflated by roughly ``pc_inflation`` relative to markers.
    """

    rule_scores: np.ndarray
    marker_scores: np.ndarray
    pc_scores: np.ndarray
    region_scores: np.ndarray
    pairwise: dict
    higher_order: list
    variable_names: list
    pc_inflation: int = 1
    marker_region: np.ndarray = None

    def pair(self, a, b):
        if a == b:
            return float(self.variable_scores[a])
        return self.pairwise.get((min(a, b), max(a, b)), 0.0)

    @property
    def variable_scores(self):
        return np.concatenate([self.marker_scores, self.pc_scores])


def importance(model, order=2):
    """Rule, marker, PC, region and interaction importance.

    A rule scores ``|alpha_j|``; a variable scores the sum over rules that
    use it; a set of variables scores the sum over rules using all of
    them; a region scores the sum over its rules.
    """
    scores = np.abs(model.alpha)
    m, c = model.n_markers, model.n_pcs
    var_scores = np.zeros(m + c)
    pairwise = {}
    higher = {}
    max_depth = max((r.depth for r in model.rules), default=0)
    if order > max_depth:
        warnings.warn(f"interaction order {order} exceeds the deepest rule ({max_depth})")
    for rule, s in zip(model.rules, scores):
        vs = sorted(set(rule.variables))
        for v in vs:
            var_scores[v] += s
        if order >= 2:
            for a, b in itertools.combinations(vs, 2):
                pairwise[(a, b)] = pairwise.get((a, b), 0.0) + s
        for k in range(3, min(order, len(vs)) + 1):
            for combo in itertools.combinations(vs, k):
                higher[combo] = higher.get(combo, 0.0) + s
    region_scores = np.zeros(model.n_regions)
    np.add.at(region_scores, model.rule_region, scores)
    marker_region = model.partition.region_of(m)
    return ImportanceReport(
        rule_scores=scores,
        marker_scores=var_scores[:m],
        pc_scores=var_scores[m:],
        region_scores=region_scores,
        pairwise=pairwise,
        higher_order=sorted(higher.items()),
        variable_names=model.variable_names,
        pc_inflation=model.n_regions,
        marker_region=marker_region,
    )


def rank_markers(report, top):
    """Marker indices by descending score, ties by index; PCs excluded."""
    if top <= 0:
        return []
    s = np.asarray(report.marker_scores)
    order = np.lexsort((np.arange(s.size), -s))
    return [int(j) for j in order[:top]]


@dataclass
class CVResult:
    ler: np.ndarray
    gblup: np.ndarray
    flagged: np.ndarray
    folds: np.ndarray

    @property
    def ler_mean(self):
        return float(np.mean(self.ler[~self.flagged]))

    @property
    def gblup_mean(self):
        return float(np.mean(self.gblup[~self.flagged]))


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else np.nan


def fold_assignment(n, folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=int)
    for k, chunk in enumerate(np.array_split(perm, folds)):
        out[chunk] = k
    return out


def gblup_predict_genetic(fit, freqs, values):
    C_new = values - 2.0 * freqs
    C_new[np.isnan(C_new)] = 0.0
    return C_new @ fit.feature_effects


def cross_validate(M, phenotypes, hp=None, folds=None, seed=0, threads=1):
    """K-fold accuracy of LER and G-BLUP on identical folds.

    Accuracy is the Pearson correlation between predicted genetic values
    of held-out samples and their observed trait values. Folds whose
    held-out trait has no variance are flagged and left out of the mean.
    """
    hp = HyperParams() if hp is None else hp
    folds = hp.cv_folds if folds is None else folds
    if folds < 2:
        raise ValueError("need at least two folds")
    n = M.n_samples
    assign = fold_assignment(n, folds, seed)
    ler_acc = np.full(folds, np.nan)
    gb_acc = np.full(folds, np.nan)
    flagged = np.zeros(folds, dtype=bool)
    y, X = phenotypes.y, phenotypes.covariates
    for k in range(folds):
        test = np.flatnonzero(assign == k)
        train = np.flatnonzero(assign != k)
        if np.var(y[test]) == 0:
            flagged[k] = True
            continue
        M_tr = M.subset_samples(train)
        ph_tr = PhenotypeTable(y[train], X[train], None, phenotypes.covariate_names)
        model = fit_ler(M_tr, ph_tr, hp.with_seed(_derived_seed(hp.isle.seed, k)), threads=threads)
        g_ler = predict_ler(model, M.values[test], genetic_only=True)
        gb = gblup_fit(y[train], X[train], M_tr)
        _, freqs = center_markers(M_tr)
        g_gb = gblup_predict_genetic(gb, freqs, M.values[test])
        ler_acc[k] = _pearson(g_ler, y[test])
        gb_acc[k] = _pearson(g_gb, y[test])
        if np.isnan(ler_acc[k]) or np.isnan(gb_acc[k]):
            flagged[k] = True
    return CVResult(ler_acc, gb_acc, flagged, assign)
