"""Rule extraction by importance-sampled tree ensembles, and rule filtering.

Variables are addressed by a global id: ``0 .. m-1`` are markers in map
order and ``m + k`` is the k-th principal component. A design matrix
``Z`` with columns in that order (raw genotype codes with ``nan`` for
missing, followed by PC scores) evaluates any rule directly.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import ElasticNet, ElasticNetCV
from sklearn.model_selection import KFold

from . import tree as _tree


@dataclass(frozen=True)
class SplitCondition:
    """``lower < x <= upper`` (interval) or ``x in values`` (subset).

    ``missing_in`` says whether a missing value satisfies the condition.
    """

    variable: int
    lower: float = -math.inf
    upper: float = math.inf
    missing_in: bool = False
    values: frozenset = None

    def __post_init__(self):
        if self.values is None:
            if math.isinf(self.lower) and math.isinf(self.upper):
                raise ValueError("interval condition needs at least one finite bound")
            if not self.lower < self.upper:
                raise ValueError("empty interval condition")
        elif not self.values:
            raise ValueError("subset condition needs at least one value")

    @property
    def kind(self):
        return "interval" if self.values is None else "subset"

    def holds(self, x):
        x = np.asarray(x, dtype=float)
        miss = np.isnan(x)
        if self.values is None:
            with np.errstate(invalid="ignore"):
                inside = (x > self.lower) & (x <= self.upper)
        else:
            inside = np.isin(x, list(self.values))
        return np.where(miss, self.missing_in, inside)

    def key(self):
        vals = None if self.values is None else tuple(sorted(self.values))
        return (self.variable, self.lower, self.upper, self.missing_in, vals)


@dataclass(frozen=True)
class Rule:
    """Conjunction of split conditions, at most one per variable."""

    conditions: tuple
    origin: tuple = (0, 0, 0)

    @property
    def depth(self):
        return len(self.conditions)

    @property
    def variables(self):
        return tuple(c.variable for c in self.conditions)

    def key(self):
        return tuple(c.key() for c in self.conditions)

    def evaluate(self, Z, columns=None):
        """0/1 value of the rule on each row of ``Z`` (or a single row)."""
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        out = np.ones(Z.shape[0], dtype=bool)
        for c in self.conditions:
            col = c.variable if columns is None else columns[c.variable]
            out &= c.holds(Z[:, col])
        out = out.astype(np.int8)
        return int(out[0]) if single else out


def evaluate_rule(rule, row):
    """Value of ``rule`` on one row indexed by global variable id."""
    return rule.evaluate(np.asarray(row, dtype=float))


@dataclass
class IsleParams:
    """Sampling controls for rule generation in one region.

    ``proprow`` is the fraction of the region's markers offered to each
    tree and ``propcol`` the fraction of training samples it sees.
    """

    nrules: int = 500
    mean_depth: float = 4.0
    proprow: float = 0.3
    propcol: float = 0.1
    nu: float = 0.1
    seed: int = 0
    min_node: int = 5

    def __post_init__(self):
        if int(self.nrules) < 1:
            raise ValueError("nrules must be >= 1")
        if not self.mean_depth >= 1:
            raise ValueError("mean_depth must be >= 1")
        if not 0 < self.proprow <= 1:
            raise ValueError("proprow must lie in (0, 1]")
        if not 0 < self.propcol <= 1:
            raise ValueError("propcol must lie in (0, 1]")
        if not 0 <= self.nu <= 1:
            raise ValueError("nu must lie in [0, 1]")
        if int(self.min_node) < 1:
            raise ValueError("min_node must be >= 1")


def sample_depth(mean_depth, rng):
    """Draw a tree depth from Poisson(``mean_depth``) conditioned on >= 1."""
    if not mean_depth >= 1:
        raise ValueError("mean_depth must be >= 1")
    while True:
        d = int(rng.poisson(mean_depth))
        if d >= 1:
            return d


def extract_rules(tree, region_id=0, tree_id=0):
    """One rule per non-root node of ``tree``, in node order.

    Conditions along the path are merged per variable into a single
    interval; a missing value satisfies the merged condition only if it
    was routed down the path at every split on that variable.
    """
    rules = []
    for node in range(1, tree.node_count):
        merged = {}
        path = tree.path(node)
        for parent, child in zip(path[:-1], path[1:]):
            var = tree.feature[parent]
            thr = tree.threshold[parent]
            went_left = tree.left[parent] == child
            lo, hi, miss = merged.get(var, (-math.inf, math.inf, True))
            if went_left:
                hi = min(hi, thr)
            else:
                lo = max(lo, thr)
            miss = miss and (tree.missing_left[parent] == went_left)
            merged[var] = (lo, hi, miss)
        conds = tuple(SplitCondition(v, lo, hi, miss) for v, (lo, hi, miss) in sorted(merged.items()))
        rules.append(Rule(conds, (region_id, tree_id, node)))
    return rules


def _polymorphic(block):
    lo = np.nanmin(np.where(np.isnan(block), np.inf, block), axis=0)
    hi = np.nanmax(np.where(np.isnan(block), -np.inf, block), axis=0)
    return hi > lo


def isle_extract(
    markers,
    region,
    targets,
    params,
    background=None,
    region_id=0,
    prune=None,
    return_trees=False,
    tree_builder=None,
):
    """Generate rules for one region by importance-sampled tree fitting.

    Each tree ``j`` draws its depth from a zero-truncated Poisson, a
    ``propcol`` fraction of the samples and a ``proprow`` fraction of the
    region's markers (principal components are always offered), and is
    fit to ``targets - F`` where ``F`` is the running ensemble updated as
    ``F += nu * c_j * T_j``. Rules from every non-root node are collected,
    skipping duplicates, until ``params.nrules`` are available.

    Parameters
    ----------
    markers : ndarray of shape (n, m)
        Raw genotype codes, ``nan`` for missing.
    region : (start, stop)
        Half-open marker range.
    targets : ndarray of shape (n,)
    params : IsleParams
    background : ndarray of shape (n, c), optional
        PC scores; variable id of PC ``k`` is ``m + k``.
    prune : callable, optional
        ``prune(tree, Z, residual) -> tree`` applied to each fitted tree.
    tree_builder : callable, optional
        Replacement for :func:`lerkit.tree.grow_tree`, same signature.

    Returns
    -------
    list of Rule, or ``(rules, trees)`` when ``return_trees`` is set.
    """
    markers = np.asarray(markers, dtype=float)
    y = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    n, m = markers.shape
    start, stop = region
    if not 0 <= start < stop <= m:
        raise ValueError(f"invalid region [{start}, {stop})")
    build = _tree.grow_tree if tree_builder is None else tree_builder
    block = markers[:, start:stop]
    poly = np.flatnonzero(_polymorphic(block))
    if poly.size == 0:
        warnings.warn(f"region {region_id} has no polymorphic markers; no rules extracted")
        return ([], []) if return_trees else []
    bg = np.zeros((n, 0)) if background is None else np.asarray(background, dtype=float).reshape(n, -1)
    Z = np.column_stack([block[:, poly], bg])
    var_ids = np.concatenate([start + poly, m + np.arange(bg.shape[1])])
    n_markers = poly.size
    k_markers = max(1, int(round(params.proprow * n_markers)))
    n_rows = min(n, max(int(math.ceil(params.propcol * n)), 2 * params.min_node))
    local = {int(v): i for i, v in enumerate(var_ids)}
    if n_rows < 2 * params.min_node:
        warnings.warn(f"region {region_id}: {n} samples are too few for min_node={params.min_node}")
        return ([], []) if return_trees else []
    F = np.zeros(n)
    rules, trees, seen = [], [], set()
    max_trees = max(10 * params.nrules, 100)
    for j in range(max_trees):
        if len(rules) >= params.nrules:
            break
        rng = np.random.default_rng([params.seed, region_id, j])
        depth = sample_depth(params.mean_depth, rng)
        rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        cols = np.sort(rng.choice(n_markers, size=k_markers, replace=False))
        cols = np.concatenate([cols, n_markers + np.arange(bg.shape[1])])
        resid = y[rows] - F[rows]
        t = build(resid, Z[np.ix_(rows, cols)], depth, params.min_node, var_ids[cols])
        if prune is not None:
            t = prune(t, Z[np.ix_(rows, cols)], resid)
        trees.append(t)
        pred = t.predict(Z, local)
        ps = pred[rows]
        denom = float(ps @ ps)
        c = float(ps @ resid) / denom if denom > 0 else 0.0
        F = F + params.nu * c * pred
        for rule in extract_rules(t, region_id, j):
            k = rule.key()
            if k not in seen:
                seen.add(k)
                rules.append(rule)
    rules = rules[: params.nrules]
    return (rules, trees) if return_trees else rules


@dataclass
class RuleMatrix:
    """Standardized rule evaluations with the constants to reproduce them."""

    rules: list
    values: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    @property
    def n_rules(self):
        return len(self.rules)

    def raw(self, Z, columns=None):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty((Z.shape[0], len(self.rules)))
        for k, rule in enumerate(self.rules):
            out[:, k] = rule.evaluate(Z, columns)
        return out

    def transform(self, Z, columns=None):
        """Standardize new rows with the stored training mean and sd."""
        return (self.raw(Z, columns) - self.means) / self.sds

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return RuleMatrix([self.rules[i] for i in idx], self.values[:, idx], self.means[idx], self.sds[idx])


def standardize_rules(rules, Z, columns=None, dedupe=True):
    """Evaluate ``rules`` on training rows, drop constant ones, standardize.

    Columns are centered by their mean and divided by their sample
    standard deviation (``ddof=1``). With ``dedupe`` a rule whose training
    column equals an earlier one, or its complement, is dropped too.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] < 2:
        raise ValueError("need at least two training rows")
    raw = RuleMatrix(list(rules), None, None, None).raw(Z, columns)
    means = raw.mean(axis=0)
    sds = raw.std(axis=0, ddof=1)
    keep = []
    seen = set()
    for j in np.flatnonzero(sds > 1e-12):
        if dedupe:
            col = raw[:, j].astype(bool)
            key = np.packbits(col if not col[0] else ~col).tobytes()
            if key in seen:
                continue
            seen.add(key)
        keep.append(j)
    if not keep:
        raise ValueError("every rule is constant on the training rows")
    keep = np.array(keep)
    return RuleMatrix(
        [rules[i] for i in keep], (raw[:, keep] - means[keep]) / sds[keep], means[keep], sds[keep]
    )


def alpha_grid(R, y, l1_ratio, n_alphas=50, eps=1e-3):
    """Log-spaced penalties from the smallest one that zeroes every coefficient."""
    Rc = R - R.mean(axis=0)
    yc = y - y.mean()
    alpha_max = np.abs(Rc.T @ yc).max() / (R.shape[0] * l1_ratio)
    if alpha_max <= 0:
        alpha_max = 1.0
    # scale after spacing so the grid is exactly proportional to y
    return alpha_max * np.logspace(0.0, np.log10(eps), n_alphas)


def elastic_net(R, y, alpha, l1_ratio):
    """Coefficients minimising ``|y - b - R w|^2 / 2n + alpha (l1 |w|_1 + (1 - l1) |w|^2 / 2)``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = ElasticNet(alpha=alpha, l1_ratio=l1_ratio, max_iter=100000, tol=1e-12).fit(R, y)
    return model.coef_, model.intercept_


def filter_rules_elastic_net(R, y, l1_ratio=0.5, folds=5, seed=0, n_alphas=50, eps=1e-3):
    """Indices of the rule columns kept by a cross-validated elastic net.

    The penalty is picked by ``folds``-fold cross-validation over
    ``n_alphas`` log-spaced values ending at ``eps`` times the smallest
    penalty that removes every rule. ``l1_ratio = 0`` keeps every rule.
    """
    R = np.asarray(R, dtype=float)
    y = np.asarray(y, dtype=float)
    if R.ndim != 2 or R.shape[1] == 0:
        raise ValueError("need at least one rule column")
    if not 0 <= l1_ratio <= 1:
        raise ValueError("l1_ratio must lie in [0, 1]")
    n = R.shape[0]
    if n < folds:
        raise ValueError(f"{n} rows cannot be split into {folds} folds")
    if l1_ratio == 0:
        return np.arange(R.shape[1])
    # the selected support does not depend on the scale of y; removing it
    # keeps the solver's stopping rule from depending on it either
    sd = y.std()
    if sd > 0:
        y = y / sd
    alphas = alpha_grid(R, y, l1_ratio, n_alphas, eps)
    cv = KFold(n_splits=folds, shuffle=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = ElasticNetCV(l1_ratio=l1_ratio, alphas=alphas, cv=cv, max_iter=5000, tol=1e-4).fit(R, y)
    return np.flatnonzero(model.coef_ != 0)


_COND_RE = re.compile(r"^\s*(\S+)\s+(<=|>|in)\s+(.+?)\s*(\(\+NA\))?\s*$")


def _fmt(v):
    return repr(float(v))


def format_condition(cond, names):
    name = names[cond.variable]
    na = " (+NA)" if cond.missing_in else ""
    if cond.values is not None:
        vals = ",".join(_fmt(v) for v in sorted(cond.values))
        return [f"{name} in {{{vals}}}{na}"]
    parts = []
    if not math.isinf(cond.lower):
        parts.append(f"{name} > {_fmt(cond.lower)}{na}")
    if not math.isinf(cond.upper):
        parts.append(f"{name} <= {_fmt(cond.upper)}{na}")
    return parts


def format_rules(rule_matrix, names):
    """Rule-set text: ``region:tree:node | var op value [& ...] | mean | sd``."""
    lines = []
    for rule, mu, sd in zip(rule_matrix.rules, rule_matrix.means, rule_matrix.sds):
        conds = " & ".join(t for c in rule.conditions for t in format_condition(c, names))
        origin = ":".join(str(int(v)) for v in rule.origin)
        lines.append(f"{origin} | {conds} | {_fmt(mu)} | {_fmt(sd)}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_rules(text, names):
    """Inverse of :func:`format_rules`; returns ``(rules, means, sds)``."""
    index = {name: i for i, name in enumerate(names)}
    rules, means, sds = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 4:
            raise ValueError(f"line {lineno}: expected 4 '|'-separated fields")
        origin = tuple(int(v) for v in fields[0].split(":"))
        merged = {}
        for token in fields[1].split("&"):
            mt = _COND_RE.match(token)
            if not mt:
                raise ValueError(f"line {lineno}: cannot parse condition {token!r}")
            name, op, value, na = mt.groups()
            if name not in index:
                raise ValueError(f"line {lineno}: unknown variable {name!r}")
            var = index[name]
            entry = merged.setdefault(var, {"lower": -math.inf, "upper": math.inf, "values": None})
            entry["missing_in"] = na is not None
            if op == "in":
                entry["values"] = frozenset(float(v) for v in value.strip("{} ").split(","))
            elif op == ">":
                entry["lower"] = float(value)
            else:
                entry["upper"] = float(value)
        conds = tuple(SplitCondition(v, **merged[v]) for v in sorted(merged))
        rules.append(Rule(conds, origin))
        means.append(float(fields[2]))
        sds.append(float(fields[3]))
    return rules, np.array(means), np.array(sds)
