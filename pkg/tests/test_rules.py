import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lerkit.rules import (
    IsleParams,
    Rule,
    RuleMatrix,
    SplitCondition,
    elastic_net,
    evaluate_rule,
    extract_rules,
    filter_rules_elastic_net,
    format_rules,
    isle_extract,
    parse_rules,
    sample_depth,
    standardize_rules,
)
from lerkit.simulation import interaction_fixture
from lerkit.tree import grow_tree
from oracles import enet_proximal, visited_nodes

SIGN_RULE = Rule((SplitCondition(0, upper=1.5), SplitCondition(1, lower=1.5)))


def _genotypes(rng, n, p, missing=0.1):
    Z = rng.integers(0, 3, size=(n, p)).astype(float)
    Z[rng.random((n, p)) < missing] = np.nan
    return Z


def test_conditions_validate():
    with pytest.raises(ValueError):
        SplitCondition(0)
    with pytest.raises(ValueError):
        SplitCondition(0, 1.0, 0.5)
    with pytest.raises(ValueError):
        SplitCondition(0, values=frozenset())
    c = SplitCondition(0, values=frozenset({0.0, 2.0}), missing_in=True)
    assert c.kind == "subset"
    assert c.holds([0, 1, 2, np.nan]).tolist() == [True, False, True, True]


def test_sign_rule_cells():
    assert evaluate_rule(SIGN_RULE, [1, 2]) == 1
    assert evaluate_rule(SIGN_RULE, [2, 2]) == 0
    assert evaluate_rule(SIGN_RULE, [0, 2]) == 1


def test_missing_direction():
    inside = Rule((SplitCondition(0, upper=0.5, missing_in=True),))
    outside = Rule((SplitCondition(0, upper=0.5, missing_in=False),))
    assert evaluate_rule(inside, [np.nan]) == 1
    assert evaluate_rule(outside, [np.nan]) == 0


@pytest.mark.parametrize("mean_depth", [1.0, 4.0])
def test_sample_depth_truncated_mean(mean_depth):
    rng = np.random.default_rng(1)
    draws = np.array([sample_depth(mean_depth, rng) for _ in range(100_000)])
    assert draws.min() >= 1
    expected = mean_depth / (1 - math.exp(-mean_depth))
    assert abs(draws.mean() / expected - 1) < 0.02


def test_sample_depth_range():
    with pytest.raises(ValueError):
        sample_depth(0.5, np.random.default_rng(0))


def test_isle_params_ranges():
    for bad in ({"proprow": 0}, {"propcol": 1.5}, {"nu": -0.1}, {"nrules": 0}, {"mean_depth": 0.5}):
        with pytest.raises(ValueError):
            IsleParams(**bad)


def test_single_split_threshold():
    t = grow_tree([0, 0, 1, 1], np.array([[0], [0], [2], [2]], dtype=float), 1, min_node=1)
    assert t.feature[0] == 0 and 0 < t.threshold[0] < 2
    assert t.threshold[0] == 1.0


def test_exhaustive_split_search(rng):
    Z = _genotypes(rng, 40, 4, missing=0.0)
    y = rng.normal(size=40)
    t = grow_tree(y, Z, 1, min_node=3)
    best = (-np.inf, None)
    for j in range(4):
        for thr in (0.5, 1.5):
            left = Z[:, j] <= thr
            if min(left.sum(), (~left).sum()) < 3:
                continue
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            if -sse > best[0]:
                best = (-sse, (j, thr))
    assert (t.feature[0], t.threshold[0]) == best[1]


def test_constant_target_is_root_only():
    t = grow_tree(np.ones(20), np.tile([[0.0], [2.0]], (10, 1)), 3)
    assert t.node_count == 1
    assert extract_rules(t) == []


def test_grow_tree_needs_rows():
    with pytest.raises(ValueError):
        grow_tree(np.ones(6), np.zeros((6, 1)), 2, min_node=5)


def test_missing_routed_to_larger_child():
    Z = np.array([0, 0, 0, 0, 0, 0, 2, 2, np.nan, np.nan], dtype=float)[:, None]
    y = np.array([0, 0, 0, 0, 0, 0, 5, 5, 1, 1], dtype=float)
    t = grow_tree(y, Z, 1, min_node=1)
    assert t.missing_left[0]  # six observed rows went left, two right


def test_interaction_tree_separates():
    G, y, cls = interaction_fixture(noise=0.0)
    t = grow_tree(y, G, 2, min_node=5)
    leaves = t.leaves(G)
    for leaf in np.unique(leaves):
        assert len(set(cls[leaves == leaf])) == 1


def test_rule_equals_tree_traversal(rng):
    Z = _genotypes(rng, 300, 6)
    y = Z[:, 0] * np.nan_to_num(Z[:, 1], nan=1.0) + rng.normal(size=300)
    t = grow_tree(y, Z, 4, min_node=5, variables=np.arange(10, 16))
    columns = {10 + j: j for j in range(6)}
    rules = extract_rules(t, 0, 0)
    assert len(rules) == t.node_count - 1
    new = _genotypes(rng, 1000, 6, missing=0.2)
    visited = [visited_nodes(t, row, columns) for row in new]
    for rule in rules:
        node = rule.origin[2]
        expected = np.array([node in v for v in visited], dtype=np.int8)
        assert np.array_equal(rule.evaluate(new, columns), expected)
        assert rule.depth <= t.maxdepth
        assert len(set(rule.variables)) == rule.depth


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_rules_bounded_by_depth(depth, seed):
    rng = np.random.default_rng(seed)
    Z = _genotypes(rng, 120, 5)
    t = grow_tree(rng.normal(size=120), Z, depth, min_node=3)
    for rule in extract_rules(t):
        assert 1 <= rule.depth <= depth
        assert len(rule.variables) <= depth


def _isle_inputs(rng, n=300, m=40):
    X = _genotypes(rng, n, m, missing=0.02)
    pcs = rng.normal(size=(n, 2))
    y = np.nan_to_num(X[:, 3]) * np.nan_to_num(X[:, 7]) + pcs[:, 0] + rng.normal(size=n)
    return X, pcs, y


def test_isle_extract_contract(rng):
    X, pcs, y = _isle_inputs(rng)
    params = IsleParams(nrules=60, mean_depth=3, proprow=0.5, propcol=0.5, seed=4)
    rules, trees = isle_extract(X, (0, 20), y, params, background=pcs, region_id=2, return_trees=True)
    assert 0 < len(rules) <= 60
    keys = [r.key() for r in rules]
    assert len(set(keys)) == len(keys)
    for r in rules:
        assert r.origin[0] == 2
        assert all(v < 20 or v >= 40 for v in r.variables)
        assert r.depth <= trees[r.origin[1]].maxdepth
    again = isle_extract(X, (0, 20), y, params, background=pcs, region_id=2)
    assert again == rules


def test_isle_uses_ensemble_memory(rng):
    X, pcs, y = _isle_inputs(rng)
    bag = isle_extract(X, (0, 20), y, IsleParams(nrules=80, nu=0.0, seed=1, propcol=0.5))
    boost = isle_extract(X, (0, 20), y, IsleParams(nrules=80, nu=1.0, seed=1, propcol=0.5))
    assert bag != boost


def test_isle_monomorphic_region(rng):
    X = np.ones((50, 10))
    with pytest.warns(UserWarning, match="polymorphic"):
        assert isle_extract(X, (0, 10), rng.normal(size=50), IsleParams(nrules=5)) == []


def test_isle_prune_hook(rng):
    X, pcs, y = _isle_inputs(rng)
    calls = []

    def prune(tree, Z, resid):
        calls.append(tree.node_count)
        return tree

    isle_extract(X, (0, 20), y, IsleParams(nrules=10, propcol=0.5), prune=prune)
    assert calls


def test_standardize_rules(rng):
    Z = np.array([[0], [0], [2], [2]], dtype=float)
    half = Rule((SplitCondition(0, upper=1.0),))
    always = Rule((SplitCondition(0, upper=5.0),))
    rm = standardize_rules([half, always], Z)
    assert rm.rules == [half]
    assert abs(rm.values.mean()) < 1e-15 and rm.values.std(ddof=1) == pytest.approx(1.0)
    new = np.array([[0.0], [0.0], [0.0]])
    assert np.allclose(rm.transform(new)[:, 0], (1 - rm.means[0]) / rm.sds[0])
    with pytest.raises(ValueError, match="constant"):
        standardize_rules([always], Z)


def test_standardize_drops_complements():
    Z = np.array([[0], [0], [2], [2], [1]], dtype=float)
    a = Rule((SplitCondition(0, upper=0.5),))
    b = Rule((SplitCondition(0, lower=0.5),))
    assert standardize_rules([a, b], Z).rules == [a]
    assert len(standardize_rules([a, b], Z, dedupe=False).rules) == 2


def test_enet_matches_proximal_gradient(rng):
    R = rng.normal(size=(6, 3))
    y = R @ [1.0, 0.0, -0.5] + 0.1 * rng.normal(size=6)
    for alpha, l1 in ((0.05, 0.5), (0.2, 0.9), (0.01, 0.1)):
        w, b = elastic_net(R, y, alpha, l1)
        w_ref, b_ref = enet_proximal(R, y, alpha, l1)
        assert np.max(np.abs(w - w_ref)) < 1e-6
        assert abs(b - b_ref) < 1e-6


def test_enet_ridge_keeps_everything(rng):
    R = rng.normal(size=(50, 20))
    assert filter_rules_elastic_net(R, rng.normal(size=50), l1_ratio=0.0).tolist() == list(range(20))


def test_enet_noise_retention():
    # rules grown on one target, filtered against an independent one
    kept = total = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 3, size=(200, 20)).astype(float)
        rules = isle_extract(X, (0, 20), rng.normal(size=200), IsleParams(nrules=30, propcol=0.5, seed=seed))
        rm = standardize_rules(rules, X)
        keep = filter_rules_elastic_net(rm.values, rng.normal(size=200), l1_ratio=1.0, seed=seed)
        kept += keep.size
        total += rm.n_rules
    assert kept / total <= 0.05


def test_enet_finds_signal(rng):
    R = rng.normal(size=(200, 30))
    y = 2 * R[:, 4] + rng.normal(size=200)
    assert 4 in filter_rules_elastic_net(R, y, l1_ratio=1.0)


def test_enet_fold_check(rng):
    with pytest.raises(ValueError, match="folds"):
        filter_rules_elastic_net(rng.normal(size=(3, 2)), rng.normal(size=3), folds=5)


def test_rule_text_round_trip(rng):
    X, pcs, y = _isle_inputs(rng)
    Z = np.column_stack([X, pcs])
    rules = isle_extract(X, (0, 40), y, IsleParams(nrules=40, propcol=0.5), background=pcs)
    rm = standardize_rules(rules, Z)
    names = [f"m{j}" for j in range(40)] + ["PC1", "PC2"]
    text = format_rules(rm, names)
    first = text.splitlines()[0]
    assert first.count("|") == 3 and first.split(":")[0] == "0"
    parsed, means, sds = parse_rules(text, names)
    assert [r.key() for r in parsed] == [r.key() for r in rm.rules]
    assert np.array_equal(means, rm.means) and np.array_equal(sds, rm.sds)
    assert format_rules(RuleMatrix(parsed, None, means, sds), names) == text
