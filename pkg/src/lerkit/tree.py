"""Least-squares regression trees with missing-value routing.

Splits are ``x <= threshold`` (left) versus ``x > threshold`` (right).
Genotype codes are treated as ordinal, so a marker offers at most two
thresholds (0.5 and 1.5). Rows whose split variable is missing follow
the child that received more observed training rows, and that choice is
stored on the node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegressionTree:
    """Binary tree stored as parallel arrays indexed by node id.

    Node 0 is the root; ids are assigned in depth-first preorder. Leaves
    have ``feature == -1``. ``feature`` holds global variable ids.
    """

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    missing_left: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    parent: list = field(default_factory=list)
    depth: list = field(default_factory=list)
    value: list = field(default_factory=list)
    n_samples: list = field(default_factory=list)
    maxdepth: int = 0

    @property
    def node_count(self):
        return len(self.feature)

    def _add(self, parent, depth, value, n):
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.missing_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.parent.append(parent)
        self.depth.append(depth)
        self.value.append(float(value))
        self.n_samples.append(int(n))
        return len(self.feature) - 1

    def is_leaf(self, node):
        return self.feature[node] < 0

    def leaves(self, Z, columns=None):
        """Leaf id reached by each row of ``Z``.

        ``columns`` maps a global variable id to a column of ``Z``
        (identity when omitted).
        """
        Z = np.asarray(Z, dtype=float)
        out = np.zeros(Z.shape[0], dtype=int)
        stack = [(0, np.arange(Z.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if self.is_leaf(node) or rows.size == 0:
                out[rows] = node
                continue
            col = self.feature[node] if columns is None else columns[self.feature[node]]
            x = Z[rows, col]
            miss = np.isnan(x)
            go_left = np.where(miss, self.missing_left[node], x <= self.threshold[node])
            stack.append((self.right[node], rows[~go_left]))
            stack.append((self.left[node], rows[go_left]))
        return out

    def predict(self, Z, columns=None):
        return np.asarray(self.value)[self.leaves(Z, columns)]

    def path(self, node):
        """Node ids from the root down to ``node``."""
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(self.parent[out[-1]])
        return out[::-1]


def _best_split(Z, y, min_node):
    """Best (column, threshold, missing_left, gain) or ``None``."""
    n, p = Z.shape
    yc = y - y.mean()
    sse = float(yc @ yc)
    if sse <= 1e-24 * max(float(y @ y), np.finfo(float).tiny) or n < 2 * min_node:
        return None
    order = np.argsort(Z, axis=0, kind="stable")
    Zs = np.take_along_axis(Z, order, axis=0)
    ys = yc[order]
    observed = ~np.isnan(Zs)
    nobs = observed.sum(axis=0)
    cs = np.cumsum(np.where(observed, ys, 0.0), axis=0)
    miss_sum = -cs[-1]  # yc sums to zero
    miss_cnt = n - nobs
    i = np.arange(1, n)[:, None]
    left_obs_sum = cs[:-1]
    valid = (i < nobs) & (Zs[:-1] < Zs[1:])
    miss_left = i >= (nobs - i)
    nl = i + np.where(miss_left, miss_cnt, 0)
    nr = n - nl
    sl = left_obs_sum + np.where(miss_left, miss_sum, 0.0)
    valid &= (nl >= min_node) & (nr >= min_node)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        # right-child sum is -sl because yc is centered
        gain = sl**2 * (1.0 / nl + 1.0 / nr)
    gain = np.where(valid, gain, -np.inf).T
    k = int(np.argmax(gain))
    col, pos = divmod(k, n - 1)
    best = gain[col, pos]
    if not best > 1e-12 * sse:
        return None
    thr = 0.5 * (Zs[pos, col] + Zs[pos + 1, col])
    return col, float(thr), bool(miss_left[pos, col]), float(best)


def grow_tree(targets, inputs, maxdepth, min_node=5, variables=None):
    """Fit a CART regression tree by greedy squared-error splitting.

    Parameters
    ----------
    targets : ndarray of shape (n,)
    inputs : ndarray of shape (n, p)
        Candidate split variables, ``nan`` for missing.
    maxdepth : int
        Longest root-to-leaf path.
    min_node : int
        Minimum rows in each child of a split.
    variables : sequence of int, optional
        Global id of each input column, recorded on the nodes.

    Returns
    -------
    RegressionTree
    """
    y = np.asarray(targets, dtype=float)
    Z = np.asarray(inputs, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
        raise ValueError("inputs must be a (n, p) matrix matching targets")
    if y.shape[0] < 2 * min_node:
        raise ValueError(f"need at least {2 * min_node} rows to grow a tree, got {y.shape[0]}")
    variables = np.arange(Z.shape[1]) if variables is None else np.asarray(variables)
    tree = RegressionTree(maxdepth=int(maxdepth))

    def build(rows, parent, depth):
        node = tree._add(parent, depth, y[rows].mean(), rows.size)
        if depth >= maxdepth:
            return node
        split = _best_split(Z[rows], y[rows], min_node)
        if split is None:
            return node
        col, thr, miss_left, _ = split
        x = Z[rows, col]
        go_left = np.where(np.isnan(x), miss_left, x <= thr)
        tree.feature[node] = int(variables[col])
        tree.threshold[node] = thr
        tree.missing_left[node] = miss_left
        tree.left[node] = build(rows[go_left], node, depth + 1)
        tree.right[node] = build(rows[~go_left], node, depth + 1)
        return node

    build(np.arange(y.shape[0]), -1, 0)
    return tree
