"""Persistence of fitted models and their importance tables.

Model files are JSON with sorted keys. Floats go through ``repr`` so a
save/load/save cycle is byte-identical; infinite interval bounds are
stored as ``null``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .genotype import RegionPartition
from .mixed_model import VarianceComponents
from .pipeline import LerModel
from .rules import Rule, SplitCondition

FORMAT = "lerkit-ler-model"
FORMAT_VERSION = 1


def _bound(v):
    return None if math.isinf(v) else float(v)


def _cond_to_dict(c):
    return {
        "variable": int(c.variable),
        "lower": _bound(c.lower),
        "upper": _bound(c.upper),
        "missing_in": bool(c.missing_in),
        "values": None if c.values is None else sorted(float(v) for v in c.values),
    }


def _cond_from_dict(d):
    return SplitCondition(
        d["variable"],
        -math.inf if d["lower"] is None else d["lower"],
        math.inf if d["upper"] is None else d["upper"],
        d["missing_in"],
        None if d["values"] is None else frozenset(d["values"]),
    )


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def model_to_dict(model):
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "marker_ids": list(model.marker_ids),
        "covariate_names": list(model.covariate_names),
        "partition": {"regions": [[int(a), int(b)] for a, b in model.partition.regions],
                      "provenance": model.partition.provenance},
        "rules": [
            {"origin": [int(v) for v in r.origin], "conditions": [_cond_to_dict(c) for c in r.conditions]}
            for r in model.rules
        ],
        "means": _floats(model.means),
        "sds": _floats(model.sds),
        "rule_region": [int(v) for v in model.rule_region],
        "alpha": _floats(model.alpha),
        "beta": _floats(model.beta),
        "sigma2_g": float(model.vc.sigma2_g),
        "sigma2_e": float(model.vc.sigma2_e),
        "log_delta": float(model.log_delta),
        "pc_loadings": [_floats(row) for row in model.pc_loadings],
        "n_pcs": int(model.n_pcs),
        "pc_frequencies": _floats(model.pc_frequencies),
    }


def model_from_dict(d):
    if d.get("format") != FORMAT:
        raise ValueError("not a LER model file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')}")
    m = len(d["marker_ids"])
    loadings = np.array(d["pc_loadings"], dtype=float).reshape(m, d["n_pcs"])
    rules = [Rule(tuple(_cond_from_dict(c) for c in r["conditions"]), tuple(r["origin"])) for r in d["rules"]]
    return LerModel(
        partition=RegionPartition([tuple(r) for r in d["partition"]["regions"]], d["partition"]["provenance"]),
        rules=rules,
        means=np.array(d["means"]),
        sds=np.array(d["sds"]),
        rule_region=np.array(d["rule_region"], dtype=int),
        alpha=np.array(d["alpha"]),
        beta=np.array(d["beta"]),
        vc=VarianceComponents(d["sigma2_g"], d["sigma2_e"]),
        pc_loadings=loadings,
        pc_frequencies=np.array(d["pc_frequencies"]),
        marker_ids=list(d["marker_ids"]),
        covariate_names=list(d["covariate_names"]),
        log_delta=d["log_delta"],
    )


def dumps_model(model):
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def save_model(model, path):
    Path(path).write_text(dumps_model(model))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def write_importance(report, path):
    """``variable_id, type, score, region``; PCs have an empty region."""
    m = len(report.marker_scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable_id", "type", "score", "region"])
        for j, name in enumerate(report.variable_names):
            if j < m:
                w.writerow([name, "marker", repr(float(report.marker_scores[j])), int(report.marker_region[j])])
            else:
                w.writerow([name, "pc", repr(float(report.pc_scores[j - m])), ""])


def write_interactions(report, path):
    """Sparse pairwise scores (``score > 0``), sorted by variable pair."""
    names = report.variable_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["var_a", "var_b", "score"])
        for (a, b), s in sorted(report.pairwise.items()):
            if s > 0:
                w.writerow([names[a], names[b], repr(float(s))])
