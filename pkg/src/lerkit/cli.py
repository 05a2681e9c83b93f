"""``lerkit`` command line.

Every run writes one JSON manifest (``<primary output>.manifest.json``
unless ``--manifest`` is given) holding the resolved configuration, the
sha256 of every input and output, and per-stage timings. ``lerkit replay
MANIFEST`` checks the inputs and reruns the recorded command.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .config import ConfigError, RunManifest, check_inputs, file_digest, read_config_text, read_manifest, resolve, write_manifest
from .genotype import (
    compute_pcs,
    load_hotspots,
    load_markers,
    load_phenotypes,
    partition_equal,
    partition_hotspots,
    write_map,
    write_markers,
    write_phenotypes,
)
from .mixed_model import gwas_emma
from .model_io import load_model, save_model, write_importance, write_interactions
from .pipeline import cross_validate, fit_ler, importance, predict_ler
from .rules import format_rules
from .simulation import CAUSAL, power_experiment, simulate_population

# argument names that are files read / written, per subcommand
INPUTS = {
    "partition": ("markers", "map"),
    "fit": ("markers", "map", "phenotypes"),
    "predict": ("model", "markers", "map", "phenotypes"),
    "importance": ("model",),
    "gwas": ("markers", "map", "phenotypes"),
    "cv": ("markers", "map", "phenotypes"),
    "simulate": (),
    "power": (),
}
OUTPUTS = {
    "partition": ("out",),
    "fit": ("out", "rules"),
    "predict": ("out",),
    "importance": ("out", "interactions"),
    "gwas": ("out",),
    "cv": ("out",),
    "simulate": ("out",),
    "power": ("out",),
}
# subcommands whose defaults come from the simulation preset
SIM_COMMANDS = {"power"}


class Timer:
    def __init__(self):
        self.stages = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.stages[name] = time.perf_counter() - t0


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _markers(args):
    return load_markers(args.markers, args.map)


def _phenos(args, cfg, M):
    return load_phenotypes(args.phenotypes, cfg.covariates, M.sample_ids)


def _hp(cfg):
    hp = cfg.hp
    if cfg.hotspots:
        hp.hotspots = load_hotspots(cfg.hotspots)
    return hp


def cmd_partition(args, cfg, timer):
    M = _markers(args)
    with timer.stage("partition"):
        if cfg.hotspots:
            part = partition_hotspots(M, load_hotspots(cfg.hotspots))
        else:
            part = partition_equal(M, cfg.hp.nsplits)
    rows = [
        [i, M.chromosomes[a], M.marker_ids[a], M.marker_ids[b - 1], b - a]
        for i, (a, b) in enumerate(part.regions)
    ]
    _write_rows(args.out, ["region", "chromosome", "start_marker", "end_marker", "n_markers"], rows)


def cmd_fit(args, cfg, timer):
    with timer.stage("load"):
        M = _markers(args)
        ph = _phenos(args, cfg, M)
    with timer.stage("fit"):
        model = fit_ler(M, ph, _hp(cfg), threads=cfg.threads)
    save_model(model, args.out)
    if args.rules:
        Path(args.rules).write_text(format_rules(model.rule_matrix, model.variable_names))


def cmd_predict(args, cfg, timer):
    model = load_model(args.model)
    M = _markers(args)
    cov = None
    if args.phenotypes:
        names = [c for c in model.covariate_names if c != "intercept"]
        ph = load_phenotypes(args.phenotypes, names, M.sample_ids)
        cov = ph.covariates[:, 1:]
    with timer.stage("predict"):
        pred = predict_ler(model, M, cov, genetic_only=args.genetic_only)
    _write_rows(args.out, ["sample_id", "prediction"], [[s, repr(float(v))] for s, v in zip(M.sample_ids, pred)])


def cmd_importance(args, cfg, timer):
    model = load_model(args.model)
    with timer.stage("importance"), warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        report = importance(model, args.order)
    write_importance(report, args.out)
    if args.interactions:
        write_interactions(report, args.interactions)


def cmd_gwas(args, cfg, timer):
    M = _markers(args)
    ph = _phenos(args, cfg, M)
    extra = None
    if args.pcs:
        extra = compute_pcs(M, args.pcs).scores
    with timer.stage("gwas"):
        res = gwas_emma(ph.y, ph.covariates, M, exact=args.exact, covariates=extra)
    res.to_csv(args.out)


def cmd_cv(args, cfg, timer):
    M = _markers(args)
    ph = _phenos(args, cfg, M)
    with timer.stage("cv"):
        res = cross_validate(M, ph, _hp(cfg), folds=cfg.hp.cv_folds, seed=cfg.seed, threads=cfg.threads)
    rows = [[k, repr(float(a)), repr(float(b)), str(bool(f)).lower()] for k, (a, b, f) in enumerate(zip(res.ler, res.gblup, res.flagged))]
    rows.append(["mean", repr(res.ler_mean), repr(res.gblup_mean), ""])
    _write_rows(args.out, ["fold", "ler", "gblup", "flagged"], rows)


def cmd_simulate(args, cfg, timer):
    with timer.stage("simulate"):
        pop = simulate_population(cfg.sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_markers(pop.genotypes, out / "markers.csv")
    write_map(pop.genotypes, out / "map.csv")
    write_phenotypes(out / "phenotypes.csv", pop.genotypes.sample_ids, pop.phenotypes, pop.sex[:, None], ["sex"])
    _write_rows(
        out / "causal.csv",
        ["marker_id", "effect"],
        [[f"x{k}", f"g{i // 3 + 1}"] for i, k in enumerate(CAUSAL)],
    )
    _write_rows(
        out / "genetic_values.csv",
        ["sample_id", "genetic_value"],
        [[s, repr(float(g))] for s, g in zip(pop.genotypes.sample_ids, pop.genetic_values)],
    )


def cmd_power(args, cfg, timer):
    with timer.stage("power"):
        table = power_experiment(cfg.reps, cfg.sim, cfg.hp, top=cfg.top, seed=cfg.seed, threads=cfg.threads)
    table.to_csv(args.out)


HANDLERS = {
    "partition": cmd_partition,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "importance": cmd_importance,
    "gwas": cmd_gwas,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "power": cmd_power,
}


def build_parser():
    p = argparse.ArgumentParser(prog="lerkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lerkit {__version__}")
    p.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    sub = p.add_subparsers(dest="command", required=True)

    def geno(sp, pheno=True):
        sp.add_argument("--markers", required=True, help="marker CSV")
        sp.add_argument("--map", help="map CSV (marker_id, chromosome, position)")
        if pheno:
            sp.add_argument("--phenotypes", required=True, help="phenotype CSV")

    sp = sub.add_parser("partition", help="split markers into regions")
    geno(sp, pheno=False)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("fit", help="fit a LER model")
    geno(sp)
    sp.add_argument("--out", required=True, help="model file")
    sp.add_argument("--rules", help="also write the retained rules as text")

    sp = sub.add_parser("predict", help="predict from a model file")
    sp.add_argument("--model", required=True)
    geno(sp, pheno=False)
    sp.add_argument("--phenotypes", help="phenotype CSV supplying covariates")
    sp.add_argument("--genetic-only", action="store_true", help="omit fixed effects")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("importance", help="importance and interaction scores")
    sp.add_argument("--model", required=True)
    sp.add_argument("--order", type=int, default=2)
    sp.add_argument("--interactions", help="pairwise interaction CSV")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("gwas", help="mixed-model single-marker scan")
    geno(sp)
    sp.add_argument("--exact", action="store_true", help="re-estimate variance components per marker")
    sp.add_argument("--pcs", type=int, default=0, help="principal components added as fixed effects")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("cv", help="cross-validated accuracy of LER and G-BLUP")
    geno(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("simulate", help="draw a benchmark population")
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("power", help="GWAS vs LER recovery of causal markers")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("replay", help="rerun a manifest")
    sp.add_argument("manifest_file")
    sp.add_argument("--outdir", help="write outputs here instead of the recorded paths")
    return p


def _overrides(args):
    values = {}
    for item in args.set:
        values.update(read_config_text(item, "--set"))
    if args.seed is not None:
        values["seed"] = args.seed
    if args.threads is not None:
        values["threads"] = args.threads
    return values


def _files(names, arguments):
    out = {}
    for name in names:
        path = arguments.get(name)
        if path and Path(path).is_file():
            out[name] = {"path": str(path), "sha256": file_digest(path)}
        elif path and Path(path).is_dir():
            for f in sorted(Path(path).iterdir()):
                out[f"{name}/{f.name}"] = {"path": str(f), "sha256": file_digest(f)}
    return out


def execute(command, arguments, cfg, manifest_path=None, config_path=None):
    """Run one subcommand and write its manifest; returns the manifest."""
    timer = Timer()
    inputs = _files(INPUTS[command], arguments)
    if config_path:
        inputs["config"] = {"path": str(config_path), "sha256": file_digest(config_path)}
    if cfg.hotspots:
        inputs["hotspots"] = {"path": str(cfg.hotspots), "sha256": file_digest(cfg.hotspots)}
    with timer.stage("total"):
        HANDLERS[command](argparse.Namespace(**arguments), cfg, timer)
    manifest = RunManifest(
        command=command,
        arguments=dict(sorted(arguments.items())),
        config=cfg.resolved(),
        seed=cfg.seed,
        inputs=inputs,
        outputs=_files(OUTPUTS[command], arguments),
        timings=timer.stages,
    )
    write_manifest(manifest, manifest_path or f"{arguments['out']}.manifest.json")
    return manifest


def replay(path, outdir=None, manifest_path=None):
    """Rerun a manifest; returns ``(new_manifest, mismatched_output_names)``."""
    old = read_manifest(path)
    check_inputs(old)
    arguments = dict(old.arguments)
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        for name in OUTPUTS[old.command]:
            if arguments.get(name):
                arguments[name] = str(Path(outdir) / Path(arguments[name]).name)
    cfg = resolve(old.config)
    new = execute(old.command, arguments, cfg, manifest_path)
    old_digests = {Path(k).name if "/" in k else k: v["sha256"] for k, v in old.outputs.items()}
    new_digests = {Path(k).name if "/" in k else k: v["sha256"] for k, v in new.outputs.items()}
    mismatched = sorted(k for k in old_digests.keys() | new_digests.keys() if old_digests.get(k) != new_digests.get(k))
    return new, mismatched


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            manifest_path = args.manifest
            if manifest_path is None and args.outdir is not None:
                manifest_path = str(Path(args.outdir) / Path(args.manifest_file).name)
            _, mismatched = replay(args.manifest_file, args.outdir, manifest_path)
            if mismatched:
                print(f"replay outputs differ: {', '.join(mismatched)}", file=sys.stderr)
                return 1
            print("replay reproduced all outputs")
            return 0
        values = {}
        if args.config:
            values = read_config_text(Path(args.config).read_text(), args.config)
        if args.command in SIM_COMMANDS:
            values.setdefault("preset", "simulation")
        values.update(_overrides(args))
        cfg = resolve(values)
        skip = {"seed", "threads", "config", "set", "manifest", "command"}
        arguments = {k: v for k, v in vars(args).items() if k not in skip}
        execute(args.command, arguments, cfg, args.manifest, args.config)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"lerkit: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
