import json
from pathlib import Path

import numpy as np
import pytest

from lerkit import cli
from lerkit.config import PRESETS, ConfigError, RunManifest, check_inputs, parse_config, read_manifest, write_manifest
from lerkit.model_io import dumps_model, load_model, model_from_dict, model_to_dict
from lerkit.simulation import simulation_hyperparams


def _cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_mean_depth_parsed(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "mean_depth=4\n"))
    assert cfg.hp.isle.mean_depth == 4.0 and isinstance(cfg.hp.isle.mean_depth, float)


def test_empty_file_gives_rice_defaults(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "# nothing here\n\n"))
    isle = cfg.hp.isle
    assert (isle.mean_depth, isle.nrules, isle.proprow, isle.propcol, cfg.hp.nsplits) == (4.0, 500, 0.3, 0.1, 5)


def test_range_error(tmp_path):
    with pytest.raises(ConfigError, match="proprow"):
        parse_config(_cfg(tmp_path, "proprow=1.5\n"))


def test_unknown_key_lists_valid(tmp_path):
    with pytest.raises(ConfigError, match="valid keys:.*mean_depth"):
        parse_config(_cfg(tmp_path, "depth = 3\n"))


def test_type_mismatch_names_key(tmp_path):
    with pytest.raises(ConfigError, match="nrules: expected int"):
        parse_config(_cfg(tmp_path, "nrules = many\n"))
    with pytest.raises(ConfigError, match="additive_only: expected bool"):
        parse_config(_cfg(tmp_path, "additive_only = yes\n"))


def test_grammar(tmp_path):
    text = "seed = 7   # trailing comment\nadditive_only = TRUE\ncovariates = sex, batch\npreset = wheat\nnrules = 50\n"
    cfg = parse_config(_cfg(tmp_path, text))
    assert cfg.seed == 7 and cfg.sim.additive_only
    assert cfg.covariates == ["sex", "batch"]
    assert cfg.hp.isle.mean_depth == 1.0 and cfg.hp.nsplits == 2 and cfg.hp.isle.nrules == 50


def test_simulation_preset_matches_code():
    cfg = parse_config(overrides={"preset": "simulation"})
    hp = simulation_hyperparams()
    assert cfg.hp.isle == hp.isle.__class__(**{**hp.isle.__dict__, "seed": cfg.seed})
    assert (cfg.hp.nsplits, cfg.hp.target, cfg.hp.l1_ratio) == (hp.nsplits, hp.target, hp.l1_ratio)
    assert set(PRESETS) >= {"rice", "wheat", "maize", "mouse", "simulation"}


def test_manifest_round_trip(tmp_path):
    m = RunManifest("fit", {"out": "m.json"}, {"seed": 1, "nu": 0.1}, 1, timings={"fit": 0.123456789012345})
    write_manifest(m, tmp_path / "a.json")
    text = (tmp_path / "a.json").read_text()
    again = read_manifest(tmp_path / "a.json")
    assert again == m and again.to_json() == text


def test_manifest_digest_mismatch(tmp_path):
    f = tmp_path / "in.csv"
    f.write_text("x\n")
    m = RunManifest("fit", {}, {}, 0, inputs={"markers": {"path": str(f), "sha256": "0" * 64}})
    with pytest.raises(ConfigError, match="digest mismatch"):
        check_inputs(m)
    f.unlink()
    with pytest.raises(ConfigError, match="missing"):
        check_inputs(m)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert cli.main(["--seed", "3", "--set", "n_individuals=240", "simulate", "--out", str(d / "sim")]) == 0
    return d


def _fit_args(d, out="model.json", threads=1):
    s = d / "sim"
    return [
        "--seed", "2", "--threads", str(threads),
        "--set", "nrules=40", "--set", "propcol=0.5", "--set", "mean_depth=2",
        "fit", "--markers", str(s / "markers.csv"), "--map", str(s / "map.csv"),
        "--phenotypes", str(s / "phenotypes.csv"), "--out", str(d / out), "--rules", str(d / (out + ".rules")),
    ]


def test_simulate_outputs(sim_dir):
    s = sim_dir / "sim"
    for name in ("markers.csv", "map.csv", "phenotypes.csv", "causal.csv"):
        assert (s / name).exists()
    assert (s / "causal.csv").read_text().splitlines()[1] == "x8,g1"
    manifest = read_manifest(str(s) + ".manifest.json")
    assert manifest.command == "simulate" and "out/markers.csv" in manifest.outputs


def test_fit_importance_predict_replay(sim_dir, tmp_path):
    d = sim_dir
    assert cli.main(_fit_args(d)) == 0
    model = load_model(d / "model.json")
    assert dumps_model(model) == (d / "model.json").read_text()
    assert model_from_dict(json.loads(json.dumps(model_to_dict(model)))).marker_ids == model.marker_ids

    assert cli.main(["importance", "--model", str(d / "model.json"), "--out", str(d / "imp.csv"),
                     "--interactions", str(d / "int.csv")]) == 0
    imp = (d / "imp.csv").read_text().splitlines()
    assert imp[0] == "variable_id,type,score,region" and imp[-1].startswith("PC3,pc,")
    inter = (d / "int.csv").read_text().splitlines()
    assert inter[0] == "var_a,var_b,score"
    assert all(float(line.split(",")[2]) > 0 for line in inter[1:])

    s = d / "sim"
    assert cli.main(["predict", "--model", str(d / "model.json"), "--markers", str(s / "markers.csv"),
                     "--map", str(s / "map.csv"), "--phenotypes", str(s / "phenotypes.csv"),
                     "--out", str(d / "pred.csv")]) == 0
    assert len((d / "pred.csv").read_text().splitlines()) == 241

    out = tmp_path / "replayed"
    assert cli.main(["replay", str(d / "model.json.manifest.json"), "--outdir", str(out)]) == 0
    assert (out / "model.json").read_bytes() == (d / "model.json").read_bytes()
    assert (out / "model.json.manifest.json").exists()


def test_thread_count_does_not_change_model(sim_dir):
    d = sim_dir
    assert cli.main(_fit_args(d, "m1.json", threads=1)) == 0
    assert cli.main(_fit_args(d, "m4.json", threads=4)) == 0
    assert (d / "m1.json").read_bytes() == (d / "m4.json").read_bytes()


def test_replay_detects_changed_input(sim_dir, tmp_path):
    d = sim_dir
    s = d / "sim"
    copy = tmp_path / "markers.csv"
    copy.write_bytes((s / "markers.csv").read_bytes())
    args = ["partition", "--markers", str(copy), "--out", str(tmp_path / "regions.csv")]
    assert cli.main(args) == 0
    assert (tmp_path / "regions.csv").read_text().splitlines()[1] == "0,1,x1,x200,200"
    copy.write_text(copy.read_text().replace(",0,", ",1,", 1))
    with pytest.raises(ConfigError, match="digest mismatch"):
        cli.replay(str(tmp_path / "regions.csv.manifest.json"))
    assert cli.main(["replay", str(tmp_path / "regions.csv.manifest.json")]) == 2


def test_gwas_and_cv_commands(sim_dir, tmp_path):
    s = sim_dir / "sim"
    common = ["--markers", str(s / "markers.csv"), "--map", str(s / "map.csv"), "--phenotypes", str(s / "phenotypes.csv")]
    assert cli.main(["gwas", *common, "--pcs", "2", "--out", str(tmp_path / "g.csv")]) == 0
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 1001
    assert cli.main(["--set", "nrules=20", "--set", "propcol=0.5", "--set", "cv_folds=2", "cv", *common,
                     "--out", str(tmp_path / "cv.csv")]) == 0
    rows = (tmp_path / "cv.csv").read_text().splitlines()
    assert rows[0] == "fold,ler,gblup,flagged" and rows[-1].startswith("mean,")
    assert Path(str(tmp_path / "cv.csv") + ".manifest.json").exists()


def test_power_command(tmp_path):
    args = ["--seed", "1", "--set", "reps=1", "--set", "n_individuals=250", "--set", "nrules=20",
            "power", "--out", str(tmp_path / "power.csv")]
    assert cli.main(args) == 0
    lines = (tmp_path / "power.csv").read_text().splitlines()
    assert lines[0].startswith("method,x8,x11,x14") and len(lines) == 3
    manifest = read_manifest(str(tmp_path / "power.csv") + ".manifest.json")
    assert manifest.config["preset"] == "simulation"


def test_bad_config_exit_code(tmp_path, capsys):
    bad = _cfg(tmp_path, "bogus = 1\n")
    assert cli.main(["--config", str(bad), "simulate", "--out", str(tmp_path / "x")]) == 2
    assert "valid keys" in capsys.readouterr().err
