"""Flat ``key = value`` run configuration and run manifests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .pipeline import HyperParams
from .rules import IsleParams
from .simulation import SimConfig


class ConfigError(ValueError):
    pass


# Published per-crop rows usable as named starting points; any key set explicitly wins.
PRESETS = {
    "rice": {"mean_depth": 4.0, "nrules": 500, "nsplits": 5, "proprow": 0.3, "propcol": 0.1},
    "wheat": {"mean_depth": 1.0, "nrules": 500, "nsplits": 2, "proprow": 0.3, "propcol": 0.1},
    "maize": {"mean_depth": 2.0, "nrules": 1000, "nsplits": 10, "proprow": 0.1, "propcol": 0.05},
    "mouse": {"nrules": 2000, "nsplits": 10, "proprow": 0.1, "propcol": 0.05},
    # benchmark settings; must match simulation.simulation_hyperparams()
    "simulation": {"mean_depth": 3.0, "nrules": 500, "nsplits": 5, "proprow": 0.3, "propcol": 0.5, "target": "adjusted_y"},
}

# key -> (type, default, consumer)
SCHEMA = {
    "preset": (str, "rice", "run"),
    "seed": (int, 0, "run"),
    "threads": (int, 1, "run"),
    "covariates": (list, None, "run"),
    "nsplits": (int, 5, "hp"),
    "hotspots": (str, None, "run"),
    "nrules": (int, 500, "isle"),
    "mean_depth": (float, 4.0, "isle"),
    "proprow": (float, 0.3, "isle"),
    "propcol": (float, 0.1, "isle"),
    "nu": (float, 0.1, "isle"),
    "min_node": (int, 5, "isle"),
    "l1_ratio": (float, 0.5, "hp"),
    "n_pcs": (int, 3, "hp"),
    "target": (str, "blup", "hp"),
    "cv_folds": (int, 5, "hp"),
    "enet_folds": (int, 5, "hp"),
    "n_individuals": (int, 2000, "sim"),
    "n_snps": (int, 1000, "sim"),
    "h2": (float, 2.0 / 3.0, "sim"),
    "sex_effect": (float, 5.0, "sim"),
    "freq_low": (float, 0.1, "sim"),
    "freq_high": (float, 0.9, "sim"),
    "additive_only": (bool, False, "sim"),
    "reps": (int, 20, "run"),
    "top": (int, 20, "run"),
}


def _convert(key, raw, typ):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"{key}: expected bool (true/false), got {raw!r}")
        return low == "true"
    if typ is list:
        return [item.strip() for item in raw.split(",") if item.strip()]
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def read_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")
        values[key] = _convert(key, raw, SCHEMA[key][0])
    return values


@dataclass
class RunConfig:
    hp: HyperParams
    sim: SimConfig
    seed: int = 0
    threads: int = 1
    covariates: list = None
    hotspots: str = None
    reps: int = 20
    top: int = 20
    values: dict = field(default_factory=dict)

    def resolved(self):
        """Every key with its effective value, for manifests."""
        return dict(sorted(self.values.items()))


def resolve(values=None):
    """Fill defaults (preset first, then explicit keys) and validate ranges."""
    values = dict(values or {})
    preset = values.get("preset", "rice")
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = {k: spec[1] for k, spec in SCHEMA.items()}
    merged.update(PRESETS[preset])
    merged.update(values)
    try:
        isle = IsleParams(**{k: merged[k] for k in ("nrules", "mean_depth", "proprow", "propcol", "nu", "min_node")},
                          seed=merged["seed"])
        hp = HyperParams(
            nsplits=merged["nsplits"],
            isle=isle,
            l1_ratio=merged["l1_ratio"],
            n_pcs=merged["n_pcs"],
            target=merged["target"],
            cv_folds=merged["cv_folds"],
            enet_folds=merged["enet_folds"],
        )
        sim = SimConfig(
            n=merged["n_individuals"],
            m=merged["n_snps"],
            h2=merged["h2"],
            sex_effect=merged["sex_effect"],
            freq_low=merged["freq_low"],
            freq_high=merged["freq_high"],
            additive_only=merged["additive_only"],
            seed=merged["seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"out of range: {exc}") from None
    if merged["threads"] < 1:
        raise ConfigError("threads: must be >= 1")
    return RunConfig(
        hp=hp,
        sim=sim,
        seed=merged["seed"],
        threads=merged["threads"],
        covariates=merged["covariates"],
        hotspots=merged["hotspots"],
        reps=merged["reps"],
        top=merged["top"],
        values=merged,
    )


def parse_config(path=None, overrides=None):
    """Read a config file (or nothing) and apply ``overrides``; returns RunConfig."""
    values = {}
    if path is not None:
        values = read_config_text(Path(path).read_text(), str(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return resolve(values)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    arguments: dict
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"manifest has unknown fields {sorted(unknown)}")
        return cls(**data)


def write_manifest(manifest, path):
    Path(path).write_text(manifest.to_json())


def read_manifest(path):
    return RunManifest.from_json(Path(path).read_text())


def check_inputs(manifest):
    """Raise if an input recorded in ``manifest`` is missing or changed."""
    for name, info in sorted(manifest.inputs.items()):
        p = Path(info["path"])
        if not p.exists():
            raise ConfigError(f"input {name} ({p}) is missing; expected sha256 {info['sha256']}")
        actual = file_digest(p)
        if actual != info["sha256"]:
            raise ConfigError(f"input {name} ({p}) digest mismatch: expected {info['sha256']}, found {actual}")
