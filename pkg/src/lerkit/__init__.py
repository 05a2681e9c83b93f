"""Locally epistatic rule models for genomic prediction and association."""

__version__ = "0.1.0"

from .genotype import MarkerMatrix, PhenotypeTable, RegionPartition, compute_grm, compute_pcs, load_markers, load_phenotypes
from .mixed_model import gblup_fit, gwas_emma, reml_fit, rrblup_fit
from .pipeline import HyperParams, LerModel, cross_validate, fit_ler, importance, predict_ler, rank_markers
from .rules import IsleParams, Rule, SplitCondition
from .simulation import SimConfig, power_experiment, simulate_population

__all__ = [
    "HyperParams",
    "IsleParams",
    "LerModel",
    "MarkerMatrix",
    "PhenotypeTable",
    "RegionPartition",
    "Rule",
    "SimConfig",
    "SplitCondition",
    "compute_grm",
    "compute_pcs",
    "cross_validate",
    "fit_ler",
    "gblup_fit",
    "gwas_emma",
    "importance",
    "load_markers",
    "load_phenotypes",
    "power_experiment",
    "predict_ler",
    "rank_markers",
    "reml_fit",
    "rrblup_fit",
    "simulate_population",
]
