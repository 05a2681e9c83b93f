"""Synthetic benchmark: five local effects with epistasis and PC background.

Marker ``x_k`` is the k-th SNP (1-based), stored in column ``k - 1``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .genotype import MarkerMatrix, PhenotypeTable, compute_pcs
from .mixed_model import gwas_emma
from .pipeline import HyperParams, fit_ler, importance, rank_markers
from .rules import IsleParams

CAUSAL = (8, 11, 14, 208, 211, 214, 408, 411, 414, 608, 611, 614, 808, 811, 814)


@dataclass
class SimConfig:
    n: int = 2000
    m: int = 1000
    freq_low: float = 0.1
    freq_high: float = 0.9
    h2: float = 2.0 / 3.0
    sex_effect: float = 5.0
    additive_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.h2 < 1:
            raise ValueError("h2 must lie in (0, 1)")
        if self.m < max(CAUSAL):
            raise ValueError(f"need at least {max(CAUSAL)} SNPs")
        if self.n < 4:
            raise ValueError("need at least 4 individuals")
        if not 0 < self.freq_low <= self.freq_high < 1:
            raise ValueError("allele frequency bounds must satisfy 0 < low <= high < 1")


@dataclass
class SimPopulation:
    genotypes: MarkerMatrix
    sex: np.ndarray
    effects: np.ndarray
    genetic_values: np.ndarray
    phenotypes: np.ndarray
    causal_ids: tuple
    pcs: np.ndarray
    noise_variance: float
    seed: int = 0

    @property
    def phenotype_table(self):
        return PhenotypeTable.from_arrays(self.phenotypes, self.sex, self.genotypes.sample_ids, ["sex"])


def _standardize(v):
    sd = v.std(ddof=1)
    if not sd > 0:
        raise FloatingPointError("effect has zero variance")
    return (v - v.mean()) / sd


def genetic_effects(G, pc1, pc2, additive_only=False):
    """The five raw effects (columns) for genotype matrix ``G`` (0/1/2)."""

    def x(k):
        return G[:, k - 1]

    neg = pc1 < 0
    if additive_only:
        return np.column_stack(
            [0.6 * x(b) + 0.5 * x(b + 3) - 0.4 * x(b + 6) for b in (8, 208, 408, 608, 808)]
        )
    g1 = 0.6 * x(8) + 0.5 * x(11) - 0.4 * x(14)
    g2 = np.where(neg, 0.6 * x(208) - 0.5 * x(211) - 0.4 * x(214), -(0.6 * x(208) + 0.5 * x(211) + 0.4 * x(214)))
    g3 = (0.6 * x(408) + 0.5 * x(411) - 0.4 * x(414)) ** 2
    g4 = np.where(neg, (0.6 * x(608) + 0.5 * x(611) - 0.4 * x(614)) ** 2, -((0.6 * x(608) - 0.5 * x(611) + 0.4 * x(614)) ** 2))
    g5 = np.where(
        neg,
        (0.6 * x(808) + 0.5 * x(811) - 0.4 * x(814) + 0.5 * pc2) ** 2,
        (-0.6 * x(808) - 0.5 * x(811) + 0.4 * x(814) - 0.5 * pc2) ** 2,
    )
    return np.column_stack([g1, g2, g3, g4, g5])


def simulate_population(cfg=None):
    """Draw one population.

    SNPs are independent ``Binomial(2, p)`` with ``p ~ U(freq_low,
    freq_high)``; the PCs used in the effects are those of the simulated
    genotypes. Each effect is standardized to unit sample variance, the
    genetic value is their sum, males get ``sex_effect`` added and the
    noise variance is set from the realized genetic variance so that
    ``var(g) / (var(g) + s2e) = h2``.
    """
    cfg = SimConfig() if cfg is None else cfg
    seed = cfg.seed
    for attempt in range(100):
        rng = np.random.default_rng([seed, attempt])
        freqs = rng.uniform(cfg.freq_low, cfg.freq_high, cfg.m)
        G = rng.binomial(2, freqs, size=(cfg.n, cfg.m)).astype(float)
        ids = [f"x{k + 1}" for k in range(cfg.m)]
        samples = [f"ind{i + 1}" for i in range(cfg.n)]
        M = MarkerMatrix(G, ids, samples)
        try:
            pcs = compute_pcs(M, 2).scores
            raw = genetic_effects(G, pcs[:, 0], pcs[:, 1], cfg.additive_only)
            effects = np.column_stack([_standardize(raw[:, i]) for i in range(raw.shape[1])])
        except (FloatingPointError, ValueError):
            warnings.warn(f"degenerate draw for seed {seed}; resampling")
            continue
        break
    else:
        raise RuntimeError("could not draw a non-degenerate population")
    g = effects.sum(axis=1)
    sex = np.zeros(cfg.n)
    sex[rng.permutation(cfg.n)[: cfg.n // 2]] = 1.0
    s2e = g.var(ddof=1) * (1.0 - cfg.h2) / cfg.h2
    y = g + cfg.sex_effect * sex + rng.normal(0.0, np.sqrt(s2e), cfg.n)
    return SimPopulation(M, sex, effects, g, y, CAUSAL, pcs, float(s2e), seed)


def interaction_fixture(n=200, noise=0.05, seed=0):
    """Two markers whose phenotype is -1 when ``m1 < 2 and m2 > 1``, else +1.

    Rows cycle through the nine genotype cells. Returns ``(G, y, cls)``
    where ``cls`` is the noise-free class label.
    """
    cells = np.array([(a, b) for a in range(3) for b in range(3)], dtype=float)
    G = cells[np.arange(n) % 9]
    cls = np.where((G[:, 0] < 2) & (G[:, 1] > 1), -1.0, 1.0)
    rng = np.random.default_rng(seed)
    y = cls + (rng.normal(0.0, noise, n) if noise else 0.0)
    return G, y, cls


@dataclass
class PowerTable:
    causal_ids: tuple
    gwas: np.ndarray
    ler: np.ndarray
    reps: int
    top: int = 20
    per_rep: list = field(default_factory=list, repr=False)

    def rates(self):
        return self.gwas / self.reps, self.ler / self.reps

    def to_csv(self, path):
        header = ["method"] + [f"x{k}" for k in self.causal_ids]
        lines = [",".join(header)]
        for name, counts in (("GWAS", self.gwas), ("LER", self.ler)):
            lines.append(",".join([name] + [str(int(c)) for c in counts]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _replicate(args):
    cfg, hp, top, rep, seed = args
    rep_seed = int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])
    pop = simulate_population(SimConfig(**{**cfg.__dict__, "seed": rep_seed}))
    ph = pop.phenotype_table
    causal_cols = np.array(pop.causal_ids) - 1
    gw = gwas_emma(ph.y, ph.covariates, pop.genotypes)
    gw_top = set(gw.ranking()[:top].tolist())
    model = fit_ler(pop.genotypes, ph, hp.with_seed(rep_seed))
    ler_top = set(rank_markers(importance(model), top))
    return (
        np.array([c in gw_top for c in causal_cols], dtype=int),
        np.array([c in ler_top for c in causal_cols], dtype=int),
    )


def power_experiment(reps, cfg=None, ler_hp=None, top=20, seed=0, threads=1):
    """Count how often each causal SNP ranks in the top ``top`` markers.

    GWAS ranks by ascending p-value, LER by marker importance. Every
    replicate draws a fresh population from a seed derived from
    ``(seed, replicate)``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    cfg = SimConfig() if cfg is None else cfg
    hp = simulation_hyperparams() if ler_hp is None else ler_hp
    jobs = [(cfg, hp, top, r, seed) for r in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    gwas = np.sum([r[0] for r in results], axis=0)
    ler = np.sum([r[1] for r in results], axis=0)
    return PowerTable(CAUSAL, gwas, ler, reps, top, results)


def simulation_hyperparams():
    """LER settings used for the synthetic benchmark (five 200-SNP regions)."""
    return HyperParams(nsplits=5, isle=IsleParams(mean_depth=3.0, propcol=0.5), target="adjusted_y")
