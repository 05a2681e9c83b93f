import numpy as np
import pytest

from lerkit.genotype import compute_pcs
from lerkit.pipeline import HyperParams
from lerkit.rules import IsleParams
from lerkit.simulation import (
    CAUSAL,
    PowerTable,
    SimConfig,
    genetic_effects,
    power_experiment,
    simulate_population,
    interaction_fixture,
)


@pytest.fixture(scope="module")
def pop():
    return simulate_population(SimConfig(seed=5))


def test_config_validation():
    for bad in ({"h2": 1.0}, {"h2": 0.0}, {"m": 500}, {"freq_low": 0.0}):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_shapes_and_causal(pop):
    assert pop.genotypes.shape == (2000, 1000)
    assert pop.genotypes.marker_ids[7] == "x8"
    assert len(pop.causal_ids) == 15 and pop.causal_ids[0] == 8
    assert set(np.unique(pop.sex)) == {0.0, 1.0}


def test_effects_unit_variance(pop):
    assert np.allclose(pop.effects.var(axis=0, ddof=1), 1.0, atol=1e-12)
    assert np.allclose(pop.genetic_values, pop.effects.sum(axis=1))


def test_g1_is_linear(pop):
    G = pop.genotypes.values
    lin = 0.6 * G[:, 7] + 0.5 * G[:, 10] - 0.4 * G[:, 13]
    assert np.corrcoef(pop.effects[:, 0], lin)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_pc_conditioned_effects_use_generated_pcs(pop):
    pcs = compute_pcs(pop.genotypes, 2).scores
    assert np.array_equal(pcs, pop.pcs)
    raw = genetic_effects(pop.genotypes.values, pcs[:, 0], pcs[:, 1])
    std = (raw - raw.mean(axis=0)) / raw.std(axis=0, ddof=1)
    assert np.allclose(std, pop.effects, atol=1e-12)


def test_sex_gap_and_heritability(pop):
    gap = pop.phenotypes[pop.sex == 1].mean() - pop.phenotypes[pop.sex == 0].mean()
    assert abs(gap - 5.0) < 0.3
    # one replicate scatters by about 0.04; the target holds on average
    h2 = []
    for seed in range(10):
        p = simulate_population(SimConfig(seed=seed))
        h2.append(p.genetic_values.var() / (p.phenotypes - 5.0 * p.sex).var())
    assert abs(np.mean(h2) - 2 / 3) < 0.03


def test_independent_markers(pop):
    sub = pop.genotypes.values[:, :200]
    corr = np.corrcoef(sub, rowvar=False)
    off = np.abs(corr[~np.eye(200, dtype=bool)])
    assert off.mean() < 0.05


def test_reproducible():
    a = simulate_population(SimConfig(n=200, seed=9))
    b = simulate_population(SimConfig(n=200, seed=9))
    assert np.array_equal(a.phenotypes, b.phenotypes)
    assert not np.array_equal(a.phenotypes, simulate_population(SimConfig(n=200, seed=10)).phenotypes)


def test_additive_only_variant():
    p = simulate_population(SimConfig(n=300, additive_only=True, seed=2))
    G = p.genotypes.values
    for i, b in enumerate((8, 208, 408, 608, 808)):
        lin = 0.6 * G[:, b - 1] + 0.5 * G[:, b + 2] - 0.4 * G[:, b + 5]
        assert np.corrcoef(p.effects[:, i], lin)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_interaction_fixture_cells():
    G, y, cls = interaction_fixture(noise=0.0)
    assert G.shape == (200, 2)
    assert cls[(G[:, 0] == 0) & (G[:, 1] == 2)][0] == -1
    assert cls[(G[:, 0] == 2) & (G[:, 1] == 2)][0] == 1


def test_multiplicative_model_cannot_fit_interaction():
    G, y, cls = interaction_fixture(noise=0.0)
    A = np.column_stack([np.ones(200), G[:, 0], G[:, 1], G[:, 0] * G[:, 1]])
    fit = A @ np.linalg.lstsq(A, y, rcond=None)[0]
    minus = cls < 0
    assert np.abs(fit[minus] - cls[minus]).mean() > 0.1


def test_power_table_csv(tmp_path):
    t = PowerTable(CAUSAL, np.arange(15), np.arange(15)[::-1], reps=20)
    t.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["method", "x8", "x11"]
    assert lines[1].startswith("GWAS,0,1") and lines[2].startswith("LER,14,13")
    gw, le = t.rates()
    assert gw[1] == 0.05


def test_power_single_rep_counts():
    hp = HyperParams(nsplits=5, isle=IsleParams(nrules=20, mean_depth=2, propcol=0.5))
    table = power_experiment(1, SimConfig(n=300), hp, top=20, seed=1)
    assert set(np.unique(np.concatenate([table.gwas, table.ler]))) <= {0, 1}
    again = power_experiment(1, SimConfig(n=300), hp, top=20, seed=1)
    assert np.array_equal(table.ler, again.ler) and np.array_equal(table.gwas, again.gwas)
    with pytest.raises(ValueError):
        power_experiment(0)
