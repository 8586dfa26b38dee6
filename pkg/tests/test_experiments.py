import math

import numpy as np
import pytest

from conf.config import ExperimentConfig
from services.dynamics import descendants
from services.errors import ConfigError, PreconditionError
from services.experiments import (
    EXPERIMENTS,
    GrowthRecord,
    PersistenceRecord,
    density_plateau,
    dual_sizes,
    growth_experiment,
    ladder_experiment,
    monotone_coupling_check,
    persistence_experiment,
    proof_ladder,
    psi_ones_experiment,
    seed_fraction_experiment,
    subcritical_experiment,
)
from services.graph_gen import GraphConfig, generate
from services.noise import NoiseField
from services.psi_tree import PsiParams


def _rows(result):
    return [tuple(row[k] for k in result.fields) for row in result.rows()]


# ----------------------------------------------------------------
# Extinction experiments
# ----------------------------------------------------------------

def test_persistence_records_and_summary():
    cfg = ExperimentConfig(n_grid=(4, 6), trials=12, t_max=400, window_end=60)
    events = []
    result = persistence_experiment(cfg, sink=events.append)
    assert result.fields == PersistenceRecord.FIELDS
    assert [(r.n, r.replicate) for r in result.records] == [(n, i) for n in (4, 6) for i in range(12)]
    assert len(result.summary["medians"]) == 2
    assert [e["n"] for e in events if e["event"] == "grid_point"] == [4, 6]
    for rec in result.records:
        assert 0.0 <= rec.mean_density <= 1.0
        assert rec.extinction_time is None or 1 <= rec.extinction_time <= 400


def test_thread_count_does_not_change_output():
    cfg = ExperimentConfig(n_grid=(5, 8), trials=10, t_max=300, window_end=80, seed=3)
    one = persistence_experiment(cfg)
    many = persistence_experiment(cfg.with_overrides(threads=3))
    assert _rows(one) == _rows(many)
    assert repr(one.summary) == repr(many.summary)


def test_subcritical_quick():
    cfg = ExperimentConfig(q=0.4, n_grid=(1000,), trials=20, t_max=200)
    result = subcritical_experiment(cfg)
    assert result.summary["all_extinct"]
    assert 15 <= result.summary["medians"][0] <= 60
    assert result.summary["decay_model"][0] == pytest.approx(math.log(1000) / math.log(1.25))


def test_subcritical_rejects_supercritical():
    with pytest.raises(PreconditionError):
        subcritical_experiment(ExperimentConfig(q=0.75))


@pytest.mark.slow
def test_subcritical_acceptance():
    cfg = ExperimentConfig(q=0.4, n_grid=(10_000,), trials=100, t_max=200)
    result = subcritical_experiment(cfg)
    assert result.summary["all_extinct"]
    assert 25 <= result.summary["medians"][0] <= 90


def test_censored_medians_are_undetermined():
    cfg = ExperimentConfig(q=1.0, n_grid=(4, 6, 8), trials=5, t_max=30)
    summary = persistence_experiment(cfg).summary
    assert summary["medians"] == [math.inf] * 3
    assert summary["censored_fraction"] == [1.0] * 3
    assert summary["undetermined"] == [4, 6, 8]
    assert not summary["strictly_increasing"]
    assert summary["log_slope_points"] == 0


def test_persistence_without_births_dies_at_one():
    cfg = ExperimentConfig(q=0.0, n_grid=(5, 9), trials=6, t_max=50)
    result = persistence_experiment(cfg)
    assert all(rec.extinction_time == 1 for rec in result.records)
    assert result.summary["medians"] == [1.0, 1.0]


@pytest.mark.slow
def test_persistence_grows_with_n():
    # t_max well above the n=25 median so no grid point is censored past half
    cfg = ExperimentConfig(n_grid=(5, 10, 15, 20, 25), trials=200, t_max=500_000)
    result = persistence_experiment(cfg)
    summary = result.summary
    medians = summary["medians"]
    assert summary["undetermined"] == []
    assert all(math.isfinite(m) for m in medians)
    assert summary["strictly_increasing"]
    assert summary["log_slope_points"] == 5
    assert summary["log_slope"] > 0
    assert medians[4] / medians[1] >= 5


# ----------------------------------------------------------------
# Plateau
# ----------------------------------------------------------------

def test_plateau_quick():
    cfg = ExperimentConfig(n=2000, trials=4, burn_in=50, window_end=150)
    result = density_plateau(cfg)
    assert result.summary["rho"] == pytest.approx(2.0 / 3.0)
    assert result.summary["window"] == [50, 150]
    assert abs(result.summary["gap"]) < 0.05
    assert result.summary["died_before_window"] == 0


def test_plateau_needs_supercritical():
    with pytest.raises(PreconditionError):
        density_plateau(ExperimentConfig(q=0.4))


@pytest.mark.slow
def test_plateau_acceptance():
    cfg = ExperimentConfig(n=10_000, trials=20, burn_in=50, window_end=500)
    result = density_plateau(cfg)
    assert abs(result.summary["mean_density"] - 2.0 / 3.0) <= 0.03
    assert result.summary["died_before_window"] == 0


# ----------------------------------------------------------------
# Seed fraction
# ----------------------------------------------------------------

def test_dual_sizes_match_individual_duals():
    g = generate(GraphConfig(n=300, r=2, seed=5))
    noise = NoiseField(q=0.75, seed=5, stream="dual")
    roots = np.array([0, 7, 99, 250])
    sizes = dual_sizes(g, noise, roots, 9)
    for x, size in zip(roots, sizes):
        assert size == descendants(g, noise, np.array([x]), 0, 9).size


def test_seed_fraction_near_survival_probability():
    cfg = ExperimentConfig(n=2000, a=1.0, b=0.3, roots=200)
    result = seed_fraction_experiment(cfg)
    summary = result.summary
    assert summary["steps"] == math.ceil(math.log(2000))
    assert summary["roots"] == 200
    assert 0.35 <= summary["fraction"] <= 0.85
    assert all(rec.exceeds == (rec.dual_size > summary["threshold"]) for rec in result.records)


@pytest.mark.slow
def test_seed_fraction_acceptance():
    cfg = ExperimentConfig(n=10_000, a=2.0, b=0.5)
    summary = seed_fraction_experiment(cfg).summary
    assert summary["roots"] == 10_000
    assert summary["steps"] == math.ceil(2 * math.log(10_000))
    assert abs(summary["fraction"] - summary["rho"]) <= 0.05


def test_seed_fraction_quick():
    summary = seed_fraction_experiment(ExperimentConfig(n=10_000, a=2.0, b=0.5, roots=500)).summary
    assert summary["rho"] == pytest.approx(2.0 / 3.0)
    assert abs(summary["fraction"] - summary["rho"]) <= 0.08


def test_seed_fraction_subcritical_is_near_zero():
    summary = seed_fraction_experiment(ExperimentConfig(q=0.4, n=10_000, a=2.0, b=0.5, roots=1000)).summary
    assert summary["rho"] == 0.0
    assert summary["fraction"] <= 0.01


def test_seed_fraction_full_noise_is_one():
    summary = seed_fraction_experiment(ExperimentConfig(q=1.0, n=10_000, a=2.0, b=0.5, roots=100)).summary
    assert summary["fraction"] == 1.0


# ----------------------------------------------------------------
# Growth and psi statistics
# ----------------------------------------------------------------

GROWTH_CFG = ExperimentConfig(
    n=100_000, q_tilde=0.7, delta=0.02, g=4, trials=40, samples_per_graph=10, m_grid=(2, 4, 8)
)


def test_growth_chain_inequality_holds():
    result = growth_experiment(GROWTH_CFG)
    assert result.fields == GrowthRecord.FIELDS
    assert [rec.m for rec in result.records] == [2, 4, 8]
    assert result.summary["chain_violations"] == 0
    for rec in result.records:
        assert rec.accepted > 0
        assert rec.failures <= rec.accepted
    assert result.summary["root_rate"] > 0
    assert result.summary["level_rate"] == pytest.approx(result.summary["root_rate"] * (1.4 - 1 - 0.02))


def test_growth_failures_seen_for_single_vertex():
    cfg = GROWTH_CFG.with_overrides(trials=200, samples_per_graph=50, m_grid=(1,))
    rec = growth_experiment(cfg).records[0]
    assert rec.accepted >= 190
    # a lone dual dies within g=4 steps about a third of the time
    assert 0.15 <= rec.failure_frequency <= 0.55
    assert rec.chain_violations == 0


def test_growth_rejects_large_m():
    with pytest.raises(PreconditionError):
        growth_experiment(GROWTH_CFG, m_grid=[10_000])


@pytest.mark.slow
def test_growth_acceptance():
    # small m keeps the failure event observable; at m >= 20 it is below 1/2000
    cfg = GROWTH_CFG.with_overrides(trials=2000, samples_per_graph=50, m_grid=(1, 2, 4))
    result = growth_experiment(cfg)
    summary = result.summary
    assert summary["chain_violations"] == 0
    assert all(rec.accepted >= 1000 for rec in result.records)
    assert all(rec.failures > 0 for rec in result.records)
    freqs = summary["failure_frequency"]
    assert freqs[0] > freqs[1] > freqs[2]
    assert summary["strictly_decreasing"]



def test_psi_ones_quick():
    cfg = ExperimentConfig(n=20_000, m=5, q_tilde=0.625, delta=0.125, g=2, trials=200, positions=10)
    result = psi_ones_experiment(cfg)
    summary = result.summary
    assert summary["tree_size"] == 35
    assert summary["marginal_bound"] == pytest.approx(35 / 19_998)
    assert len(result.records) == 10
    assert summary["max_marginal_frequency"] <= summary["marginal_bound"] + 3 * summary["max_marginal_se"] + 0.02
    assert summary["zero_d_frequency"] > 0.5


@pytest.mark.slow
def test_psi_ones_acceptance():
    from services.analysis import proportion_se

    cfg = ExperimentConfig(n=100_000, m=10, q_tilde=0.625, delta=0.125, g=3, trials=10_000,
                           samples_per_graph=100, positions=20)
    result = psi_ones_experiment(cfg)
    for rec in result.records:
        assert rec.frequency <= rec.bound + 3 * proportion_se(rec.ones, rec.trials) + 1e-12
    summary = result.summary
    assert summary["joint_frequency"] <= summary["joint_bound"] + 3 * summary["joint_standard_error"] + 1e-4


# ----------------------------------------------------------------
# Ladder
# ----------------------------------------------------------------

Q_ONE = ExperimentConfig(q=1.0, n=1_000_000, a=1.0, b=0.2, epsilon=3.05e-5)


def test_ladder_saturates_when_every_vertex_gives_birth():
    trace = proof_ladder(Q_ONE, 0)
    assert trace.seeded
    assert trace.status == "saturated"
    alphas = [rung.alpha for rung in trace.rungs[1:]]
    assert alphas == list(range(15, 31))
    assert trace.rungs_passed == 16
    assert all(rung.h_chain for rung in trace.rungs)


def test_ladder_seed_too_small():
    cfg = ExperimentConfig(q=1.0, n=1000, a=0.5, b=0.9)
    trace = proof_ladder(cfg, 3)
    assert trace.status == "seed-too-small"
    assert not trace.seeded
    assert len(trace.rungs) == 1


def test_ladder_extinct_without_births():
    g = generate(GraphConfig(n=500, r=2, seed=1))
    cfg = ExperimentConfig(q=1.0, n=500)
    trace = proof_ladder(cfg, 0, g=g, noise=NoiseField(q=0.0, seed=0, stream="dual"))
    assert trace.status == "extinct"
    assert trace.rungs[0].descendants == 0


def test_ladder_rejects_bad_root():
    with pytest.raises(PreconditionError):
        proof_ladder(ExperimentConfig(q=1.0, n=500), 500)


def test_ladder_needs_psi_parameters_when_subcritical():
    with pytest.raises(ConfigError):
        proof_ladder(ExperimentConfig(q=0.4, n=500), 0)


def test_ladder_experiment_summary():
    cfg = ExperimentConfig(n=2000, roots=6, a=1.0, b=0.3, i_cap=3, q_tilde=0.625, delta=0.125, g=3)
    result = ladder_experiment(cfg)
    assert result.summary["roots"] == 6
    assert 0 <= result.summary["seeded"] <= 6
    assert len({rec.root for rec in result.records}) == 6
    assert all(rec.rung <= 2 for rec in result.records)


def test_ladder_params_override():
    g = generate(GraphConfig(n=5000, r=2, seed=2))
    noise = NoiseField(q=1.0, seed=0, stream="dual")
    trace = proof_ladder(ExperimentConfig(q=1.0, n=5000, a=1.0, b=0.2, epsilon=0.004, i_cap=2), 0, g, noise,
                         PsiParams(q_tilde=0.75, delta=0.25, g=5))
    assert trace.status in ("cap", "saturated", "failure")
    assert len(trace.rungs) <= 3


# ----------------------------------------------------------------
# Coupling and registry
# ----------------------------------------------------------------

def test_monotone_coupling():
    cfg = ExperimentConfig(n=40, t_max=3000)
    result = monotone_coupling_check(cfg, [0.8, 0.5, 0.6, 0.7])
    assert result.summary["monotone"]
    assert [rec.q for rec in result.records] == [0.5, 0.6, 0.7, 0.8]
    with pytest.raises(PreconditionError):
        monotone_coupling_check(cfg, [])


def test_registry_names():
    assert set(EXPERIMENTS) == {
        "persistence", "plateau", "seed-fraction", "growth", "psi-ones", "ladder", "subcritical",
    }
