"""Replication engine: seed streams, config plumbing, failure policy,
aggregation arithmetic, and table output."""

import numpy as np
import pandas as pd
import pytest

from jointauc.datagen import ScenarioConfig
from jointauc.montecarlo import (ReplicationResult, StudyConfig, StudyError,
                                 aggregate_results, emit_tables,
                                 run_replication, run_study, stream_seed,
                                 true_parameter_values)
from jointauc.sampler import SamplerConfig

_PARAMS = ("sigma_error", "beta_a", "beta_x", "gamma_x", "gamma_a",
           "b_mu_1", "b_mu_2", "b_sd_1", "b_sd_2")


def tiny_config(reps=2, workers=1, seed=0):
    return StudyConfig(
        scenario=1, replications=reps, master_seed=seed, workers=workers,
        sampler=SamplerConfig(q_total=30, warmup=80),
        scenario_config=ScenarioConfig.for_scenario(1, n_subjects=24,
                                                    target_events=4))


# ---------------------------------------------------------------------------
# seed streams
# ---------------------------------------------------------------------------

def test_stream_seed_deterministic_and_distinct():
    assert stream_seed(7, 0, 3) == stream_seed(7, 0, 3)
    seen = {stream_seed(master, stream, rep)
            for master in (0, 1) for stream in (0, 1, 2) for rep in range(20)}
    assert len(seen) == 2 * 3 * 20


def test_stream_seed_value_fits_generator():
    s = stream_seed(123, 2, 45)
    assert isinstance(s, int) and s >= 0
    np.random.default_rng(s)  # must be a legal seed


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_study_config_validation():
    with pytest.raises(ValueError):
        StudyConfig(scenario=5)
    with pytest.raises(ValueError):
        StudyConfig(replications=0)
    with pytest.raises(ValueError):
        StudyConfig(alpha=1.5)
    with pytest.raises(ValueError):
        StudyConfig(direction="sideways")
    with pytest.raises(ValueError):
        StudyConfig(workers=0)
    with pytest.raises(ValueError):
        StudyConfig(gamma_utility=-0.1)


def test_study_config_accepts_production_scale():
    cfg = StudyConfig(replications=1000, sampler=SamplerConfig(q_total=25000))
    assert cfg.replications == 1000
    assert cfg.sampler.q_total == 25000
    assert cfg.sampler.n_warmup == 2500


def test_study_config_dict_round_trip():
    cfg = tiny_config(reps=5, seed=9)
    back = StudyConfig.from_dict(cfg.to_dict())
    assert back == cfg
    plain = StudyConfig(scenario=2)
    assert StudyConfig.from_dict(plain.to_dict()) == plain
    with pytest.raises(ValueError, match="unknown"):
        StudyConfig.from_dict({**plain.to_dict(), "extra_knob": 1})


def test_resolved_scenario_prefers_explicit_config():
    cfg = tiny_config()
    assert cfg.resolved_scenario().n_subjects == 24
    default = StudyConfig(scenario=3)
    resolved = default.resolved_scenario()
    assert resolved.scenario == 3
    assert resolved.n_subjects == 500
    assert resolved.beta_a == 0.0 and resolved.gamma_a == -0.75


def test_true_parameter_values_by_scenario():
    expect_effects = {1: (-2.25, -0.75), 2: (-2.25, 0.0),
                      3: (0.0, -0.75), 4: (0.0, 0.0)}
    for scen, (beta_a, gamma_a) in expect_effects.items():
        truth = true_parameter_values(ScenarioConfig.for_scenario(scen))
        assert list(truth) == list(_PARAMS)
        assert truth["beta_a"] == beta_a
        assert truth["gamma_a"] == gamma_a
        assert truth["sigma_error"] == 0.25
        assert truth["beta_x"] == 1.5 and truth["gamma_x"] == -1.2
        assert truth["b_mu_1"] == -10.0 and truth["b_mu_2"] == 11.0
        assert truth["b_sd_1"] == 1.0 and truth["b_sd_2"] == 1.0


# ---------------------------------------------------------------------------
# single replications
# ---------------------------------------------------------------------------

@pytest.mark.property
def test_run_replication_deterministic_and_rep_sensitive():
    cfg = tiny_config()
    a = run_replication(cfg, 0)
    b = run_replication(cfg, 0)
    assert not a.failed
    assert a.estimates == b.estimates
    assert a.theta == b.theta and a.se == b.se
    assert (a.datagen_seed, a.sampler_seed, a.bootstrap_seed) == \
           (b.datagen_seed, b.sampler_seed, b.bootstrap_seed)
    c = run_replication(cfg, 1)
    assert c.datagen_seed != a.datagen_seed
    assert c.estimates != a.estimates


def test_run_replication_records_diagnostics():
    res = run_replication(tiny_config(), 0)
    assert set(res.estimates) == set(_PARAMS)
    assert set(res.reject) == {"tb", "s", "total"}
    assert np.isfinite(res.accept_mean)
    assert res.runtime_s > 0
    assert res.divergences >= 0


def test_replication_result_dict_round_trip():
    res = run_replication(tiny_config(), 0)
    back = ReplicationResult.from_dict(res.to_dict())
    assert back == res
    with pytest.raises(ValueError, match="unknown"):
        ReplicationResult.from_dict({**res.to_dict(), "bogus": 1})


# ---------------------------------------------------------------------------
# aggregation policy on synthetic results
# ---------------------------------------------------------------------------

def synthetic_result(rep, gamma_a=-0.75, reject_tb=True, failed=False):
    estimates = {"sigma_error": 0.25, "beta_a": -2.25, "beta_x": 1.5,
                 "gamma_x": -1.2, "gamma_a": gamma_a, "b_mu_1": -10.0,
                 "b_mu_2": 11.0, "b_sd_1": 1.0, "b_sd_2": 1.0}
    flags = {"tb": reject_tb, "s": False, "total": reject_tb}
    if failed:
        return ReplicationResult(rep=rep, datagen_seed=0, sampler_seed=0,
                                 bootstrap_seed=0, failed=True, message="boom")
    return ReplicationResult(rep=rep, datagen_seed=0, sampler_seed=0,
                             bootstrap_seed=0, estimates=estimates,
                             theta={}, se={}, p_value={}, reject=flags)


def test_aggregate_rates_and_bias_arithmetic():
    cfg = StudyConfig(scenario=1, replications=4)
    results = [synthetic_result(0, gamma_a=-0.70, reject_tb=True),
               synthetic_result(1, gamma_a=-0.80, reject_tb=True),
               synthetic_result(2, gamma_a=-0.75, reject_tb=False),
               synthetic_result(3, gamma_a=-0.75, reject_tb=True)]
    report = aggregate_results(cfg, results)
    assert report.rejection_rates == {"tb": 0.75, "s": 0.0, "total": 0.75}
    table = report.param_table
    assert list(table.index) == list(_PARAMS)
    row = table.loc["gamma_a"]
    assert row["true"] == -0.75
    np.testing.assert_allclose(row["estimate"], -0.75)
    np.testing.assert_allclose(row["bias"], 0.0, atol=1e-15)
    np.testing.assert_allclose(row["mse"], (0.05**2 + 0.05**2) / 4)
    # mse dominates squared bias everywhere
    assert np.all(table["mse"].to_numpy()
                  >= np.square(table["bias"].to_numpy()) - 1e-12)
    assert report.n_completed == 4 and report.n_failed == 0


def test_aggregate_shuffled_input_is_sorted():
    cfg = StudyConfig(scenario=1, replications=3)
    results = [synthetic_result(2), synthetic_result(0), synthetic_result(1)]
    report = aggregate_results(cfg, results)
    assert [r.rep for r in report.results] == [0, 1, 2]


def test_aggregate_tolerates_rare_failures_with_warning():
    cfg = StudyConfig(scenario=1, replications=40)
    results = [synthetic_result(i) for i in range(39)]
    results.append(synthetic_result(39, failed=True))
    with pytest.warns(UserWarning, match="replication 39 failed"):
        report = aggregate_results(cfg, results)
    assert report.n_completed == 39 and report.n_failed == 1
    assert report.rejection_rates["tb"] == 1.0


def test_aggregate_rejects_excess_failures():
    cfg = StudyConfig(scenario=1, replications=20)
    results = [synthetic_result(i) for i in range(18)]
    results += [synthetic_result(18, failed=True),
                synthetic_result(19, failed=True)]
    with pytest.warns(UserWarning):
        with pytest.raises(StudyError, match="tolerance"):
            aggregate_results(cfg, results)


def test_aggregate_requires_at_least_one_completion():
    cfg = StudyConfig(scenario=1, replications=1)
    with pytest.raises(StudyError):
        with pytest.warns(UserWarning):
            aggregate_results(cfg, [synthetic_result(0, failed=True)])


# ---------------------------------------------------------------------------
# whole studies and tables
# ---------------------------------------------------------------------------

def test_run_study_end_to_end_and_worker_invariance():
    report1 = run_study(tiny_config(reps=2, workers=1))
    report2 = run_study(tiny_config(reps=2, workers=2))
    assert report1.n_completed == 2
    assert report1.rejection_rates == report2.rejection_rates
    pd.testing.assert_frame_equal(report1.param_table, report2.param_table)
    for a, b in zip(report1.results, report2.results):
        assert a.rep == b.rep and a.estimates == b.estimates


def test_emit_tables_round_trip(tmp_path):
    cfg1 = StudyConfig(scenario=1, replications=2)
    cfg4 = StudyConfig(scenario=4, replications=2)
    rep1 = aggregate_results(cfg1, [synthetic_result(0), synthetic_result(1)])
    rep4 = aggregate_results(cfg4, [synthetic_result(0, reject_tb=False),
                                    synthetic_result(1, reject_tb=False)])
    paths = emit_tables([rep1, rep4], tmp_path)
    names = {p.name for p in paths}
    assert names == {"table3.csv", "tableA.csv"}

    table3 = pd.read_csv(tmp_path / "table3.csv")
    assert list(table3.columns) == ["kind", "scenario_1", "scenario_4"]
    assert list(table3["kind"]) == ["tb", "s", "total"]
    assert table3["scenario_1"].tolist() == [1.0, 0.0, 1.0]
    assert table3["scenario_4"].tolist() == [0.0, 0.0, 0.0]

    table_a = pd.read_csv(tmp_path / "tableA.csv")
    assert list(table_a.columns) == ["scenario", "parameter", "true",
                                     "estimate", "bias", "mse"]
    assert len(table_a) == 2 * len(_PARAMS)
    assert set(table_a["scenario"]) == {1, 4}

    single = emit_tables(rep1, tmp_path)
    assert {p.name for p in single} == names
