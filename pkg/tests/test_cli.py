"""Command-line pipeline: artifacts, schemas, exit codes, and the
draws CSV round trip."""

import json

import numpy as np
import pandas as pd
import pytest

from jointauc.cli import main, read_draws_csv, write_draws_csv
from jointauc.datagen import ScenarioConfig, generate_trial
from jointauc.domain import load_dataset
from jointauc.sampler import SamplerConfig, run_chain

TINY_SIM = ["--n-subjects", "24", "--target-events", "4"]
TINY_FIT = ["--q", "30", "--warmup", "80"]


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run_cli("simulate", "--scenario", 1, *TINY_SIM,
                   "--seed", 1, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def draws_csv(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "draws.csv"
    assert run_cli("fit", "--data", sim_dir, *TINY_FIT,
                   "--seed", 3, "--out", out) == 0
    return out


def test_version_and_help_exit_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "--scenario" in out


def test_simulate_artifacts(sim_dir):
    names = {p.name for p in sim_dir.iterdir()}
    assert {"subjects.csv", "visits.csv", "scenario.json",
            "manifest.json"} <= names
    subjects = pd.read_csv(sim_dir / "subjects.csv")
    assert len(subjects) == 24
    assert subjects["delta"].sum() == 4
    scenario = json.loads((sim_dir / "scenario.json").read_text())
    assert scenario["n_subjects"] == 24
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seeds"] == {"datagen": 1}
    assert "subjects.csv" in manifest["artifacts"]


def test_simulate_is_byte_reproducible(sim_dir, tmp_path):
    again = tmp_path / "again"
    assert run_cli("simulate", "--scenario", 1, *TINY_SIM,
                   "--seed", 1, "--out", again) == 0
    for name in ("subjects.csv", "visits.csv", "scenario.json"):
        assert (again / name).read_bytes() == (sim_dir / name).read_bytes()


def test_simulate_rejects_both_sources(tmp_path, capsys):
    assert run_cli("simulate", "--scenario", 1, "--config", "cfg.json",
                   "--out", tmp_path) == 1
    assert "not both" in capsys.readouterr().err


def test_fit_draws_schema(draws_csv, sim_dir):
    frame = pd.read_csv(draws_csv)
    assert len(frame) == 30
    head = ["chain", "q", "gamma_a", "gamma_x_1", "beta_a", "beta_x_1",
            "b_mu_1", "b_mu_2", "b_sd_1", "b_sd_2", "rho_b", "sigma2"]
    assert list(frame.columns)[:len(head)] == head
    ds = load_dataset(sim_dir)
    for i in ds.censored_indices():
        assert f"t_miss_{ds.subjects[i].id}" in frame.columns
    assert "b1_0" in frame.columns and "b2_0" in frame.columns

    manifest = json.loads((draws_csv.parent / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    summary = manifest["sampler_summary"]
    assert {"accept_mean", "divergences", "divergences_warmup", "step_size",
            "rhat_max", "ess_bulk_min"} <= set(summary)


def test_draws_csv_round_trip_is_exact(tmp_path):
    cfg = ScenarioConfig.for_scenario(1, n_subjects=24, target_events=4)
    ds = generate_trial(cfg, seed=2)
    draws = run_chain(ds, cfg=SamplerConfig(q_total=25, warmup=80, seed=5))
    path = tmp_path / "draws.csv"
    write_draws_csv(path, ds, [draws])
    back = read_draws_csv(path, ds)
    for name in ("gamma_a", "gamma_x", "beta_a", "beta_x", "b", "b_mu",
                 "sigma_b", "rho_b", "sigma2", "t_miss"):
        np.testing.assert_array_equal(getattr(back, name), getattr(draws, name),
                                      err_msg=name)
    np.testing.assert_array_equal(back.cens_indices, draws.cens_indices)


def test_read_draws_requires_subject_effects(tmp_path):
    cfg = ScenarioConfig.for_scenario(1, n_subjects=24, target_events=4)
    ds = generate_trial(cfg, seed=2)
    draws = run_chain(ds, cfg=SamplerConfig(q_total=10, warmup=80, seed=5))
    path = tmp_path / "slim.csv"
    write_draws_csv(path, ds, [draws], include_b=False)
    with pytest.raises(ValueError, match="omit-b"):
        read_draws_csv(path, ds)


def test_analyze_artifacts(draws_csv, sim_dir, tmp_path):
    out = tmp_path / "analysis"
    assert run_cli("analyze", "--draws", draws_csv, "--data", sim_dir,
                   "--seed", 4, "--out", out) == 0
    tests = pd.read_csv(out / "tests.csv")
    assert list(tests["kind"]) == ["tb", "s", "total"]
    assert set(tests.columns) >= {"kind", "theta_hat", "se", "w", "p_value",
                                  "reject", "alpha", "direction"}

    endpoints = pd.read_csv(out / "endpoints.csv")
    assert len(endpoints) == 30 * 24
    np.testing.assert_allclose(endpoints["u"],
                               endpoints["tbauc"] + endpoints["sauc"],
                               rtol=0, atol=1e-9)

    km = pd.read_csv(out / "km.csv")
    assert set(km["arm"]) <= {0, 1}
    for _, arm_rows in km.groupby("arm"):
        assert np.all(np.diff(arm_rows["survival"]) <= 1e-12)

    spaghetti = pd.read_csv(out / "spaghetti.csv")
    assert {"id", "arm", "t", "y"} == set(spaghetti.columns)
    baseline = spaghetti[spaghetti["t"] == 0.0]
    assert len(baseline) == 24

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "analyze"


def test_analyze_accepts_tests_csv_path(draws_csv, sim_dir, tmp_path):
    target = tmp_path / "only" / "tests.csv"
    assert run_cli("analyze", "--draws", draws_csv, "--data", sim_dir,
                   "--out", target) == 0
    assert target.exists()


def test_replicate_and_report(tmp_path):
    study = tmp_path / "study"
    assert run_cli("replicate", "--scenario", 1, "--reps", 2, *TINY_SIM,
                   *TINY_FIT, "--seed", 0, "--out", study) == 0
    names = {p.name for p in study.iterdir()}
    assert {"study.json", "replications", "table3.csv", "tableA.csv",
            "summary.txt", "manifest.json"} <= names
    reps = sorted(p.name for p in (study / "replications").iterdir())
    assert reps == ["rep_00000.json", "rep_00001.json"]

    table3 = pd.read_csv(study / "table3.csv")
    assert list(table3.columns) == ["kind", "scenario_1"]
    table_a = pd.read_csv(study / "tableA.csv")
    assert len(table_a) == 9

    rendered = tmp_path / "rendered"
    assert run_cli("report", "--in", study, "--out", rendered) == 0
    assert (rendered / "summary.txt").read_text() == \
        (study / "summary.txt").read_text()
    assert (rendered / "table3.csv").read_bytes() == \
        (study / "table3.csv").read_bytes()


def test_exit_codes_for_user_errors(tmp_path, capsys):
    assert run_cli("simulate", "--bogus-flag", "--out", tmp_path) == 1
    assert "usage" in capsys.readouterr().err.lower()

    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"n_subjects": 10, "bogus_key": 1}))
    assert run_cli("simulate", "--config", bad_cfg, "--out", tmp_path) == 1
    assert "bogus_key" in capsys.readouterr().err

    missing = tmp_path / "nowhere"
    assert run_cli("fit", "--data", missing, "--out", tmp_path / "d.csv") == 1
    err = capsys.readouterr().err
    assert "subjects.csv" in err or "nowhere" in err
