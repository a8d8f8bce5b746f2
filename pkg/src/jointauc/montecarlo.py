"""Replication studies: rejection rates and parameter recovery at scale.

A study fixes a treatment-effect scenario, generates independent trials,
fits each one, runs the three endpoint tests, and aggregates rejection
rates plus bias/MSE for the nine scalar model parameters.  Every
replication derives its generation, sampling, and bootstrap seeds from the
master seed through named sub-streams, so a study is reproducible bit for
bit regardless of how many workers execute it.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import time
import warnings
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .datagen import ScenarioConfig, generate_trial
from .domain import PosteriorDraws
from .inference import AucKind, full_analysis
from .likelihood import PriorSpec
from .sampler import SamplerConfig, SamplerError, diagnostics, run_chain

__all__ = [
    "ReplicationResult",
    "aggregate_results",
    "StudyConfig",
    "StudyError",
    "StudyReport",
    "emit_tables",
    "run_study",
]

log = logging.getLogger(__name__)

# Sub-stream labels: one independent seed family per randomness consumer.
_STREAM_DATAGEN = 0
_STREAM_SAMPLER = 1
_STREAM_BOOTSTRAP = 2

# Report rows, in table order, with their true values drawn from the scenario.
_PARAM_ORDER = ("sigma_error", "beta_a", "beta_x", "gamma_x", "gamma_a",
                "b_mu_1", "b_mu_2", "b_sd_1", "b_sd_2")

_MAX_FAILURE_FRACTION = 0.05


class StudyError(RuntimeError):
    """Raised when too many replications fail to aggregate honestly."""


def stream_seed(master_seed: int, stream: int, rep: int) -> int:
    """Derive one worker seed from (master, sub-stream, replication)."""
    ss = np.random.SeedSequence((master_seed, stream, rep))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclasses.dataclass(frozen=True)
class StudyConfig:
    """One replication study: scenario, scale, and per-replication settings."""

    scenario: int = 1
    replications: int = 1000
    sampler: SamplerConfig = dataclasses.field(default_factory=SamplerConfig)
    gamma_utility: float = 0.5
    alpha: float = 0.025
    direction: str = "left"
    master_seed: int = 0
    workers: int = 1
    scenario_config: Optional[ScenarioConfig] = None

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ValueError(f"scenario must be 1..4, got {self.scenario}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.direction not in ("left", "right"):
            raise ValueError("direction must be 'left' or 'right'")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.gamma_utility < 0.0:
            raise ValueError("gamma_utility must be nonnegative")

    def resolved_scenario(self) -> ScenarioConfig:
        """Generating configuration: the explicit override or the table default."""
        if self.scenario_config is not None:
            return self.scenario_config
        return ScenarioConfig.for_scenario(self.scenario)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("sampler"), dict):
            data["sampler"] = SamplerConfig.from_dict(data["sampler"])
        if isinstance(data.get("scenario_config"), dict):
            data["scenario_config"] = ScenarioConfig.from_dict(data["scenario_config"])
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class ReplicationResult:
    """Everything recorded about one replication."""

    rep: int
    datagen_seed: int
    sampler_seed: int
    bootstrap_seed: int
    failed: bool = False
    message: str = ""
    estimates: Optional[dict] = None
    theta: Optional[dict] = None
    se: Optional[dict] = None
    p_value: Optional[dict] = None
    reject: Optional[dict] = None
    divergences: int = 0
    divergences_warmup: int = 0
    accept_mean: float = float("nan")
    rhat_max: float = float("nan")
    ess_min: float = float("nan")
    runtime_s: float = float("nan")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationResult":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown replication fields: {sorted(extra)}")
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class StudyReport:
    """Aggregated study output plus per-replication metadata."""

    config: StudyConfig
    rejection_rates: dict
    param_table: pd.DataFrame
    results: tuple[ReplicationResult, ...]

    @property
    def n_completed(self) -> int:
        return sum(1 for r in self.results if not r.failed)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.results if r.failed)


def true_parameter_values(scen: ScenarioConfig) -> dict:
    """The nine reported parameters' generating values, in table order."""
    return {
        "sigma_error": float(np.sqrt(scen.sigma2_eps)),
        "beta_a": scen.beta_a,
        "beta_x": scen.beta_x,
        "gamma_x": scen.gamma_x,
        "gamma_a": scen.gamma_a,
        "b_mu_1": scen.b1_mean,
        "b_mu_2": scen.b2_mean,
        "b_sd_1": float(np.sqrt(scen.b1_var)),
        "b_sd_2": float(np.sqrt(scen.b2_var)),
    }


def posterior_estimates(draws: PosteriorDraws) -> dict:
    """Posterior-mean point estimates of the nine reported parameters."""
    return {
        "sigma_error": float(np.mean(np.sqrt(draws.sigma2))),
        "beta_a": float(np.mean(draws.beta_a)),
        "beta_x": float(np.mean(draws.beta_x[:, 0])),
        "gamma_x": float(np.mean(draws.gamma_x[:, 0])),
        "gamma_a": float(np.mean(draws.gamma_a)),
        "b_mu_1": float(np.mean(draws.b_mu[:, 0])),
        "b_mu_2": float(np.mean(draws.b_mu[:, 1])),
        "b_sd_1": float(np.mean(draws.sigma_b[:, 0])),
        "b_sd_2": float(np.mean(draws.sigma_b[:, 1])),
    }


def run_replication(cfg: StudyConfig, rep: int) -> ReplicationResult:
    """Generate, fit, and test one replication; failures are recorded, not raised."""
    seeds = {
        "datagen_seed": stream_seed(cfg.master_seed, _STREAM_DATAGEN, rep),
        "sampler_seed": stream_seed(cfg.master_seed, _STREAM_SAMPLER, rep),
        "bootstrap_seed": stream_seed(cfg.master_seed, _STREAM_BOOTSTRAP, rep),
    }
    t0 = time.perf_counter()
    try:
        ds = generate_trial(cfg.resolved_scenario(), seed=seeds["datagen_seed"])
        sampler_cfg = dataclasses.replace(cfg.sampler, seed=seeds["sampler_seed"])
        draws = run_chain(ds, PriorSpec(), sampler_cfg)
        tests = full_analysis(ds, draws, gamma_utility=cfg.gamma_utility,
                              alpha=cfg.alpha, direction=cfg.direction,
                              seed=seeds["bootstrap_seed"])
    except (SamplerError, ValueError) as exc:
        return ReplicationResult(rep=rep, failed=True, message=str(exc),
                                 runtime_s=time.perf_counter() - t0, **seeds)
    diag = diagnostics(draws)
    stats = draws.accept_stats
    return ReplicationResult(
        rep=rep,
        failed=False,
        estimates=posterior_estimates(draws),
        theta={k.value: tests[k].theta_hat for k in AucKind},
        se={k.value: tests[k].se for k in AucKind},
        p_value={k.value: tests[k].p_value for k in AucKind},
        reject={k.value: tests[k].reject for k in AucKind},
        divergences=int(stats.divergent.sum()),
        divergences_warmup=stats.divergences_warmup,
        accept_mean=float(stats.accept_prob.mean()),
        rhat_max=float(np.nanmax(diag["rhat"].to_numpy())),
        ess_min=float(np.nanmin(diag["ess_bulk"].to_numpy())),
        runtime_s=time.perf_counter() - t0,
        **seeds,
    )


def aggregate_results(cfg: StudyConfig,
                      results: Sequence[ReplicationResult]) -> StudyReport:
    """Sort, screen, and average raw replication results into a report."""
    results = tuple(sorted(results, key=lambda r: r.rep))
    failed = [r for r in results if r.failed]
    completed = [r for r in results if not r.failed]
    for r in failed:
        warnings.warn(f"replication {r.rep} failed and is excluded: {r.message}")
    if len(failed) > _MAX_FAILURE_FRACTION * len(results):
        raise StudyError(
            f"{len(failed)} of {len(results)} replications failed, above the "
            f"{_MAX_FAILURE_FRACTION:.0%} tolerance")
    if not completed:
        raise StudyError("no replication completed")

    rates = {kind.value: float(np.mean([r.reject[kind.value] for r in completed]))
             for kind in AucKind}
    truth = true_parameter_values(cfg.resolved_scenario())
    rows = []
    for name in _PARAM_ORDER:
        est = np.array([r.estimates[name] for r in completed])
        rows.append({
            "parameter": name,
            "true": truth[name],
            "estimate": float(est.mean()),
            "bias": float(est.mean() - truth[name]),
            "mse": float(np.mean((est - truth[name]) ** 2)),
        })
    table = pd.DataFrame(rows).set_index("parameter")
    return StudyReport(config=cfg, rejection_rates=rates,
                       param_table=table, results=results)


def run_study(cfg: StudyConfig) -> StudyReport:
    """Run every replication (optionally in parallel) and aggregate.

    The aggregate is a deterministic function of (config, master_seed): the
    per-replication work never depends on the worker pool, and results are
    reassembled in replication order before any averaging.
    """
    reps = range(cfg.replications)
    if cfg.workers == 1:
        results = []
        for rep in reps:
            results.append(run_replication(cfg, rep))
            log.info("replication %d/%d done (%.1fs)", rep + 1,
                     cfg.replications, results[-1].runtime_s)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(run_replication, cfg, rep): rep for rep in reps}
            results = []
            for fut in concurrent.futures.as_completed(futures):
                results.append(fut.result())
                log.info("replication %d/%d done (%.1fs)", len(results),
                         cfg.replications, results[-1].runtime_s)
    return aggregate_results(cfg, results)


def emit_tables(reports: Union[StudyReport, Sequence[StudyReport]],
                out_dir: Union[str, Path]) -> list[Path]:
    """Write rejection-rate and parameter-recovery tables as CSV.

    table3.csv has one row per test kind and one column per scenario;
    tableA.csv stacks the nine-parameter recovery block of each scenario.
    """
    if isinstance(reports, StudyReport):
        reports = [reports]
    reports = sorted(reports, key=lambda r: r.config.scenario)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rates = pd.DataFrame(
        {f"scenario_{r.config.scenario}": [r.rejection_rates[k.value] for k in AucKind]
         for r in reports},
        index=pd.Index([k.value for k in AucKind], name="kind"))
    table3 = out_dir / "table3.csv"
    rates.to_csv(table3)

    blocks = []
    for r in reports:
        block = r.param_table.reset_index()
        block.insert(0, "scenario", r.config.scenario)
        blocks.append(block)
    table_a = out_dir / "tableA.csv"
    pd.concat(blocks, ignore_index=True).to_csv(table_a, index=False)
    return [table3, table_a]
