"""Command-line surface over simulation, fitting, analysis, and studies.

Five subcommands cover the pipeline: ``simulate`` writes a trial to CSV,
``fit`` samples the posterior and stores draws, ``analyze`` turns draws
into endpoint tests and figure data, ``replicate`` runs a whole operating-
characteristics study, and ``report`` re-renders a study directory.  Every
run writes a ``manifest.json`` that echoes the fully resolved
configuration and seeds, so any artifact can be regenerated from its
manifest alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .datagen import ScenarioConfig, generate_trial
from .domain import PosteriorDraws, TrialDataset, load_dataset, save_dataset
from .endpoint import compute_endpoints, kaplan_meier
from .inference import full_analysis
from .likelihood import PriorSpec
from .montecarlo import (ReplicationResult, StudyConfig, StudyError,
                         aggregate_results, emit_tables, run_study)
from .sampler import SamplerConfig, SamplerError, diagnostics, run_chains

__all__ = ["entry", "main", "read_draws_csv", "write_draws_csv"]

log = logging.getLogger(__name__)


class _UsageError(Exception):
    """Invalid invocation or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would call sys.exit(2)
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# draws file format
# ---------------------------------------------------------------------------

_SCALAR_HEAD = ("gamma_a", "beta_a", "b_mu_1", "b_mu_2", "b_sd_1", "b_sd_2",
                "rho_b", "sigma2")


def write_draws_csv(path: str | Path, ds: TrialDataset,
                    chains: list[PosteriorDraws] | PosteriorDraws,
                    include_b: bool = True) -> Path:
    """Write retained draws as one CSV row per iteration.

    Columns: chain, q, the scalar parameters, per-subject (b1, b2) pairs
    unless ``include_b`` is off, and one t_miss column per censored subject
    (always present; the endpoint needs the imputed times downstream).
    """
    if isinstance(chains, PosteriorDraws):
        chains = [chains]
    k = ds.n_covariates
    cens = ds.censored_indices()
    frames = []
    for c, draws in enumerate(chains):
        cols: dict[str, np.ndarray] = {
            "chain": np.full(draws.q, c, dtype=int),
            "q": np.arange(draws.q, dtype=int),
            "gamma_a": draws.gamma_a,
        }
        for j in range(k):
            cols[f"gamma_x_{j + 1}"] = draws.gamma_x[:, j]
        cols["beta_a"] = draws.beta_a
        for j in range(k):
            cols[f"beta_x_{j + 1}"] = draws.beta_x[:, j]
        cols["b_mu_1"] = draws.b_mu[:, 0]
        cols["b_mu_2"] = draws.b_mu[:, 1]
        cols["b_sd_1"] = draws.sigma_b[:, 0]
        cols["b_sd_2"] = draws.sigma_b[:, 1]
        cols["rho_b"] = draws.rho_b
        cols["sigma2"] = draws.sigma2
        if include_b:
            for i, sub in enumerate(ds.subjects):
                cols[f"b1_{sub.id}"] = draws.b[:, i, 0]
                cols[f"b2_{sub.id}"] = draws.b[:, i, 1]
        for pos, i in enumerate(cens):
            cols[f"t_miss_{ds.subjects[i].id}"] = draws.t_miss[:, pos]
        frames.append(pd.DataFrame(cols))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    return path


def read_draws_csv(path: str | Path, ds: TrialDataset) -> PosteriorDraws:
    """Rebuild draws written by :func:`write_draws_csv` (chains concatenated)."""
    frame = pd.read_csv(path, float_precision="round_trip")
    k = ds.n_covariates
    wanted = list(_SCALAR_HEAD)
    wanted += [f"gamma_x_{j + 1}" for j in range(k)]
    wanted += [f"beta_x_{j + 1}" for j in range(k)]
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise ValueError(f"draws file is missing columns: {missing}")
    b_cols = [(f"b1_{sub.id}", f"b2_{sub.id}") for sub in ds.subjects]
    if any(c not in frame.columns for pair in b_cols for c in pair):
        raise ValueError("draws file has no per-subject b columns for this "
                         "dataset; rerun fit without --omit-b")
    cens = ds.censored_indices()
    t_cols = [f"t_miss_{ds.subjects[i].id}" for i in cens]
    missing_t = [c for c in t_cols if c not in frame.columns]
    if missing_t:
        raise ValueError(f"draws file is missing imputed-time columns: {missing_t}")

    q = len(frame)
    b = np.empty((q, ds.n, 2))
    for i, (c1, c2) in enumerate(b_cols):
        b[:, i, 0] = frame[c1].to_numpy()
        b[:, i, 1] = frame[c2].to_numpy()
    t_miss = (np.stack([frame[c].to_numpy() for c in t_cols], axis=1)
              if t_cols else np.empty((q, 0)))
    return PosteriorDraws(
        gamma_a=frame["gamma_a"].to_numpy(),
        gamma_x=np.stack([frame[f"gamma_x_{j + 1}"].to_numpy() for j in range(k)], axis=1),
        beta_a=frame["beta_a"].to_numpy(),
        beta_x=np.stack([frame[f"beta_x_{j + 1}"].to_numpy() for j in range(k)], axis=1),
        b=b,
        b_mu=np.stack([frame["b_mu_1"].to_numpy(), frame["b_mu_2"].to_numpy()], axis=1),
        sigma_b=np.stack([frame["b_sd_1"].to_numpy(), frame["b_sd_2"].to_numpy()], axis=1),
        rho_b=frame["rho_b"].to_numpy(),
        sigma2=frame["sigma2"].to_numpy(),
        t_miss=t_miss,
        cens_indices=cens,
    )


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_manifest(out_dir: Path, command: str, config: dict, seeds: dict,
                    artifacts: list[Path], started: float,
                    extra: dict | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "artifacts": sorted(str(p.resolve().relative_to(out_dir.resolve()))
                            for p in artifacts),
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        payload.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               default=_jsonable) + "\n")
    return path


def _load_json_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise _UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise _UsageError(f"cannot read config file {path}: {exc}") from exc


def _load_trial(data_dir: str) -> TrialDataset:
    src = Path(data_dir)
    if not (src / "subjects.csv").exists():
        raise _UsageError(f"{data_dir} does not contain subjects.csv")
    scenario = None
    if (src / "scenario.json").exists():
        scenario = ScenarioConfig.load_json(src / "scenario.json")
    return load_dataset(src, scenario=scenario)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.config and args.scenario is not None:
        raise _UsageError("pass either --scenario or --config, not both")
    if args.config:
        cfg = ScenarioConfig.from_dict(_load_json_config(args.config))
    else:
        cfg = ScenarioConfig.for_scenario(args.scenario if args.scenario else 1)
    overrides = {}
    if args.n_subjects is not None:
        overrides["n_subjects"] = args.n_subjects
    if args.target_events is not None:
        overrides["target_events"] = args.target_events
    if args.psi_scale is not None:
        overrides["psi_scale"] = args.psi_scale
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    out = Path(args.out)
    ds = generate_trial(cfg, seed=args.seed)
    subjects_csv, visits_csv = save_dataset(ds, out)
    scenario_json = out / "scenario.json"
    cfg.save_json(scenario_json)
    artifacts = [subjects_csv, visits_csv, scenario_json]
    artifacts.append(_write_manifest(out, "simulate", cfg.to_dict(),
                                     {"datagen": args.seed}, artifacts, started))
    print(f"simulate: {ds.n} subjects ({ds.n_events} events), scenario "
          f"{cfg.scenario}, written to {out}")
    return 0


def _cmd_fit(args) -> int:
    started = time.perf_counter()
    ds = _load_trial(args.data)
    base = (SamplerConfig.from_dict(_load_json_config(args.config))
            if args.config else SamplerConfig())
    overrides = {}
    for field, name in (("q_total", "q"), ("warmup", "warmup"),
                        ("leapfrog_steps", "leapfrog"),
                        ("target_accept", "target_accept"),
                        ("chains", "chains"), ("seed", "seed"),
                        ("init_jitter", "jitter")):
        value = getattr(args, name)
        if value is not None:
            overrides[field] = value
    cfg = dataclasses.replace(base, **overrides) if overrides else base

    chains = run_chains(ds, PriorSpec(), cfg)
    out_path = Path(args.out)
    if out_path.suffix != ".csv":
        out_path = out_path / "draws.csv"
    write_draws_csv(out_path, ds, chains, include_b=not args.omit_b)

    diag = diagnostics(chains)
    stats = [c.accept_stats for c in chains]
    summary = {
        "accept_mean": float(np.mean([s.accept_prob.mean() for s in stats])),
        "divergences": int(sum(s.divergent.sum() for s in stats)),
        "divergences_warmup": int(sum(s.divergences_warmup for s in stats)),
        "step_size": [s.step_size for s in stats],
        "rhat_max": float(np.nanmax(diag["rhat"].to_numpy())),
        "ess_bulk_min": float(np.nanmin(diag["ess_bulk"].to_numpy())),
    }
    config_echo = cfg.to_dict()
    config_echo["include_b"] = not args.omit_b
    _write_manifest(out_path.parent, "fit", config_echo, {"sampler": cfg.seed},
                    [out_path], started, extra={"sampler_summary": summary})
    print(f"fit: {sum(c.q for c in chains)} draws from {cfg.chains} chain(s) "
          f"-> {out_path} (accept {summary['accept_mean']:.2f}, "
          f"divergences {summary['divergences']}, "
          f"max split-Rhat {summary['rhat_max']:.3f})")
    return 0


def _cmd_analyze(args) -> int:
    started = time.perf_counter()
    ds = _load_trial(args.data)
    draws = read_draws_csv(args.draws, ds)

    out = Path(args.out)
    if out.suffix == ".csv":
        out_dir, tests_name = out.parent if str(out.parent) != "" else Path("."), out.name
    else:
        out_dir, tests_name = out, "tests.csv"
    out_dir.mkdir(parents=True, exist_ok=True)

    ep = compute_endpoints(ds, draws, args.gamma)
    results = full_analysis(ds, draws, alpha=args.alpha, direction=args.direction,
                            seed=args.seed, endpoints=ep)
    rows = [{"kind": kind.value, "theta_hat": res.theta_hat, "se": res.se,
             "w": res.w, "p_value": res.p_value, "reject": res.reject,
             "alpha": res.alpha, "direction": res.direction}
            for kind, res in results.items()]
    tests_frame = pd.DataFrame(rows)
    tests_csv = out_dir / tests_name
    tests_frame.to_csv(tests_csv, index=False)

    ids = np.array([sub.id for sub in ds.subjects])
    endpoints_csv = out_dir / "endpoints.csv"
    pd.DataFrame({
        "q": np.repeat(np.arange(ep.q), ds.n),
        "id": np.tile(ids, ep.q),
        "tbauc": ep.tbauc.ravel(),
        "sauc": ep.sauc.ravel(),
        "u": ep.u.ravel(),
    }).to_csv(endpoints_csv, index=False)

    km_rows = []
    for arm in (0, 1):
        members = [sub for sub in ds.subjects if sub.a == arm]
        if not members:
            continue
        km = kaplan_meier(members)
        for t, sv, risk, ev in zip(km.times, km.survival, km.at_risk, km.events):
            km_rows.append({"arm": arm, "time": t, "survival": sv,
                            "at_risk": risk, "events": ev})
    km_csv = out_dir / "km.csv"
    pd.DataFrame(km_rows, columns=["arm", "time", "survival", "at_risk", "events"]) \
        .to_csv(km_csv, index=False)

    sp_rows = {"id": [], "arm": [], "t": [], "y": []}
    for sub in ds.subjects:
        times = np.concatenate(([0.0], sub.visit_times))
        values = np.concatenate(([sub.y0], sub.y))
        sp_rows["id"].extend([sub.id] * times.size)
        sp_rows["arm"].extend([sub.a] * times.size)
        sp_rows["t"].extend(times.tolist())
        sp_rows["y"].extend(values.tolist())
    spaghetti_csv = out_dir / "spaghetti.csv"
    pd.DataFrame(sp_rows).to_csv(spaghetti_csv, index=False)

    config_echo = {"gamma_utility": args.gamma, "alpha": args.alpha,
                   "direction": args.direction, "draws": str(args.draws),
                   "data": str(args.data)}
    artifacts = [tests_csv, endpoints_csv, km_csv, spaghetti_csv]
    _write_manifest(out_dir, "analyze", config_echo, {"bootstrap": args.seed},
                    artifacts, started)
    with pd.option_context("display.float_format", "{:.6g}".format):
        print(tests_frame.to_string(index=False))
    return 0


def _cmd_replicate(args) -> int:
    started = time.perf_counter()
    base = (StudyConfig.from_dict(_load_json_config(args.config))
            if args.config else StudyConfig())
    overrides = {}
    if args.scenario is not None:
        overrides["scenario"] = args.scenario
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.gamma is not None:
        overrides["gamma_utility"] = args.gamma
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.direction is not None:
        overrides["direction"] = args.direction
    sampler_overrides = {}
    if args.q is not None:
        sampler_overrides["q_total"] = args.q
    if args.warmup is not None:
        sampler_overrides["warmup"] = args.warmup
    if sampler_overrides:
        overrides["sampler"] = dataclasses.replace(base.sampler, **sampler_overrides)
    scenario_overrides = {}
    if args.n_subjects is not None:
        scenario_overrides["n_subjects"] = args.n_subjects
    if args.target_events is not None:
        scenario_overrides["target_events"] = args.target_events
    if scenario_overrides:
        scen = base.scenario_config if base.scenario_config is not None \
            else ScenarioConfig.for_scenario(overrides.get("scenario", base.scenario))
        overrides["scenario_config"] = dataclasses.replace(scen, **scenario_overrides)
    cfg = dataclasses.replace(base, **overrides) if overrides else base

    report = run_study(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    study_json = out / "study.json"
    study_json.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True,
                                     default=_jsonable) + "\n")
    rep_dir = out / "replications"
    rep_dir.mkdir(exist_ok=True)
    artifacts = [study_json]
    for result in report.results:
        rep_path = rep_dir / f"rep_{result.rep:05d}.json"
        rep_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True,
                                       default=_jsonable) + "\n")
        artifacts.append(rep_path)
    artifacts.extend(emit_tables(report, out))
    summary = _render_summary(report)
    summary_txt = out / "summary.txt"
    summary_txt.write_text(summary + "\n")
    artifacts.append(summary_txt)
    seeds = {"master": cfg.master_seed,
             "streams": {"datagen": 0, "sampler": 1, "bootstrap": 2}}
    _write_manifest(out, "replicate", cfg.to_dict(), seeds, artifacts, started)
    print(summary)
    return 0


def _cmd_report(args) -> int:
    started = time.perf_counter()
    in_dir = Path(args.in_dir)
    study_json = in_dir / "study.json"
    if not study_json.exists():
        raise _UsageError(f"{in_dir} does not contain study.json")
    cfg = StudyConfig.from_dict(json.loads(study_json.read_text()))
    rep_paths = sorted((in_dir / "replications").glob("rep_*.json"))
    if not rep_paths:
        raise _UsageError(f"{in_dir} has no replication result files")
    results = [ReplicationResult.from_dict(json.loads(p.read_text()))
               for p in rep_paths]
    report = aggregate_results(cfg, results)

    out = Path(args.out) if args.out else in_dir
    artifacts = emit_tables(report, out)
    summary = _render_summary(report)
    summary_txt = out / "summary.txt"
    summary_txt.write_text(summary + "\n")
    artifacts.append(summary_txt)
    _write_manifest(out, "report", cfg.to_dict(),
                    {"master": cfg.master_seed}, artifacts, started)
    print(summary)
    return 0


def _render_summary(report) -> str:
    cfg = report.config
    rates = report.rejection_rates
    lines = [
        f"scenario {cfg.scenario}: {report.n_completed} of "
        f"{len(report.results)} replications completed "
        f"({report.n_failed} failed)",
        f"rejection rates (alpha={cfg.alpha}, {cfg.direction}-tailed): "
        f"tb={rates['tb']:.3f}  s={rates['s']:.3f}  total={rates['total']:.3f}",
        "",
        report.param_table.round(6).to_string(),
    ]
    done = [r for r in report.results if not r.failed]
    if done:
        lines.append("")
        lines.append(
            f"sampler: mean time {np.mean([r.runtime_s for r in done]):.1f}s, "
            f"divergent transitions {sum(r.divergences for r in done)}, "
            f"max split-Rhat {np.nanmax([r.rhat_max for r in done]):.3f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="jointauc",
                     description="Joint tumor-burden/survival endpoint toolkit")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one trial as CSV")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--config", help="scenario JSON (exclusive with --scenario)")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--target-events", type=int)
    p.add_argument("--psi-scale", choices=("event_time", "observed_span"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="sample the joint posterior")
    p.add_argument("--data", required=True, help="directory from simulate")
    p.add_argument("--config", help="sampler JSON; flags override it")
    p.add_argument("--q", type=int, help="retained draws (default 25000)")
    p.add_argument("--warmup", type=int)
    p.add_argument("--leapfrog", type=int)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--chains", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--omit-b", action="store_true",
                   help="drop per-subject b columns (draws file is then "
                        "not analyzable)")
    p.add_argument("--out", required=True, help="draws CSV path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("analyze", help="endpoint tests and figure data")
    p.add_argument("--draws", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--direction", choices=("left", "right"), default="left")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="output directory (or a tests.csv path)")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("replicate", help="run a replication study")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--reps", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--target-events", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--direction", choices=("left", "right"))
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int)
    p.add_argument("--config", help="study JSON; flags override it")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_replicate)

    p = sub.add_parser("report", help="re-render tables from a study directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", help="defaults to the input directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    """Dispatch one invocation; returns the process exit code."""
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, NotADirectoryError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SamplerError, StudyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract: exit 2, not a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    """Console-script shim."""
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
