"""Operating characteristics by replicated simulation.

Runs a small Monte Carlo study for two scenarios - an effect in both
model parts and a global null - and prints rejection rates with
parameter-recovery tables. Every replication draws its data, sampler,
and bootstrap seeds from named substreams of the master seed, so the
study is reproducible and insensitive to worker count.

At the default desk scale (25 replications, 150 subjects, short chains)
this takes about a minute; pass a replication count as the first
argument to scale it up.
"""

import sys
import tempfile
from pathlib import Path

from jointauc import SamplerConfig, ScenarioConfig, StudyConfig, emit_tables, run_study

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 25
scen_cfg = dict(n_subjects=150, target_events=36)
sampler = SamplerConfig(q_total=800, warmup=250)

reports = {}
for scenario, label in ((1, "effect in both parts"), (4, "global null")):
    cfg = StudyConfig(
        scenario=scenario, replications=reps, master_seed=scenario,
        scenario_config=ScenarioConfig.for_scenario(scenario, **scen_cfg),
        sampler=sampler)
    report = run_study(cfg)
    reports[scenario] = report
    rates = report.rejection_rates
    print(f"=== scenario {scenario} ({label}), {report.n_completed} "
          f"replications ===")
    print(f"one-sided rejection rates at alpha={cfg.alpha}: "
          f"tb={rates['tb']:.3f}  s={rates['s']:.3f}  "
          f"total={rates['total']:.3f}")
    print(report.param_table[["true", "estimate", "bias"]].round(4).to_string())
    print()

out = Path(tempfile.mkdtemp(prefix="jointauc-oc-"))
emit_tables(reports[1], out)
print(f"rejection-rate and recovery tables written to {out}")
print("(the power gap between tb and s rates narrows at the production")
print(" scale of 500 subjects, 120 events, and 2000 retained draws)")
