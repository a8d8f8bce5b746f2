"""From posterior draws to the composite endpoint and its tests.

For every posterior draw and subject, the tumor-burden trajectory is
integrated up to the event (observed for events, imputed for censored
subjects) or the administrative horizon, and early events add a constant
penalty Gamma per remaining day. The two areas decompose the composite
value exactly: u = tbauc + sauc. Arm contrasts are tested one-sided with
Bayesian-bootstrap standard errors.
"""

import numpy as np

from jointauc import (AucKind, SamplerConfig, ScenarioConfig, ate_point,
                      compute_endpoints, full_analysis, generate_trial,
                      run_chain)

GAMMA = 0.5  # penalty per day between an early event and the horizon

cfg = ScenarioConfig.for_scenario(1, n_subjects=150, target_events=36)
ds = generate_trial(cfg, seed=23)
draws = run_chain(ds, cfg=SamplerConfig(q_total=2000, warmup=500, seed=5))
print(f"fit: {draws.q} retained draws on {ds.n} subjects "
      f"({ds.n - ds.n_events} censored event times imputed per draw)")

ep = compute_endpoints(ds, draws, GAMMA)
print(f"\n=== decomposition (Gamma = {GAMMA}) ===")
print(f"u - (tbauc + sauc): max |gap| = "
      f"{np.max(np.abs(ep.u - (ep.tbauc + ep.sauc))):.1e} (identity)")
arm = np.array([sub.a for sub in ds.subjects], dtype=bool)
for label, mask in (("control", ~arm), ("treated", arm)):
    print(f"{label}: tumor-burden area {ep.tbauc[:, mask].mean():9.1f}   "
          f"survival penalty {ep.sauc[:, mask].mean():7.1f}   "
          f"composite {ep.u[:, mask].mean():9.1f}")

print("\n=== treatment effects (posterior-averaged arm contrasts) ===")
for kind in AucKind:
    print(f"{kind.value:>5s}: {ate_point(ep, ds, kind):+9.1f}")

print("\n=== one-sided Wald tests (benefit lowers the endpoint) ===")
results = full_analysis(ds, draws, seed=7, endpoints=ep)
for kind, res in results.items():
    print(f"{kind.value:>5s}: theta {res.theta_hat:+9.1f}   se {res.se:7.1f}   "
          f"w {res.w:+6.2f}   p {res.p_value:.4f}   "
          f"{'reject' if res.reject else 'retain'} at alpha={res.alpha}")

print("\nWith both a longitudinal and a survival benefit (scenario 1), all")
print("three contrasts come out negative; whether a single 150-subject")
print("trial crosses the one-sided threshold is a power question, which")
print("demo 04 answers by replication at the production trial size.")
