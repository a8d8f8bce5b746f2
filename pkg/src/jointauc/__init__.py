"""Joint modeling of tumor burden and survival for composite AUC endpoints.

The package generates two-arm oncology trials, fits the joint
longitudinal-survival model by Hamiltonian Monte Carlo with data
augmentation for censored event times, turns posterior draws into
tumor-burden/survival AUC endpoints, tests treatment effects with
Bayesian-bootstrap Wald statistics, and replicates whole operating-
characteristics studies.
"""

from .datagen import ScenarioConfig, generate_trial, schoenfeld_events
from .domain import (AcceptStats, ModelParams, PosteriorDraws, SubjectRecord,
                     TrialDataset, TrueState, datasets_equal, load_dataset,
                     save_dataset, validate_dataset, validate_params)
from .endpoint import (EndpointDraws, KaplanMeierCurve, compute_endpoints,
                       kaplan_meier, mean_trajectory, percent_change_transform,
                       rmst, sauc, tb_area, tbauc)
from .inference import (AucKind, TestResult, ate_point, bb_se, full_analysis,
                        wald_test)
from .likelihood import (JointDensity, PriorSpec, grad_log_posterior,
                         log_likelihood, log_posterior)
from .montecarlo import (ReplicationResult, StudyConfig, StudyError,
                         StudyReport, aggregate_results, emit_tables,
                         run_study)
from .sampler import (SamplerConfig, SamplerError, bulk_ess, diagnostics,
                      init_state, run_chain, run_chains, split_rhat)

__version__ = "0.1.0"

__all__ = [
    "AcceptStats",
    "AucKind",
    "EndpointDraws",
    "JointDensity",
    "KaplanMeierCurve",
    "ModelParams",
    "PosteriorDraws",
    "PriorSpec",
    "ReplicationResult",
    "SamplerConfig",
    "SamplerError",
    "ScenarioConfig",
    "StudyConfig",
    "StudyError",
    "StudyReport",
    "SubjectRecord",
    "TestResult",
    "TrialDataset",
    "TrueState",
    "__version__",
    "aggregate_results",
    "ate_point",
    "bb_se",
    "bulk_ess",
    "compute_endpoints",
    "datasets_equal",
    "diagnostics",
    "emit_tables",
    "full_analysis",
    "generate_trial",
    "grad_log_posterior",
    "init_state",
    "kaplan_meier",
    "load_dataset",
    "log_likelihood",
    "log_posterior",
    "mean_trajectory",
    "percent_change_transform",
    "rmst",
    "run_chain",
    "run_chains",
    "run_study",
    "sauc",
    "save_dataset",
    "schoenfeld_events",
    "split_rhat",
    "tb_area",
    "tbauc",
    "validate_dataset",
    "validate_params",
    "wald_test",
]
