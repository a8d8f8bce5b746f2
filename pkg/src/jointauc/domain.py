"""Core data model for joint tumor-burden / survival trials.

Defines the immutable record types shared by every other module
(subjects, datasets, model parameters, posterior draws), structural
validation, and the two-file CSV persistence format.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np
import pandas as pd

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, type hints only
    from .datagen import ScenarioConfig

__all__ = [
    "SubjectRecord",
    "TrueState",
    "TrialDataset",
    "ModelParams",
    "AcceptStats",
    "PosteriorDraws",
    "validate_dataset",
    "validate_params",
    "save_dataset",
    "load_dataset",
    "datasets_equal",
]


def _frozen(values, dtype=float) -> np.ndarray:
    """Copy ``values`` into a read-only ndarray."""
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One enrolled subject.

    Parameters
    ----------
    id : int
        Unique subject identifier.
    x : ndarray, shape (k,)
        Baseline covariates.
    a : int
        Treatment arm indicator (1 = experimental, 0 = control).
    enroll_time : float
        Calendar enrollment time in days.
    y0 : float
        Baseline tumor-burden measurement at study-entry time 0.
    visit_times : ndarray, shape (n_i,)
        Post-baseline visit times in days since enrollment, strictly
        increasing, all before the observed time ``s``.
    y : ndarray, shape (n_i,)
        Tumor-burden measurements at ``visit_times``.
    s : float
        Observed time: event time when ``delta == 1``, censoring time
        otherwise.
    delta : int
        Event indicator (1 = death observed, 0 = censored).
    l : float
        Administrative follow-up horizon for this subject (study stop
        minus enrollment).
    """

    id: int
    x: np.ndarray
    a: int
    enroll_time: float
    y0: float
    visit_times: np.ndarray
    y: np.ndarray
    s: float
    delta: int
    l: float

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(np.atleast_1d(self.x)))
        object.__setattr__(self, "visit_times", _frozen(np.atleast_1d(self.visit_times) if np.size(self.visit_times) else np.empty(0)))
        object.__setattr__(self, "y", _frozen(np.atleast_1d(self.y) if np.size(self.y) else np.empty(0)))

    @property
    def n_visits(self) -> int:
        return self.visit_times.size


@dataclass(frozen=True, eq=False)
class TrueState:
    """Latent simulation truth retained alongside a generated dataset.

    ``t_true`` and ``c_true`` are the uncensored event and censoring
    times; ``b`` holds the subject-level trajectory coefficients, one
    (linear, quadratic) pair per row.
    """

    t_true: np.ndarray
    c_true: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t_true", _frozen(self.t_true))
        object.__setattr__(self, "c_true", _frozen(self.c_true))
        object.__setattr__(self, "b", _frozen(self.b))


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """A complete trial: subjects plus provenance.

    ``scenario`` echoes the generating configuration when the dataset
    came from the simulator; datasets loaded from CSV may carry None.
    ``truth`` is present for simulated data only.
    """

    subjects: tuple[SubjectRecord, ...]
    scenario: Optional["ScenarioConfig"] = None
    seed: int = 0
    truth: Optional[TrueState] = None

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def n_covariates(self) -> int:
        return self.subjects[0].x.size if self.subjects else 1

    @property
    def n_events(self) -> int:
        return sum(sub.delta for sub in self.subjects)

    def censored_indices(self) -> np.ndarray:
        """Indices of censored subjects, in dataset order."""
        return np.array([i for i, sub in enumerate(self.subjects) if sub.delta == 0], dtype=int)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """One full parameter configuration on the natural (constrained) scale.

    ``b`` has one (linear, quadratic) pair per subject; ``t_miss``
    carries the augmented event times of censored subjects, in dataset
    order of the censored subjects. Positivity / correlation-range
    constraints are expected but not enforced here; see
    :func:`validate_params`.
    """

    gamma_a: float
    gamma_x: np.ndarray
    beta_a: float
    beta_x: np.ndarray
    b: np.ndarray
    b_mu: np.ndarray
    sigma_b: np.ndarray
    rho_b: float
    sigma2: float
    t_miss: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma_x", _frozen(np.atleast_1d(self.gamma_x)))
        object.__setattr__(self, "beta_x", _frozen(np.atleast_1d(self.beta_x)))
        object.__setattr__(self, "b", _frozen(self.b))
        object.__setattr__(self, "b_mu", _frozen(self.b_mu))
        object.__setattr__(self, "sigma_b", _frozen(self.sigma_b))
        object.__setattr__(self, "t_miss", _frozen(np.atleast_1d(self.t_miss) if np.size(self.t_miss) else np.empty(0)))


@dataclass(frozen=True, eq=False)
class AcceptStats:
    """Per-draw sampler metadata for one retained chain."""

    accept_prob: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: float
    divergences_warmup: int
    warmup: int
    leapfrog_steps: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "accept_prob", _frozen(self.accept_prob))
        object.__setattr__(self, "divergent", _frozen(self.divergent, dtype=bool))
        object.__setattr__(self, "energy", _frozen(self.energy))


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained posterior draws, stored columnar.

    Arrays are indexed draw-first: ``gamma_x[q]`` is the covariate
    log-hazard coefficient vector of draw ``q``, ``b[q, i]`` the
    subject-``i`` trajectory pair, ``t_miss[q]`` the augmented event
    times for the censored subjects listed in ``cens_indices``.
    """

    gamma_a: np.ndarray
    gamma_x: np.ndarray
    beta_a: np.ndarray
    beta_x: np.ndarray
    b: np.ndarray
    b_mu: np.ndarray
    sigma_b: np.ndarray
    rho_b: np.ndarray
    sigma2: np.ndarray
    t_miss: np.ndarray
    cens_indices: np.ndarray
    accept_stats: Optional[AcceptStats] = None

    def __post_init__(self):
        for name in ("gamma_a", "gamma_x", "beta_a", "beta_x", "b", "b_mu",
                     "sigma_b", "rho_b", "sigma2", "t_miss"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "cens_indices", _frozen(self.cens_indices, dtype=int))

    @property
    def q(self) -> int:
        return self.gamma_a.shape[0]

    def param_at(self, q: int) -> ModelParams:
        """Materialize draw ``q`` as a ModelParams snapshot."""
        return ModelParams(
            gamma_a=float(self.gamma_a[q]),
            gamma_x=self.gamma_x[q],
            beta_a=float(self.beta_a[q]),
            beta_x=self.beta_x[q],
            b=self.b[q],
            b_mu=self.b_mu[q],
            sigma_b=self.sigma_b[q],
            rho_b=float(self.rho_b[q]),
            sigma2=float(self.sigma2[q]),
            t_miss=self.t_miss[q] if self.t_miss.size else np.empty(0),
        )


def validate_dataset(ds: TrialDataset) -> list[str]:
    """Check structural invariants; return violation messages (empty if clean).

    Violations are returned rather than raised so callers can report
    all of them at once.
    """
    problems: list[str] = []
    ids = [sub.id for sub in ds.subjects]
    if len(set(ids)) != len(ids):
        problems.append("subject ids not unique")
    k = ds.subjects[0].x.size if ds.subjects else None
    for sub in ds.subjects:
        tag = f"subject {sub.id}: "
        if sub.x.size != k:
            problems.append(tag + "covariate length differs across subjects")
        if sub.a not in (0, 1):
            problems.append(tag + "arm indicator not 0/1")
        if sub.delta not in (0, 1):
            problems.append(tag + "event indicator not 0/1")
        if sub.s < 0:
            problems.append(tag + "negative observed time")
        if sub.l < 0:
            problems.append(tag + "negative follow-up horizon")
        if sub.s > sub.l:
            problems.append(tag + "s exceeds l")
        if sub.visit_times.size != sub.y.size:
            problems.append(tag + "visit times and measurements differ in length")
        if sub.visit_times.size:
            if np.any(np.diff(sub.visit_times) <= 0):
                problems.append(tag + "visit times not strictly increasing")
            if sub.visit_times[-1] >= sub.s:
                problems.append(tag + "visit at or after observed time s")
            if sub.visit_times[-1] > sub.l:
                problems.append(tag + "visit after follow-up horizon l")
    if ds.truth is not None:
        tr = ds.truth
        n = ds.n
        if not (tr.t_true.shape == (n,) and tr.c_true.shape == (n,) and tr.b.shape == (n, 2)):
            problems.append("truth arrays do not match subject count")
        else:
            for i, sub in enumerate(ds.subjects):
                expect_s = min(tr.t_true[i], tr.c_true[i], sub.l)
                if not np.isclose(sub.s, expect_s, rtol=1e-9, atol=1e-9):
                    problems.append(f"subject {sub.id}: s inconsistent with latent times")
                expect_delta = int(tr.t_true[i] < min(tr.c_true[i], sub.l))
                if sub.delta != expect_delta:
                    problems.append(f"subject {sub.id}: delta inconsistent with latent times")
    return problems


def validate_params(params: ModelParams, ds: Optional[TrialDataset] = None) -> list[str]:
    """Check parameter-domain invariants; return violation messages."""
    problems: list[str] = []
    if not np.all(params.sigma_b > 0):
        problems.append("sigma_b not strictly positive")
    if not -1.0 < params.rho_b < 1.0:
        problems.append("rho_b outside (-1, 1)")
    if params.sigma2 <= 0:
        problems.append("sigma2 not strictly positive")
    if params.b.ndim != 2 or params.b.shape[1] != 2:
        problems.append("b is not an (n, 2) array")
    if ds is not None:
        cens = ds.censored_indices()
        if params.t_miss.shape != (cens.size,):
            problems.append("t_miss length differs from censored-subject count")
        else:
            for pos, i in enumerate(cens):
                if params.t_miss[pos] <= ds.subjects[i].s:
                    problems.append(f"subject {ds.subjects[i].id}: t_miss not beyond observed time")
    return problems


# ---------------------------------------------------------------------------
# CSV persistence
#
# subjects.csv: one row per subject (covariates widened to x_1..x_k,
# latent truth columns present only when the dataset carries truth).
# visits.csv: one row per post-baseline visit.
# Floats are written at full repr precision so a save/load round trip
# reproduces every value exactly.
# ---------------------------------------------------------------------------

def save_dataset(ds: TrialDataset, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``subjects.csv`` and ``visits.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = ds.n_covariates
    cols: dict[str, list] = {
        "id": [], "a": [], "enroll_time": [], "y0": [], "s": [], "delta": [], "l": [],
    }
    for j in range(k):
        cols[f"x_{j + 1}"] = []
    for sub in ds.subjects:
        cols["id"].append(sub.id)
        cols["a"].append(sub.a)
        cols["enroll_time"].append(sub.enroll_time)
        cols["y0"].append(sub.y0)
        cols["s"].append(sub.s)
        cols["delta"].append(sub.delta)
        cols["l"].append(sub.l)
        for j in range(k):
            cols[f"x_{j + 1}"].append(sub.x[j])
    frame = pd.DataFrame(cols)
    if ds.truth is not None:
        frame["t_true"] = ds.truth.t_true
        frame["c_true"] = ds.truth.c_true
        frame["b1_true"] = ds.truth.b[:, 0]
        frame["b2_true"] = ds.truth.b[:, 1]
    subjects_path = out / "subjects.csv"
    frame.to_csv(subjects_path, index=False)

    rows = {"id": [], "j": [], "t_ij": [], "y_ij": []}
    for sub in ds.subjects:
        for j, (t, yv) in enumerate(zip(sub.visit_times, sub.y), start=1):
            rows["id"].append(sub.id)
            rows["j"].append(j)
            rows["t_ij"].append(t)
            rows["y_ij"].append(yv)
    visits_path = out / "visits.csv"
    pd.DataFrame(rows).to_csv(visits_path, index=False)
    return subjects_path, visits_path


def load_dataset(in_dir: str | Path, scenario: Optional["ScenarioConfig"] = None,
                 seed: int = 0) -> TrialDataset:
    """Read a dataset previously written by :func:`save_dataset`."""
    src = Path(in_dir)
    subjects_frame = pd.read_csv(src / "subjects.csv", float_precision="round_trip")
    visits_path = src / "visits.csv"
    if visits_path.exists():
        visits_frame = pd.read_csv(visits_path, float_precision="round_trip")
    else:
        visits_frame = pd.DataFrame({"id": [], "j": [], "t_ij": [], "y_ij": []})
    xcols = sorted((c for c in subjects_frame.columns if c.startswith("x_")),
                   key=lambda c: int(c.split("_")[1]))
    by_subject = {int(sid): grp.sort_values("j") for sid, grp in visits_frame.groupby("id")}
    subjects = []
    for row in subjects_frame.itertuples(index=False):
        sid = int(row.id)
        grp = by_subject.get(sid)
        if grp is None:
            times, y = np.empty(0), np.empty(0)
        else:
            times = grp["t_ij"].to_numpy(dtype=float)
            y = grp["y_ij"].to_numpy(dtype=float)
        subjects.append(SubjectRecord(
            id=sid,
            x=np.array([getattr(row, c) for c in xcols], dtype=float),
            a=int(row.a),
            enroll_time=float(row.enroll_time),
            y0=float(row.y0),
            visit_times=times,
            y=y,
            s=float(row.s),
            delta=int(row.delta),
            l=float(row.l),
        ))
    truth = None
    if "t_true" in subjects_frame.columns:
        truth = TrueState(
            t_true=subjects_frame["t_true"].to_numpy(dtype=float),
            c_true=subjects_frame["c_true"].to_numpy(dtype=float),
            b=np.column_stack([subjects_frame["b1_true"].to_numpy(dtype=float),
                               subjects_frame["b2_true"].to_numpy(dtype=float)]),
        )
    return TrialDataset(subjects=tuple(subjects), scenario=scenario, seed=seed, truth=truth)


def datasets_equal(a: TrialDataset, b: TrialDataset, rtol: float = 0.0, atol: float = 0.0) -> bool:
    """Field-by-field comparison of two datasets (subjects and truth)."""
    if a.n != b.n:
        return False

    def close(u, v):
        return np.allclose(u, v, rtol=rtol, atol=atol)

    for sa, sb in zip(a.subjects, b.subjects):
        if sa.id != sb.id or sa.a != sb.a or sa.delta != sb.delta:
            return False
        if not (close(sa.x, sb.x) and close(sa.enroll_time, sb.enroll_time)
                and close(sa.y0, sb.y0) and close(sa.s, sb.s) and close(sa.l, sb.l)):
            return False
        if sa.visit_times.size != sb.visit_times.size:
            return False
        if sa.visit_times.size and not (close(sa.visit_times, sb.visit_times) and close(sa.y, sb.y)):
            return False
    if (a.truth is None) != (b.truth is None):
        return False
    if a.truth is not None:
        if not (close(a.truth.t_true, b.truth.t_true) and close(a.truth.c_true, b.truth.c_true)
                and close(a.truth.b, b.truth.b)):
            return False
    return True
