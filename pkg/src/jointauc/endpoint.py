"""Composite endpoint: tumor-burden area, survival credit, and their total.

Each retained posterior draw implies, for every subject, a modeled burden
trajectory on [0, T] and an event time T (observed for events, imputed for
censored subjects).  The endpoint decomposes into the area under the burden
curve up to min(L, T) and a utility credit for survival beyond the horizon
remainder, and the two pieces add exactly.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from typing import Union

import numpy as np

from .domain import ModelParams, PosteriorDraws, SubjectRecord, TrialDataset, _frozen

__all__ = [
    "EndpointDraws",
    "KaplanMeierCurve",
    "compute_endpoints",
    "kaplan_meier",
    "mean_trajectory",
    "percent_change_transform",
    "rmst",
    "sauc",
    "tb_area",
    "tbauc",
]

# Draws are processed in bounded slabs so the transient (q, n) work arrays
# stay small even at full study scale.
_CHUNK_DRAWS = 2048


@dataclasses.dataclass(frozen=True)
class EndpointDraws:
    """Per-draw, per-subject endpoint values for one fitted trial.

    All three matrices are shaped (q, n), draw-major, and satisfy
    ``u == tbauc + sauc`` elementwise by construction.
    """

    tbauc: np.ndarray
    sauc: np.ndarray
    u: np.ndarray
    gamma_utility: float
    l: np.ndarray

    def __post_init__(self):
        for name in ("tbauc", "sauc", "u", "l"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.tbauc.shape != self.sauc.shape or self.tbauc.shape != self.u.shape:
            raise ValueError("endpoint matrices must share one (q, n) shape")
        if self.l.shape != (self.tbauc.shape[1],):
            raise ValueError("horizon vector must have one entry per subject")

    @property
    def q(self) -> int:
        return self.tbauc.shape[0]

    @property
    def n(self) -> int:
        return self.tbauc.shape[1]


def _draw_event_time(params: ModelParams, ds: TrialDataset, i: int) -> float:
    """Event time of subject ``i`` under one draw: observed if the event was
    seen, otherwise the draw's imputed time."""
    subject = ds.subjects[i]
    if subject.delta:
        return subject.s
    cens = ds.censored_indices()
    pos = int(np.searchsorted(cens, i))
    if pos >= cens.size or cens[pos] != i:
        raise ValueError(f"subject {subject.id} is not in the censored index")
    if params.t_miss.size != cens.size:
        raise ValueError("draw carries a t_miss entry count that does not "
                         "match the dataset's censored subjects")
    return float(params.t_miss[pos])


def _trajectory_level(params: ModelParams, subject: SubjectRecord) -> float:
    return float(params.beta_x @ subject.x) + params.beta_a * float(subject.a)


def mean_trajectory(params: ModelParams, ds: TrialDataset, i: int, t: float) -> float:
    """Modeled mean burden of subject ``i`` at time ``t`` under one draw.

    The trajectory is the quadratic beta_x'x + beta_a*a + b1*psi + b2*psi^2
    with psi = t / T; it is only defined on [0, T].
    """
    t_event = _draw_event_time(params, ds, i)
    if not 0.0 <= t <= t_event:
        raise ValueError(f"t={t!r} outside the trajectory support [0, {t_event!r}]")
    psi = t / t_event
    b1, b2 = params.b[i]
    return _trajectory_level(params, ds.subjects[i]) + b1 * psi + b2 * psi * psi


def tb_area(level: float, b1: float, b2: float, t_event: float, horizon: float) -> float:
    """Exact area of level + b1*(t/T) + b2*(t/T)^2 over [0, min(horizon, T)].

    Antiderivative evaluated at m = min(horizon, T):
    level*m + b1*m^2/(2T) + b2*m^3/(3T^2).
    """
    if t_event <= 0.0:
        raise ValueError("event time must be positive")
    if horizon < 0.0:
        raise ValueError("horizon must be nonnegative")
    m = min(horizon, t_event)
    return level * m + b1 * m * m / (2.0 * t_event) + b2 * m ** 3 / (3.0 * t_event ** 2)


def tbauc(params: ModelParams, ds: TrialDataset, i: int) -> float:
    """Area under subject ``i``'s modeled burden curve up to min(L, T)."""
    subject = ds.subjects[i]
    t_event = _draw_event_time(params, ds, i)
    b1, b2 = params.b[i]
    return tb_area(_trajectory_level(params, subject), float(b1), float(b2),
                   t_event, subject.l)


def sauc(t_event: float, horizon: float, gamma_utility: float) -> float:
    """Survival credit gamma * (L - T) for time lived past T within the horizon."""
    if t_event < horizon:
        return gamma_utility * (horizon - t_event)
    return 0.0


def _resolve_gamma(ds: TrialDataset, gamma_utility) -> float:
    if gamma_utility is not None:
        return float(gamma_utility)
    if ds.scenario is not None:
        return float(ds.scenario.gamma_utility)
    return 0.5


def compute_endpoints(ds: TrialDataset, draws: PosteriorDraws,
                      gamma_utility: float | None = None) -> EndpointDraws:
    """Evaluate tbauc, sauc, and their total for every (draw, subject) pair.

    Event subjects keep their observed T across draws; censored subjects use
    each draw's imputed time.  ``gamma_utility=None`` takes the generating
    scenario's value when the dataset carries one, else 0.5.
    """
    gamma = _resolve_gamma(ds, gamma_utility)
    n, q = ds.n, draws.q
    cens = ds.censored_indices()
    t_miss_cols = draws.t_miss.shape[1] if draws.t_miss.ndim == 2 else 0
    if t_miss_cols != cens.size:
        raise ValueError("draws do not carry t_miss for every censored subject")

    x = np.array([sub.x for sub in ds.subjects])
    a = np.array([float(sub.a) for sub in ds.subjects])
    l = np.array([sub.l for sub in ds.subjects])
    s_obs = np.array([sub.s for sub in ds.subjects])

    tb = np.empty((q, n))
    sa = np.empty((q, n))
    u = np.empty((q, n))
    for lo in range(0, q, _CHUNK_DRAWS):
        hi = min(lo + _CHUNK_DRAWS, q)
        level = draws.beta_x[lo:hi] @ x.T + np.outer(draws.beta_a[lo:hi], a)
        t_event = np.broadcast_to(s_obs, (hi - lo, n)).copy()
        if cens.size:
            t_event[:, cens] = draws.t_miss[lo:hi]
        if np.any(t_event <= 0.0):
            raise ValueError("event time must be positive")
        b1 = draws.b[lo:hi, :, 0]
        b2 = draws.b[lo:hi, :, 1]
        m = np.minimum(l, t_event)
        tb[lo:hi] = level * m + b1 * m * m / (2.0 * t_event) \
            + b2 * m ** 3 / (3.0 * t_event ** 2)
        sa[lo:hi] = gamma * np.maximum(l - t_event, 0.0)
        u[lo:hi] = tb[lo:hi] + sa[lo:hi]
    return EndpointDraws(tbauc=tb, sauc=sa, u=u, gamma_utility=gamma, l=l)


def percent_change_transform(ds: TrialDataset) -> TrialDataset:
    """Replace every visit measurement by its relative change from baseline.

    One-way: applying it twice rescales by the already-transformed baseline
    and is not the identity.
    """
    subjects = []
    for subject in ds.subjects:
        if subject.y0 == 0.0:
            raise ValueError(f"subject {subject.id}: baseline burden is zero")
        y = (subject.y - subject.y0) / subject.y0
        subjects.append(dataclasses.replace(subject, y=y))
    return dataclasses.replace(ds, subjects=tuple(subjects))


@dataclasses.dataclass(frozen=True)
class KaplanMeierCurve:
    """Product-limit survival estimate, right-continuous in time."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times))
        object.__setattr__(self, "survival", _frozen(self.survival))
        object.__setattr__(self, "at_risk", _frozen(self.at_risk, dtype=int))
        object.__setattr__(self, "events", _frozen(self.events, dtype=int))

    def survival_at(self, t):
        """Step-function value S(t); S is 1 before the first event time."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate(([1.0], self.survival))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out


def kaplan_meier(data: Union[TrialDataset, Sequence[SubjectRecord]]) -> KaplanMeierCurve:
    """Product-limit estimate from (s, delta); censoring ties stay at risk."""
    subjects = data.subjects if isinstance(data, TrialDataset) else tuple(data)
    if not subjects:
        raise ValueError("at least one subject required")
    s = np.array([sub.s for sub in subjects])
    event = np.array([bool(sub.delta) for sub in subjects])
    times = np.unique(s[event])
    at_risk = np.array([int(np.sum(s >= t)) for t in times], dtype=int)
    events = np.array([int(np.sum(s[event] == t)) for t in times], dtype=int)
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = 1.0 - events / at_risk
    survival = np.cumprod(factors)
    return KaplanMeierCurve(times=times, survival=survival,
                            at_risk=at_risk, events=events)


def rmst(km: KaplanMeierCurve, t_star: float) -> float:
    """Area under the survival step function on [0, t_star]."""
    if t_star < 0.0:
        raise ValueError("restriction time must be nonnegative")
    inside = km.times[km.times < t_star]
    heights = np.concatenate(([1.0], km.survival[: inside.size]))
    edges = np.concatenate(([0.0], inside, [t_star]))
    return float(np.sum(np.diff(edges) * heights))
