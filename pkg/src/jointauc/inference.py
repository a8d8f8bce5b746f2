"""Treatment-effect estimation and one-sided Wald tests on the endpoint.

The point estimate averages, over posterior draws, the between-arm
difference of subject means.  Its standard error comes from a Bayesian
bootstrap: each draw's difference is re-weighted with fresh Dirichlet(1)
weights per arm, and the spread of those weighted differences across draws
is the uncertainty.  Benefit lowers the endpoint, so the default test is
left-tailed.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .domain import PosteriorDraws, TrialDataset
from .endpoint import EndpointDraws, compute_endpoints

__all__ = [
    "AucKind",
    "TestResult",
    "ate_point",
    "bb_se",
    "full_analysis",
    "wald_test",
]


class AucKind(enum.Enum):
    """Which endpoint component a statistic refers to."""

    TB = "tb"
    S = "s"
    TOTAL = "total"


# Independent weight streams per component, so the three tests never share
# bootstrap draws.
_KIND_STREAM = {AucKind.TB: 0, AucKind.S: 1, AucKind.TOTAL: 2}


@dataclasses.dataclass(frozen=True)
class TestResult:
    """One Wald test on an endpoint component."""

    kind: Optional[AucKind]
    theta_hat: float
    se: float
    w: float
    p_value: float
    reject: bool
    alpha: float
    direction: str


def _component(ep: EndpointDraws, kind: AucKind) -> np.ndarray:
    if kind is AucKind.TB:
        return ep.tbauc
    if kind is AucKind.S:
        return ep.sauc
    return ep.u


def _arm_masks(ds: TrialDataset) -> tuple[np.ndarray, np.ndarray]:
    arm = np.array([sub.a for sub in ds.subjects])
    treated = arm == 1
    control = arm == 0
    if not treated.any() or not control.any():
        raise ValueError("both arms must be nonempty")
    return treated, control


def ate_point(ep: EndpointDraws, ds: TrialDataset, kind: AucKind) -> float:
    """Average over draws of (treated mean - control mean) endpoint values."""
    treated, control = _arm_masks(ds)
    values = _component(ep, kind)
    per_draw = values[:, treated].mean(axis=1) - values[:, control].mean(axis=1)
    return float(per_draw.mean())


def bb_se(ep: EndpointDraws, ds: TrialDataset, kind: AucKind, seed: int = 0) -> float:
    """Bayesian-bootstrap standard error of the between-arm difference.

    For every draw and every arm, a fresh Dirichlet(1) weight vector
    (normalized unit-rate exponentials) replaces the plain arm mean; the
    reported value is the sample standard deviation, across draws, of the
    weighted differences.  Degenerate all-equal differences give 0.0.
    """
    treated, control = _arm_masks(ds)
    values = _component(ep, kind)
    q = values.shape[0]
    if q < 2:
        raise ValueError("at least two draws required")
    rng = np.random.default_rng(np.random.SeedSequence((seed, _KIND_STREAM[kind])))
    gt = rng.standard_exponential((q, int(treated.sum())))
    gc = rng.standard_exponential((q, int(control.sum())))
    wt = gt / gt.sum(axis=1, keepdims=True)
    wc = gc / gc.sum(axis=1, keepdims=True)
    diffs = (wt * values[:, treated]).sum(axis=1) - (wc * values[:, control]).sum(axis=1)
    return float(np.sqrt(diffs.var(ddof=1)))


def wald_test(theta_hat: float, se: float, alpha: float = 0.025,
              direction: str = "left", kind: Optional[AucKind] = None) -> TestResult:
    """One-sided Wald test of theta = 0 from a point estimate and its se."""
    if se <= 0.0:
        raise ValueError("standard error must be positive")
    if direction not in ("left", "right"):
        raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    w = theta_hat / se
    if direction == "left":
        p = float(ndtr(w))
        reject = w < ndtri(alpha)
    else:
        p = float(ndtr(-w))
        reject = w > -ndtri(alpha)
    return TestResult(kind=kind, theta_hat=float(theta_hat), se=float(se),
                      w=float(w), p_value=p, reject=bool(reject),
                      alpha=alpha, direction=direction)


def full_analysis(ds: TrialDataset, draws: PosteriorDraws,
                  gamma_utility: float | None = None, alpha: float = 0.025,
                  direction: str = "left", seed: int = 0,
                  endpoints: EndpointDraws | None = None) -> dict[AucKind, TestResult]:
    """Endpoint computation plus the three component tests, keyed by kind.

    A component whose bootstrap spread is exactly zero (the survival part
    under a zero penalty, for instance) yields a non-rejecting result with
    a nan statistic instead of an error.  Pass ``endpoints`` to reuse an
    already-computed set (``gamma_utility`` is ignored then).
    """
    ep = endpoints if endpoints is not None \
        else compute_endpoints(ds, draws, gamma_utility)
    results: dict[AucKind, TestResult] = {}
    for kind in AucKind:
        theta = ate_point(ep, ds, kind)
        se = bb_se(ep, ds, kind, seed=seed)
        if se == 0.0:
            results[kind] = TestResult(kind=kind, theta_hat=float(theta), se=0.0,
                                       w=math.nan, p_value=math.nan, reject=False,
                                       alpha=alpha, direction=direction)
        else:
            results[kind] = wald_test(theta, se, alpha=alpha, direction=direction, kind=kind)
    return results
