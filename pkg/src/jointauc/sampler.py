"""Hamiltonian Monte Carlo with warmup adaptation, plus chain diagnostics.

The transition is plain fixed-length leapfrog HMC with a Metropolis
correction. Warmup interleaves dual-averaging step-size adaptation
with windowed estimation of a diagonal mass matrix: a short initial
phase adapts the step size only, then a sequence of doubling windows
each re-estimates posterior coordinate variances and restarts the
step-size averager, and a final phase polishes the step size against
the frozen mass matrix.

Initial states come from cheap moment fits (censored-exponential
Newton for the hazard coefficients, least squares for the trajectory
coefficients) rather than from the prior.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .domain import AcceptStats, PosteriorDraws, TrialDataset
from .likelihood import JointDensity, PriorSpec

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "init_state",
    "leapfrog",
    "run_chain",
    "run_chains",
    "split_rhat",
    "bulk_ess",
    "diagnostics",
]

_DIVERGENCE_ENERGY = 1000.0


class SamplerError(RuntimeError):
    """Raised when a chain degenerates (acceptance collapse, bad inputs)."""


@dataclass(frozen=True)
class SamplerConfig:
    """Tuning knobs for one HMC run.

    ``warmup=None`` uses one tenth of ``q_total``. ``q_total`` counts
    retained (post-warmup) draws.
    """

    q_total: int = 25000
    warmup: int | None = None
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    init_jitter: float = 0.1
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        if self.q_total < 1:
            raise ValueError("q_total must be positive")
        if self.warmup is not None and self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be nonnegative")
        if self.chains < 1:
            raise ValueError("chains must be positive")

    @property
    def n_warmup(self) -> int:
        return self.q_total // 10 if self.warmup is None else self.warmup

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# initial state
# ---------------------------------------------------------------------------

def _fit_hazard_coefficients(density: JointDensity, ridge_scale: float) -> np.ndarray:
    """Penalized Newton fit of (gamma_a, gamma_x) to the censored
    exponential likelihood. Concave, so undamped Newton converges."""
    z = np.column_stack([density.a, density.x])
    delta = density.delta.astype(float)
    s = density.s
    gamma = np.zeros(z.shape[1])
    prec = 1.0 / ridge_scale**2
    for _ in range(60):
        lam = np.exp(z @ gamma)
        grad = z.T @ (delta - s * lam) - gamma * prec
        hess = -(z.T * (s * lam)) @ z - prec * np.eye(z.shape[1])
        step = np.linalg.solve(hess, grad)
        gamma = gamma - step
        if np.max(np.abs(step)) < 1e-12:
            break
    return gamma


def _quad_ls(psi: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Ridge-stabilized least squares of resid on (psi, psi^2)."""
    p2 = psi * psi
    a11 = psi @ psi
    a12 = psi @ p2
    a22 = p2 @ p2
    rhs0 = psi @ resid
    rhs1 = p2 @ resid
    det = (a11 + 1e-8) * (a22 + 1e-8) - a12 * a12
    return np.array([((a22 + 1e-8) * rhs0 - a12 * rhs1) / det,
                     ((a11 + 1e-8) * rhs1 - a12 * rhs0) / det])


# Candidate event times for censored subjects, as multiples of the
# censoring time; the trajectory fit picks whichever candidate makes
# the implied subject effects look most like the population.
_T_GRID = np.array([1.02, 1.05, 1.1, 1.2, 1.35, 1.55, 1.8, 2.2, 2.8, 3.6, 5.0, 7.0, 10.0, 15.0])


def init_state(ds: TrialDataset, prior: PriorSpec | None = None,
               cfg: SamplerConfig | None = None,
               density: JointDensity | None = None) -> np.ndarray:
    """Moment-fitted starting point on the unconstrained scale.

    Event-time coefficients come from a censored-exponential fit and
    trajectory coefficients / hypermeans from least squares on the
    event subjects (whose time scale is observed). Censored subjects
    with enough visits get their augmented event time from a small
    grid search: the candidate whose implied (b1, b2) pair sits
    closest to the population cloud wins. Visit-poor censored
    subjects fall back to censoring time plus fitted mean residual
    life. Gaussian jitter of sd ``cfg.init_jitter`` is added to the
    population coefficients and hypermeans only.
    """
    prior = prior if prior is not None else PriorSpec()
    cfg = cfg if cfg is not None else SamplerConfig()
    dens = density if density is not None else JointDensity(ds, prior)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 777)))
    n, k = dens.n, dens.k

    gamma = _fit_hazard_coefficients(dens, prior.coef_scale) if n else np.zeros(1 + k)
    gamma_a, gamma_x = gamma[0], gamma[1:]
    lam_hat = np.exp(dens.x @ gamma_x + gamma_a * dens.a) if n else np.empty(0)

    t_hat = dens.s.copy()
    if dens.n_cens:
        t_hat[dens.cens_idx] = dens.s_cens + 1.0 / lam_hat[dens.cens_idx]

    beta_a, beta_x = 0.0, np.zeros(k)
    b_mu = np.zeros(2)
    b_hat = np.zeros((n, 2))
    sigma2_hat = 1.0
    sigma_b_hat = np.ones(2)
    rho_hat = 0.0
    m = dens.n_visits
    if m:
        vs = dens.visit_subject
        counts = np.bincount(vs, minlength=n)
        event_vis = dens.delta[vs] == 1
        # Population-level fit on the subjects whose time scale is known.
        rows = event_vis if event_vis.sum() >= 4 + 2 * k else np.ones(m, dtype=bool)
        psi_known = dens.visit_t / dens.s[vs]
        design = np.column_stack([dens.a_vis[rows], dens.x_vis[rows],
                                  psi_known[rows], psi_known[rows] ** 2])
        coef, *_ = np.linalg.lstsq(design, dens.visit_y[rows], rcond=None)
        beta_a = float(coef[0])
        beta_x = coef[1:1 + k].copy()
        b_mu = coef[1 + k:].copy()
        resid = dens.visit_y - dens.a_vis * beta_a - dens.x_vis @ beta_x

        b_hat[:] = b_mu
        fitted_events = []
        for i in np.flatnonzero((counts >= 2) & (dens.delta == 1)):
            sel = vs == i
            b_hat[i] = _quad_ls(psi_known[sel], resid[sel])
            fitted_events.append(i)
        if len(fitted_events) >= 3:
            cloud = b_hat[fitted_events]
            b_mu = cloud.mean(axis=0)
            spread = np.maximum(cloud.std(axis=0, ddof=1), 0.5)
        else:
            spread = np.ones(2)

        # Censored subjects: choose the event-time candidate whose
        # implied trajectory pair looks most typical.
        fitted_cens = []
        for i in np.flatnonzero((counts >= 2) & (dens.delta == 0)):
            sel = vs == i
            t_i, r_i = dens.visit_t[sel], resid[sel]
            best, best_score = None, np.inf
            for t_cand in np.append(dens.s[i] * _T_GRID, t_hat[i]):
                b_cand = _quad_ls(t_i / t_cand, r_i)
                score = float(np.sum(((b_cand - b_mu) / spread) ** 2))
                if score < best_score:
                    best, best_score = (t_cand, b_cand), score
            t_hat[i], b_hat[i] = best
            fitted_cens.append(i)

        psi_all = dens.visit_t / t_hat[vs]
        final = resid - b_hat[vs, 0] * psi_all - b_hat[vs, 1] * psi_all**2
        sigma2_hat = max(float(final @ final) / m, 1e-6)
        fitted = fitted_events + fitted_cens
        if len(fitted) >= 2:
            cloud = b_hat[fitted]
            sigma_b_hat = np.clip(cloud.std(axis=0, ddof=1), 0.05, 10.0)
            if np.all(cloud.std(axis=0) > 0):
                rho_hat = float(np.clip(np.corrcoef(cloud.T)[0, 1], -0.9, 0.9))
            b_mu = cloud.mean(axis=0)

    from .domain import ModelParams

    jitter = cfg.init_jitter
    params = ModelParams(
        gamma_a=gamma_a + jitter * rng.standard_normal(),
        gamma_x=gamma_x + jitter * rng.standard_normal(k),
        beta_a=beta_a + jitter * rng.standard_normal(),
        beta_x=beta_x + jitter * rng.standard_normal(k),
        b=b_hat,
        b_mu=b_mu + jitter * rng.standard_normal(2),
        sigma_b=sigma_b_hat,
        rho_b=rho_hat,
        sigma2=sigma2_hat,
        t_miss=t_hat[dens.cens_idx] if dens.n_cens else np.empty(0),
    )
    return dens.pack(params)


# ---------------------------------------------------------------------------
# transition
# ---------------------------------------------------------------------------

@np.errstate(over="ignore", invalid="ignore")
def leapfrog(density: JointDensity, theta: np.ndarray, momentum: np.ndarray,
             step_size: float, n_steps: int,
             inv_mass: np.ndarray | None = None,
             logp: float | None = None, grad: np.ndarray | None = None):
    """Integrate Hamilton's equations for ``n_steps`` of ``step_size``.

    Returns (theta, momentum, logp, grad) at the endpoint; logp is
    -inf if the trajectory left the support. ``inv_mass`` is the
    diagonal of the inverse mass matrix (defaults to ones).
    """
    if inv_mass is None:
        inv_mass = np.ones(density.dim)
    if logp is None or grad is None:
        logp, grad = density.value_and_grad(theta)
    q = np.array(theta, dtype=float)
    p = np.array(momentum, dtype=float)
    p += 0.5 * step_size * grad
    for step in range(n_steps):
        q += step_size * inv_mass * p
        logp, grad = density.value_and_grad(q)
        if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
            return q, p, -np.inf, grad
        p += (step_size if step < n_steps - 1 else 0.5 * step_size) * grad
    return q, p, logp, grad


def _kinetic(p: np.ndarray, inv_mass: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return 0.5 * float(p @ (inv_mass * p))


def _initial_step_size(density: JointDensity, theta: np.ndarray, inv_mass: np.ndarray,
                       rng: np.random.Generator) -> float:
    """Double / halve until a single leapfrog step lands near 50% acceptance."""
    eps = 1.0
    logp, grad = density.value_and_grad(theta)
    p = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = -logp + _kinetic(p, inv_mass)

    def accept_logprob(eps):
        _, p1, logp1, _ = leapfrog(density, theta, p, eps, 1, inv_mass, logp, grad)
        if not np.isfinite(logp1):
            return -np.inf
        return h0 - (-logp1 + _kinetic(p1, inv_mass))

    direction = 1.0 if accept_logprob(eps) > math.log(0.5) else -1.0
    for _ in range(60):
        eps_next = eps * (2.0 if direction > 0 else 0.5)
        if direction * accept_logprob(eps_next) <= direction * math.log(0.5):
            if direction < 0:
                eps = eps_next  # keep the first size back inside
            break
        eps = eps_next
        if not 1e-10 < eps < 1e6:
            break
    return eps


@dataclass
class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target accept rate."""

    target: float
    mu: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    count: int = 0
    h_bar: float = 0.0
    log_eps_bar: float = 0.0

    def update(self, accept_prob: float) -> float:
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        w = self.count ** -self.kappa
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


def _adaptation_windows(n_warmup: int) -> tuple[int, list[int], int]:
    """(initial step-size phase, variance window sizes, terminal phase)."""
    first = max(1, int(0.15 * n_warmup))
    term = max(1, int(0.10 * n_warmup))
    middle = n_warmup - first - term
    if middle < 10:
        return n_warmup, [], 0
    sizes, size, pos = [], max(5, middle // 15), 0
    while pos < middle:
        w = size if middle - (pos + size) >= 2 * size else middle - pos
        sizes.append(w)
        pos += w
        size *= 2
    return first, sizes, term


def run_chain(ds: TrialDataset, prior: PriorSpec | None = None,
              cfg: SamplerConfig | None = None, chain_id: int = 0) -> PosteriorDraws:
    """Run one adapted HMC chain and return its retained draws.

    Divergent transitions (energy error beyond 1000 or a non-finite
    density on the path) are rejected and counted. The run aborts with
    :class:`SamplerError` if the post-warmup acceptance rate drops
    below 0.1.
    """
    prior = prior if prior is not None else PriorSpec()
    cfg = cfg if cfg is not None else SamplerConfig()
    density = JointDensity(ds, prior)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, chain_id)))
    dim = density.dim

    theta = init_state(ds, prior, cfg, density=density)
    logp, grad = density.value_and_grad(theta)
    if not np.isfinite(logp):
        raise SamplerError("initial state has non-finite log posterior")

    inv_mass = np.ones(dim)
    eps = _initial_step_size(density, theta, inv_mass, rng)
    averager = _DualAveraging(target=cfg.target_accept, mu=math.log(10.0 * eps))

    n_warmup = cfg.n_warmup
    first, windows, _ = _adaptation_windows(n_warmup)
    window_ends = []
    pos = first
    for w in windows:
        pos += w
        window_ends.append(pos)
    window_samples: list[np.ndarray] = []

    q_post = cfg.q_total
    draws = np.empty((q_post, dim))
    accept_prob = np.empty(q_post)
    divergent = np.zeros(q_post, dtype=bool)
    energy = np.empty(q_post)
    divergences_warmup = 0
    accept_sum = 0.0

    for it in range(n_warmup + q_post):
        warm = it < n_warmup
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -logp + _kinetic(p0, inv_mass)
        q_new, p_new, logp_new, grad_new = leapfrog(
            density, theta, p0, eps, cfg.leapfrog_steps, inv_mass, logp, grad)
        if np.isfinite(logp_new):
            h1 = -logp_new + _kinetic(p_new, inv_mass)
            delta_h = h1 - h0
            diverged = not math.isfinite(delta_h) or delta_h > _DIVERGENCE_ENERGY
            alpha = 0.0 if diverged else min(1.0, math.exp(min(0.0, -delta_h)))
        else:
            diverged, alpha = True, 0.0
        if not diverged and rng.uniform() < alpha:
            theta, logp, grad = q_new, logp_new, grad_new

        if warm:
            eps = averager.update(alpha)
            eps = min(max(eps, 1e-10), 1e3)
            if diverged:
                divergences_warmup += 1
            if window_ends:
                if it >= first:
                    window_samples.append(theta.copy())
                if it + 1 == window_ends[0]:
                    window_ends.pop(0)
                    if len(window_samples) >= 5:
                        sample = np.asarray(window_samples)
                        var = sample.var(axis=0, ddof=1)
                        w_n = sample.shape[0]
                        inv_mass = (w_n / (w_n + 5.0)) * var + (5.0 / (w_n + 5.0)) * 1e-3
                        inv_mass = np.maximum(inv_mass, 1e-12)
                    window_samples = []
                    eps = averager.adapted
                    eps = min(max(eps, 1e-10), 1e3)
                    averager = _DualAveraging(target=cfg.target_accept, mu=math.log(10.0 * eps))
            if it + 1 == n_warmup:
                eps = averager.adapted
                eps = min(max(eps, 1e-10), 1e3)
        else:
            i = it - n_warmup
            draws[i] = theta
            accept_prob[i] = alpha
            divergent[i] = diverged
            energy[i] = h0
            accept_sum += alpha
            if (i + 1) % 200 == 0 or i + 1 == q_post:
                if accept_sum / (i + 1) < 0.1:
                    raise SamplerError(
                        f"post-warmup acceptance rate {accept_sum / (i + 1):.3f} "
                        f"below 0.1 after {i + 1} draws")

    stats = AcceptStats(
        accept_prob=accept_prob, divergent=divergent, energy=energy,
        step_size=eps, divergences_warmup=divergences_warmup,
        warmup=n_warmup, leapfrog_steps=cfg.leapfrog_steps, seed=cfg.seed,
    )
    d = density
    return PosteriorDraws(
        gamma_a=draws[:, d.i_gamma_a],
        gamma_x=draws[:, d.sl_gamma_x],
        beta_a=draws[:, d.i_beta_a],
        beta_x=draws[:, d.sl_beta_x],
        b=draws[:, d.sl_b].reshape(q_post, d.n, 2),
        b_mu=draws[:, d.sl_b_mu],
        sigma_b=np.exp(draws[:, d.sl_log_sigma_b]),
        rho_b=np.tanh(draws[:, d.i_atanh_rho]),
        sigma2=np.exp(draws[:, d.i_log_sigma2]),
        t_miss=d.s_cens + np.exp(draws[:, d.sl_log_tgap]),
        cens_indices=d.cens_idx,
        accept_stats=stats,
    )


def run_chains(ds: TrialDataset, prior: PriorSpec | None = None,
               cfg: SamplerConfig | None = None) -> list[PosteriorDraws]:
    """Run ``cfg.chains`` independent chains (distinct RNG streams)."""
    cfg = cfg if cfg is not None else SamplerConfig()
    return [run_chain(ds, prior, cfg, chain_id=c) for c in range(cfg.chains)]


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _as_chain_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction factor.

    ``x`` is (n_draws,) or (n_chains, n_draws); each chain is split in
    half. Returns nan when the draws are constant (undefined R-hat).
    """
    x = _as_chain_matrix(x)
    n = x.shape[1] // 2
    if n < 2:
        return math.nan
    halves = np.vstack([x[:, :n], x[:, x.shape[1] - n:]])
    within = halves.var(axis=1, ddof=1).mean()
    between = halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return math.nan
    var_plus = (n - 1) / n * within + between
    return math.sqrt(var_plus / within)


def _chain_autocov(z: np.ndarray) -> np.ndarray:
    """Autocovariance by FFT, normalized by chain length."""
    n = z.shape[0]
    z = z - z.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(z, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def bulk_ess(x: np.ndarray) -> float:
    """Rank-normalized effective sample size for central tendency.

    Draws are rank-normalized jointly, then the usual FFT
    autocorrelation estimate with Geyer's initial monotone sequence is
    applied. Returns nan for constant draws.
    """
    x = _as_chain_matrix(x)
    n_chains, n_draws = x.shape
    if n_draws < 4:
        return math.nan
    from scipy.stats import rankdata

    size = x.size
    rank = rankdata(x.ravel(), method="average").reshape(x.shape)
    z = ndtri((rank - 0.375) / (size + 0.25))

    acov = np.array([_chain_autocov(z[c]) for c in range(n_chains)])
    mean_var = acov[:, 0].mean() * n_draws / (n_draws - 1.0)
    var_plus = mean_var * (n_draws - 1.0) / n_draws
    if n_chains > 1:
        var_plus += z.mean(axis=1).var(ddof=1)
    if var_plus == 0.0 or not np.isfinite(var_plus):
        return math.nan

    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    # Geyer: accumulate positive, monotone-decreasing pair sums.
    pair_limit = (n_draws - 1) // 2
    tau = -1.0
    prev = math.inf
    for m in range(pair_limit):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += 2.0 * pair
    tau = max(tau, 1.0 / math.log10(size + 10.0))
    return min(size / tau, float(size))


def _scalar_series(draws: PosteriorDraws) -> dict[str, np.ndarray]:
    series: dict[str, np.ndarray] = {"gamma_a": draws.gamma_a}
    for j in range(draws.gamma_x.shape[1]):
        series[f"gamma_x_{j + 1}"] = draws.gamma_x[:, j]
    series["beta_a"] = draws.beta_a
    for j in range(draws.beta_x.shape[1]):
        series[f"beta_x_{j + 1}"] = draws.beta_x[:, j]
    series["b_mu_1"] = draws.b_mu[:, 0]
    series["b_mu_2"] = draws.b_mu[:, 1]
    series["sigma_b_1"] = draws.sigma_b[:, 0]
    series["sigma_b_2"] = draws.sigma_b[:, 1]
    series["rho_b"] = draws.rho_b
    series["sigma2"] = draws.sigma2
    return series


def diagnostics(draws: PosteriorDraws | list[PosteriorDraws]) -> pd.DataFrame:
    """Posterior summary per population-level parameter.

    Accepts one chain or a list of same-length chains; returns a frame
    indexed by parameter with mean, sd, split R-hat, and bulk ESS.
    Degenerate (constant) parameters get nan diagnostics.
    """
    chains = draws if isinstance(draws, (list, tuple)) else [draws]
    per_chain = [_scalar_series(c) for c in chains]
    rows = []
    for name in per_chain[0]:
        stack = np.vstack([sc[name] for sc in per_chain])
        rows.append({
            "parameter": name,
            "mean": float(stack.mean()),
            "sd": float(stack.std(ddof=1)),
            "rhat": split_rhat(stack),
            "ess_bulk": bulk_ess(stack),
        })
    return pd.DataFrame(rows).set_index("parameter")
