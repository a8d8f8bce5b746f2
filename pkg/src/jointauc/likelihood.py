"""Joint log density of the survival / tumor-burden model.

The model couples an exponential survival time with a subject-specific
quadratic tumor-burden trajectory expressed in scaled time psi = t / T,
where T is the subject's event time. For censored subjects the event
time is unknown, so it enters the parameter vector as an augmented
quantity constrained above the observed censoring time.

Everything the sampler needs lives in :class:`JointDensity`: packing of
the natural parameters into one unconstrained vector, the log posterior
(likelihood + random-effect density + priors + change-of-variable
terms), and its analytic gradient, computed together in a single pass
over the data.

Unconstrained layout, in order:

    gamma_a | gamma_x (k) | beta_a | beta_x (k) | b (n*2, row per
    subject) | b_mu (2) | log sigma_b (2) | atanh rho_b | log sigma2 |
    log(t_miss - s) (one per censored subject)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .domain import ModelParams, TrialDataset

__all__ = [
    "PriorSpec",
    "JointDensity",
    "log_likelihood",
    "log_posterior",
    "grad_log_posterior",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Scales of the weakly informative priors.

    Regression coefficients (both hazard and tumor burden) get
    Normal(0, coef_scale^2); the random-effect hypermeans get
    Normal(0, b_mu_scale^2); the three standard deviations (two
    random-effect spreads and the residual sigma) get half-Normal
    with scale ``sd_scale``; the correlation is uniform on (-1, 1).
    """

    coef_scale: float = 10.0
    b_mu_scale: float = 20.0
    sd_scale: float = 5.0

    def __post_init__(self):
        if self.coef_scale <= 0 or self.b_mu_scale <= 0 or self.sd_scale <= 0:
            raise ValueError("prior scales must be strictly positive")


class JointDensity:
    """Log posterior and gradient for one dataset, on the unconstrained scale.

    Construction precomputes flat visit-level design arrays so that
    repeated density evaluations cost a fixed set of vectorized
    operations. Instances are read-only after construction and safe to
    share across threads.
    """

    def __init__(self, ds: TrialDataset, prior: PriorSpec | None = None,
                 n_covariates: int | None = None):
        self.prior = prior if prior is not None else PriorSpec()
        self.n = ds.n
        k = n_covariates if n_covariates is not None else ds.n_covariates
        self.k = k

        self.x = np.array([sub.x for sub in ds.subjects], dtype=float).reshape(self.n, k)
        self.a = np.array([sub.a for sub in ds.subjects], dtype=float)
        self.s = np.array([sub.s for sub in ds.subjects], dtype=float)
        self.delta = np.array([sub.delta for sub in ds.subjects], dtype=int)
        self.cens_idx = np.flatnonzero(self.delta == 0)
        self.n_cens = self.cens_idx.size
        self.s_cens = self.s[self.cens_idx]

        vs, vt, vy = [], [], []
        for i, sub in enumerate(ds.subjects):
            vs.extend([i] * sub.n_visits)
            vt.extend(sub.visit_times)
            vy.extend(sub.y)
        self.visit_subject = np.array(vs, dtype=np.intp)
        self.visit_t = np.array(vt, dtype=float)
        self.visit_y = np.array(vy, dtype=float)
        self.n_visits = self.visit_t.size
        self.a_vis = self.a[self.visit_subject] if self.n_visits else np.empty(0)
        self.x_vis = self.x[self.visit_subject] if self.n_visits else np.empty((0, k))

        # Slice map of the unconstrained vector.
        pos = 0
        self.i_gamma_a = pos; pos += 1
        self.sl_gamma_x = slice(pos, pos + k); pos += k
        self.i_beta_a = pos; pos += 1
        self.sl_beta_x = slice(pos, pos + k); pos += k
        self.sl_b = slice(pos, pos + 2 * self.n); pos += 2 * self.n
        self.sl_b_mu = slice(pos, pos + 2); pos += 2
        self.sl_log_sigma_b = slice(pos, pos + 2); pos += 2
        self.i_atanh_rho = pos; pos += 1
        self.i_log_sigma2 = pos; pos += 1
        self.sl_log_tgap = slice(pos, pos + self.n_cens); pos += self.n_cens
        self.dim = pos

    # -- packing -----------------------------------------------------------

    def pack(self, params: ModelParams) -> np.ndarray:
        """Map natural-scale parameters to the unconstrained vector."""
        theta = np.empty(self.dim)
        theta[self.i_gamma_a] = params.gamma_a
        theta[self.sl_gamma_x] = params.gamma_x
        theta[self.i_beta_a] = params.beta_a
        theta[self.sl_beta_x] = params.beta_x
        theta[self.sl_b] = np.asarray(params.b, dtype=float).reshape(-1)
        theta[self.sl_b_mu] = params.b_mu
        theta[self.sl_log_sigma_b] = np.log(params.sigma_b)
        theta[self.i_atanh_rho] = np.arctanh(params.rho_b)
        theta[self.i_log_sigma2] = np.log(params.sigma2)
        theta[self.sl_log_tgap] = np.log(np.asarray(params.t_miss, dtype=float) - self.s_cens)
        return theta

    def unpack(self, theta: np.ndarray) -> ModelParams:
        """Map an unconstrained vector back to natural-scale parameters."""
        theta = np.asarray(theta, dtype=float)
        return ModelParams(
            gamma_a=float(theta[self.i_gamma_a]),
            gamma_x=theta[self.sl_gamma_x].copy(),
            beta_a=float(theta[self.i_beta_a]),
            beta_x=theta[self.sl_beta_x].copy(),
            b=theta[self.sl_b].reshape(self.n, 2).copy(),
            b_mu=theta[self.sl_b_mu].copy(),
            sigma_b=np.exp(theta[self.sl_log_sigma_b]),
            rho_b=float(np.tanh(theta[self.i_atanh_rho])),
            sigma2=float(np.exp(theta[self.i_log_sigma2])),
            t_miss=self.s_cens + np.exp(theta[self.sl_log_tgap]),
        )

    # -- densities ---------------------------------------------------------

    def log_likelihood(self, params: ModelParams) -> float:
        """Data log likelihood at natural-scale parameters.

        Sums the exponential survival contribution of every subject
        (augmented event times standing in for censored ones) and the
        Gaussian visit-level tumor-burden contributions. The
        random-effect density and all priors are excluded.
        """
        t_event = self.s.copy()
        t_event[self.cens_idx] = params.t_miss
        eta = self.x @ params.gamma_x + params.gamma_a * self.a
        lam = np.exp(eta)
        total = float(np.sum(eta) - lam @ t_event)
        if self.n_visits:
            psi = self.visit_t / t_event[self.visit_subject]
            b1 = params.b[self.visit_subject, 0]
            b2 = params.b[self.visit_subject, 1]
            mu = self.x_vis @ params.beta_x + params.beta_a * self.a_vis + b1 * psi + b2 * psi**2
            r = self.visit_y - mu
            total += -0.5 * self.n_visits * (_LOG_2PI + np.log(params.sigma2))
            total += float(-0.5 * (r @ r) / params.sigma2)
        return total

    def log_posterior(self, theta: np.ndarray) -> float:
        return self.value_and_grad(theta)[0]

    def grad_log_posterior(self, theta: np.ndarray) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Log posterior and gradient, via the compiled kernel when available."""
        if _kernels.AVAILABLE:
            theta = np.ascontiguousarray(theta, dtype=float)
            logp, grad = _kernels.logp_grad(
                theta, self.n, self.k, self.x, self.a, self.s,
                self.cens_idx, self.s_cens, self.visit_subject,
                self.visit_t, self.visit_y,
                self.prior.coef_scale, self.prior.b_mu_scale, self.prior.sd_scale,
            )
            return logp, grad
        return self.value_and_grad_reference(theta)

    def value_and_grad_reference(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Log posterior and its gradient on the unconstrained scale.

        Includes the change-of-variable terms for the log / arctanh
        transforms, so the density is with respect to Lebesgue measure
        on the unconstrained vector. Returns -inf (gradient contents
        unspecified) when the evaluation overflows.
        """
        theta = np.asarray(theta, dtype=float)
        pr = self.prior
        grad = np.zeros(self.dim)

        g_a = theta[self.i_gamma_a]
        g_x = theta[self.sl_gamma_x]
        b_a = theta[self.i_beta_a]
        b_x = theta[self.sl_beta_x]
        b = theta[self.sl_b].reshape(self.n, 2)
        b_mu = theta[self.sl_b_mu]
        u_sb = theta[self.sl_log_sigma_b]
        u_rho = theta[self.i_atanh_rho]
        u_s2 = theta[self.i_log_sigma2]
        u_tgap = theta[self.sl_log_tgap]

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            sigma_b = np.exp(u_sb)
            rho = np.tanh(u_rho)
            sigma2 = np.exp(u_s2)
            tgap = np.exp(u_tgap)

            t_event = self.s.copy()
            t_event[self.cens_idx] = self.s_cens + tgap

            # Survival: log lam - lam * T for every subject.
            eta = self.x @ g_x + g_a * self.a
            lam = np.exp(eta)
            logp = np.sum(eta) - lam @ t_event
            g_eta = 1.0 - lam * t_event
            grad[self.i_gamma_a] = g_eta @ self.a
            grad[self.sl_gamma_x] = self.x.T @ g_eta

            # Longitudinal: Gaussian visits around the subject quadratic.
            if self.n_visits:
                t_vis = t_event[self.visit_subject]
                psi = self.visit_t / t_vis
                b1 = b[self.visit_subject, 0]
                b2 = b[self.visit_subject, 1]
                mu = self.x_vis @ b_x + b_a * self.a_vis + b1 * psi + b2 * psi**2
                r = self.visit_y - mu
                rss = r @ r
                logp += -0.5 * self.n_visits * (_LOG_2PI + u_s2) - 0.5 * rss / sigma2
                w = r / sigma2
                grad[self.i_beta_a] = w @ self.a_vis
                grad[self.sl_beta_x] = self.x_vis.T @ w
                gb1 = np.bincount(self.visit_subject, weights=w * psi, minlength=self.n)
                gb2 = np.bincount(self.visit_subject, weights=w * psi**2, minlength=self.n)
                # Accumulated d logp / d T from the trajectory time scaling.
                slope = np.bincount(self.visit_subject,
                                    weights=w * (b1 * psi + 2.0 * b2 * psi**2) / t_vis,
                                    minlength=self.n)
                grad[self.i_log_sigma2] = -0.5 * self.n_visits + 0.5 * rss / sigma2
            else:
                gb1 = np.zeros(self.n)
                gb2 = np.zeros(self.n)
                slope = np.zeros(self.n)
                grad[self.i_log_sigma2] = 0.0

            # Bivariate normal random-effect density.
            one_m_r2 = 1.0 - rho * rho
            z = (b - b_mu) / sigma_b
            z1, z2 = z[:, 0], z[:, 1]
            quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_m_r2
            logp += self.n * (-_LOG_2PI - u_sb[0] - u_sb[1] - 0.5 * np.log(one_m_r2))
            logp += -0.5 * np.sum(quad)
            g1 = (z1 - rho * z2) / (sigma_b[0] * one_m_r2)
            g2 = (z2 - rho * z1) / (sigma_b[1] * one_m_r2)
            grad[self.sl_b] = np.column_stack([gb1 - g1, gb2 - g2]).reshape(-1)
            grad[self.sl_b_mu] = np.array([np.sum(g1), np.sum(g2)])
            grad[self.sl_log_sigma_b] = np.array([
                -self.n + np.sum(z1 * (z1 - rho * z2)) / one_m_r2,
                -self.n + np.sum(z2 * (z2 - rho * z1)) / one_m_r2,
            ])
            grad[self.i_atanh_rho] = self.n * rho + np.sum(z1 * z2) - rho * np.sum(quad)

            # Augmented event times: survival and trajectory both move with T.
            if self.n_cens:
                dlogp_dt = -lam[self.cens_idx] - slope[self.cens_idx]
                grad[self.sl_log_tgap] = dlogp_dt * tgap + 1.0
                logp += np.sum(u_tgap)

            # Priors and remaining change-of-variable terms.
            coef = np.concatenate(([g_a], g_x, [b_a], b_x))
            n_coef = coef.size
            logp += (-0.5 * np.sum(coef**2) / pr.coef_scale**2
                     - n_coef * (0.5 * _LOG_2PI + np.log(pr.coef_scale)))
            grad[self.i_gamma_a] -= g_a / pr.coef_scale**2
            grad[self.sl_gamma_x] -= g_x / pr.coef_scale**2
            grad[self.i_beta_a] -= b_a / pr.coef_scale**2
            grad[self.sl_beta_x] -= b_x / pr.coef_scale**2

            logp += (-0.5 * np.sum(b_mu**2) / pr.b_mu_scale**2
                     - 2.0 * (0.5 * _LOG_2PI + np.log(pr.b_mu_scale)))
            grad[self.sl_b_mu] -= b_mu / pr.b_mu_scale**2

            half_norm_const = 0.5 * np.log(2.0 / np.pi) - np.log(pr.sd_scale)
            # sigma_b components: half-normal prior plus log-Jacobian u.
            logp += np.sum(half_norm_const - 0.5 * sigma_b**2 / pr.sd_scale**2 + u_sb)
            grad[self.sl_log_sigma_b] += -(sigma_b**2) / pr.sd_scale**2 + 1.0
            # residual sd sigma = exp(u_s2 / 2): half-normal prior, Jacobian u/2 - log 2.
            logp += half_norm_const - 0.5 * sigma2 / pr.sd_scale**2 + 0.5 * u_s2 - np.log(2.0)
            grad[self.i_log_sigma2] += -0.5 * sigma2 / pr.sd_scale**2 + 0.5
            # correlation: uniform prior on (-1, 1), Jacobian log(1 - rho^2).
            logp += -np.log(2.0) + np.log(one_m_r2)
            grad[self.i_atanh_rho] += -2.0 * rho

        if not np.isfinite(logp):
            return -np.inf, grad
        return float(logp), grad


def _density(ds: TrialDataset, prior: PriorSpec | None) -> JointDensity:
    return JointDensity(ds, prior)


def log_likelihood(ds: TrialDataset, params: ModelParams) -> float:
    """Data log likelihood of ``params`` (natural scale) given ``ds``."""
    return _density(ds, None).log_likelihood(params)


def log_posterior(ds: TrialDataset, theta: np.ndarray, prior: PriorSpec | None = None) -> float:
    """Unnormalized log posterior on the unconstrained scale."""
    return _density(ds, prior).log_posterior(theta)


def grad_log_posterior(ds: TrialDataset, theta: np.ndarray, prior: PriorSpec | None = None) -> np.ndarray:
    """Analytic gradient of :func:`log_posterior`."""
    return _density(ds, prior).grad_log_posterior(theta)
