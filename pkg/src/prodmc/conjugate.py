"""Closed-form evidence oracle: a fully Gaussian hierarchical model.

Observations y_i = z_i + noise with per-observation latent means z_i drawn
around a global mean, everything normal:

    y_i | z_i  ~ N(z_i, obs_sd^2)
    z_i | mu   ~ N(mu, group_sd^2)
    mu         ~ N(prior_mean, prior_sd^2)

Everything is conjugate: the evidence is a multivariate normal density, the
posterior can be sampled exactly, and both evidence-estimation approaches
apply -- the joint approach keeps (mu, z) with the conditional likelihood,
the marginal approach integrates z out analytically and keeps mu alone.
That makes this model the ground-truth test bed for the estimators in
:mod:`prodmc.evidence`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evidence import BmlRun, _assemble_run

LOG_2PI = math.log(2.0 * math.pi)


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (np.asarray(x) - mean) ** 2 / var


@dataclass(frozen=True)
class ConjugateModel:
    """Gaussian location hierarchy with known variances."""

    obs: np.ndarray
    obs_sd: float = 1.0
    group_sd: float = 1.0
    prior_mean: float = 0.0
    prior_sd: float = 1.0

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.float64).copy()
        if obs.ndim != 1 or obs.size < 1:
            raise ValueError("obs must be a nonempty 1-D array")
        obs.flags.writeable = False
        object.__setattr__(self, "obs", obs)

    @property
    def n_obs(self) -> int:
        return self.obs.size

    def log_evidence(self) -> float:
        """Exact log f(Y): y is N(prior_mean * 1, (s^2 + t^2) I + t0^2 J)."""
        n = self.n_obs
        d = self.obs_sd**2 + self.group_sd**2
        t0 = self.prior_sd**2
        dev = self.obs - self.prior_mean
        # Sherman-Morrison for (d I + t0 J)^{-1} and matching determinant
        quad = (dev @ dev) / d - t0 * dev.sum() ** 2 / (d * (d + n * t0))
        logdet = n * math.log(d) + math.log1p(n * t0 / d)
        return -0.5 * (n * LOG_2PI + logdet + quad)

    def posterior_mean_moments(self) -> tuple[float, float]:
        """Mean and variance of mu | Y."""
        d = self.obs_sd**2 + self.group_sd**2
        precision = 1.0 / self.prior_sd**2 + self.n_obs / d
        mean = (self.prior_mean / self.prior_sd**2 + self.obs.sum() / d) / precision
        return mean, 1.0 / precision

    def sample_posterior(self, rng: np.random.Generator, size: int
                         ) -> tuple[np.ndarray, np.ndarray]:
        """Exact posterior draws of (mu, z); z is (size, n_obs)."""
        mean, var = self.posterior_mean_moments()
        mu = mean + math.sqrt(var) * rng.standard_normal(size)
        prec_z = 1.0 / self.obs_sd**2 + 1.0 / self.group_sd**2
        z_var = 1.0 / prec_z
        z_mean = (self.obs[None, :] / self.obs_sd**2
                  + mu[:, None] / self.group_sd**2) * z_var
        z = z_mean + math.sqrt(z_var) * rng.standard_normal((size, self.n_obs))
        return mu, z

    def log_fpi_marginal(self, mu: np.ndarray) -> np.ndarray:
        """log f(Y|mu) pi(mu) with the latent means integrated out."""
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        d = self.obs_sd**2 + self.group_sd**2
        lik = _normal_logpdf(self.obs[None, :], mu[:, None], d).sum(axis=1)
        prior = _normal_logpdf(mu, self.prior_mean, self.prior_sd**2)
        return lik + prior

    def log_fpi_joint(self, mu: np.ndarray, z: np.ndarray) -> np.ndarray:
        """log f(Y|z) pi(z|mu) pi(mu) on the augmented space."""
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        lik = _normal_logpdf(self.obs[None, :], z, self.obs_sd**2).sum(axis=1)
        layer = _normal_logpdf(z, mu[:, None], self.group_sd**2).sum(axis=1)
        prior = _normal_logpdf(mu, self.prior_mean, self.prior_sd**2)
        return lik + layer + prior


@dataclass(frozen=True)
class DiagonalGaussian:
    """Independent-normal importance density over a flat coordinate vector."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64)).copy()
        sd = np.atleast_1d(np.asarray(self.sd, dtype=np.float64)).copy()
        if mean.shape != sd.shape or np.any(sd <= 0):
            raise ValueError("mean/sd must match in shape with sd > 0")
        mean.flags.writeable = False
        sd.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean[None, :] + self.sd[None, :] * rng.standard_normal(
            (size, self.dim)
        )

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        dev = (x - self.mean[None, :]) / self.sd[None, :]
        return (-0.5 * dev**2 - np.log(self.sd)[None, :] - 0.5 * LOG_2PI).sum(axis=1)


def fit_diagonal_gaussian(draws: np.ndarray, sd_floor: float = 1e-8) -> DiagonalGaussian:
    """Moment fit of an independent-normal density to draw columns."""
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    return DiagonalGaussian(
        mean=draws.mean(axis=0),
        sd=np.maximum(draws.std(axis=0, ddof=1), sd_floor),
    )


def conjugate_estimates(
    model: ConjugateModel,
    n_draws: int,
    rng: np.random.Generator,
    n_batches: int = 50,
    methods: tuple[str, ...] = ("rm", "bh", "bg"),
    modes: tuple[str, ...] = ("joint", "marginal"),
) -> dict[tuple[str, str], BmlRun]:
    """Run the evidence estimators on exact posterior draws of the oracle.

    The importance density is moment-fitted to the draws exactly as in the
    latent trait pipeline: a normal for mu, plus one independent normal per
    latent mean in joint mode.
    """
    mu_post, z_post = model.sample_posterior(rng, n_draws)
    theta_joint = np.column_stack([mu_post, z_post])
    g_joint = fit_diagonal_gaussian(theta_joint)
    g_marg = fit_diagonal_gaussian(mu_post[:, None])

    quantities = {}
    if "joint" in modes:
        log_fpi_post = model.log_fpi_joint(mu_post, z_post)
        log_g_post = g_joint.logpdf(theta_joint)
        g_draws = g_joint.sample(rng, n_draws)
        log_fpi_g = model.log_fpi_joint(g_draws[:, 0], g_draws[:, 1:])
        log_g_g = g_joint.logpdf(g_draws)
        quantities["joint"] = (log_fpi_post, log_g_post, log_fpi_g, log_g_g)
    if "marginal" in modes:
        log_fpi_post = model.log_fpi_marginal(mu_post)
        log_g_post = g_marg.logpdf(mu_post[:, None])
        g_draws = g_marg.sample(rng, n_draws)
        log_fpi_g = model.log_fpi_marginal(g_draws[:, 0])
        log_g_g = g_marg.logpdf(g_draws)
        quantities["marginal"] = (log_fpi_post, log_g_post, log_fpi_g, log_g_g)

    runs = {}
    for mode in modes:
        log_fpi_post, log_g_post, log_fpi_g, log_g_g = quantities[mode]
        for method in methods:
            if method == "rm":
                runs[(method, mode)] = _assemble_run(
                    "rm", mode, n_batches, log_fpi_post, log_g_post
                )
            else:
                runs[(method, mode)] = _assemble_run(
                    method, mode, n_batches, log_fpi_post, log_g_post,
                    log_fpi_g, log_g_g
                )
    return runs
