"""Binary latent trait model: simulation, likelihoods, sampler, importance fit.

The model: case i answers item j positively with probability
logistic(alpha_j + sum_l beta_{jl} z_{il}), latent scores z_i a priori
independent standard normal.  Identification constrains the loading matrix
to lower-triangular with strictly positive diagonal; the diagonal is
sampled and modeled on the log scale.

Priors: N(0, 4) on intercepts and free off-diagonal loadings, log-normal
LN(0, 1) on diagonal loadings (standard deviation roughly matching the
free-parameter prior), standard normal on every latent score.

Posterior sampling is component-wise random-walk Metropolis within a Gibbs
scan (items, free loadings, then one k-vector per case), with proposal
scales adapted toward 0.3 acceptance during burn-in and frozen afterward.
The scan itself is a hot kernel; see :mod:`prodmc._kernels`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from ._kernels import run_marginal_loglik_draws, run_mwg_chunk
from .quadrature import QuadratureRule

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    """Shape and prior settings of a binary latent trait model."""

    n_items: int
    n_cases: int
    n_factors: int = 1
    prior_sd_free: float = 2.0
    prior_logdiag_mean: float = 0.0
    prior_logdiag_sd: float = 1.0

    def __post_init__(self):
        if self.n_items < 1 or self.n_cases < 1 or self.n_factors < 1:
            raise ValueError("n_items, n_cases, n_factors must be >= 1")
        if self.n_factors > self.n_items:
            raise ValueError("n_factors cannot exceed n_items")

    @property
    def prior_var_free(self) -> float:
        return self.prior_sd_free**2


def free_loading_indices(p: int, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row, column, and is-diagonal arrays of the free loading entries.

    Free entries are the lower triangle (row >= column), enumerated row-major;
    entries above the diagonal are structural zeros.
    """
    rows, cols, diag = [], [], []
    for j in range(p):
        for ell in range(min(j + 1, k)):
            rows.append(j)
            cols.append(ell)
            diag.append(j == ell)
    return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
            np.array(diag, dtype=np.uint8))


def n_free_loadings(p: int, k: int) -> int:
    return free_loading_indices(p, k)[0].shape[0]


@dataclass(frozen=True)
class ItemParams:
    """Item intercepts and constrained loading matrix."""

    intercepts: np.ndarray  # (p,)
    loadings: np.ndarray    # (p, k)

    def __post_init__(self):
        intercepts = np.asarray(self.intercepts, dtype=np.float64).copy()
        loadings = np.asarray(self.loadings, dtype=np.float64).copy()
        if intercepts.ndim != 1 or loadings.ndim != 2:
            raise ValueError("intercepts must be (p,), loadings (p, k)")
        p, k = loadings.shape
        if intercepts.shape[0] != p:
            raise ValueError("intercepts and loadings disagree on item count")
        if k > p:
            raise ValueError("latent dimension cannot exceed item count")
        for j in range(min(p, k)):
            if loadings[j, j] <= 0:
                raise ValueError(f"diagonal loading [{j},{j}] must be positive")
        upper = np.triu_indices(n=p, k=1, m=k)
        if np.any(loadings[upper] != 0.0):
            raise ValueError("loadings above the diagonal must be exactly zero")
        intercepts.flags.writeable = False
        loadings.flags.writeable = False
        object.__setattr__(self, "intercepts", intercepts)
        object.__setattr__(self, "loadings", loadings)

    @property
    def n_items(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


def pack_loadings(loadings: np.ndarray) -> np.ndarray:
    """Free entries on the sampling scale (log of the diagonal)."""
    p, k = loadings.shape[-2:]
    rows, cols, diag = free_loading_indices(p, k)
    free = loadings[..., rows, cols].copy()
    free[..., diag == 1] = np.log(free[..., diag == 1])
    return free


def unpack_loadings(free: np.ndarray, p: int, k: int) -> np.ndarray:
    """Inverse of :func:`pack_loadings`; returns full (..., p, k) matrices."""
    rows, cols, diag = free_loading_indices(p, k)
    natural = free.copy()
    natural[..., diag == 1] = np.exp(natural[..., diag == 1])
    out = np.zeros(free.shape[:-1] + (p, k))
    out[..., rows, cols] = natural
    return out


@dataclass(frozen=True)
class Dataset:
    """Binary response matrix, cases by items."""

    responses: np.ndarray

    def __post_init__(self):
        responses = np.asarray(self.responses)
        if responses.ndim != 2:
            raise ValueError("responses must be a 2-D matrix")
        if not np.isin(responses, (0, 1)).all():
            raise ValueError("responses must be 0/1")
        responses = responses.astype(np.uint8)
        responses.flags.writeable = False
        object.__setattr__(self, "responses", responses)

    @property
    def n_cases(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"item{j + 1}" for j in range(self.n_items)])
            for row in self.responses:
                writer.writerow([int(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            expected = [f"item{j + 1}" for j in range(len(header))]
            if header != expected:
                raise ValueError(f"expected header {expected}, got {header}")
            rows = [[int(v) for v in row] for row in reader]
        return cls(np.array(rows, dtype=np.uint8))


# ----------------------------------------------------------------------
# likelihoods and priors
# ----------------------------------------------------------------------

def response_prob(params: ItemParams, z: np.ndarray, j: int) -> float:
    """P(positive response to item j | latent score z), overflow-safe."""
    z = np.asarray(z, dtype=np.float64)
    eta = params.intercepts[j] + params.loadings[j] @ z
    return float(expit(eta))


def _eta(params: ItemParams, z: np.ndarray) -> np.ndarray:
    return params.intercepts[None, :] + z @ params.loadings.T


def joint_case_loglik(params: ItemParams, z: np.ndarray, data: Dataset) -> np.ndarray:
    """Per-case log-likelihood given latent scores; z is (n_cases, k)."""
    y = data.responses.astype(np.float64)
    eta = _eta(params, np.asarray(z, dtype=np.float64))
    if eta.shape != y.shape:
        raise ValueError(f"latent scores shape mismatch: eta {eta.shape} vs data {y.shape}")
    return (y * eta - np.logaddexp(0.0, eta)).sum(axis=1)


def joint_loglik(params: ItemParams, z: np.ndarray, data: Dataset) -> float:
    """Log-likelihood with the latent scores treated as given."""
    return float(joint_case_loglik(params, z, data).sum())


def marginal_case_loglik(params: ItemParams, data: Dataset,
                         rule: QuadratureRule) -> np.ndarray:
    """Per-case log-likelihood with latent scores integrated out by quadrature."""
    if rule.dimension != params.n_factors:
        raise ValueError(
            f"rule dimension {rule.dimension} != latent dimension {params.n_factors}"
        )
    nodes = rule.nodes.reshape(rule.n_points, rule.dimension)
    y = data.responses.astype(np.float64)
    eta_nodes = params.intercepts[None, :] + nodes @ params.loadings.T
    base = np.log(rule.weights) - np.logaddexp(0.0, eta_nodes).sum(axis=1)
    scores = y @ eta_nodes.T + base[None, :]
    return logsumexp(scores, axis=1)


def marginal_loglik(params: ItemParams, data: Dataset, rule: QuadratureRule) -> float:
    """Log-likelihood of the observed responses, latent scores marginalized."""
    return float(marginal_case_loglik(params, data, rule).sum())


def log_prior(params: ItemParams, config: ModelConfig) -> float:
    """Log prior density on the natural scale (log-normal on the diagonal)."""
    var = config.prior_var_free
    total = float(-0.5 * (params.intercepts**2).sum() / var
                  - 0.5 * params.n_items * (LOG_2PI + math.log(var)))
    rows, cols, diag = free_loading_indices(params.n_items, params.n_factors)
    for r, c, d in zip(rows, cols, diag):
        b = params.loadings[r, c]
        if d == 1:
            if b <= 0:
                return -math.inf
            t = (math.log(b) - config.prior_logdiag_mean) / config.prior_logdiag_sd
            total += (-math.log(b) - math.log(config.prior_logdiag_sd)
                      - 0.5 * LOG_2PI - 0.5 * t * t)
        else:
            total += -0.5 * (LOG_2PI + math.log(var)) - 0.5 * b * b / var
    return total


def log_prior_transformed(alpha: np.ndarray, loadings_free: np.ndarray,
                          config: ModelConfig) -> np.ndarray:
    """Log prior on the sampling scale, vectorized over leading draws.

    On this scale every free parameter is normal: N(0, prior variance) for
    intercepts and off-diagonal loadings, N(logdiag mean, logdiag sd^2) for
    the log-diagonal entries.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=np.float64))
    loadings_free = np.atleast_2d(np.asarray(loadings_free, dtype=np.float64))
    _, _, diag = free_loading_indices(config.n_items, config.n_factors)
    var = np.where(diag == 1, config.prior_logdiag_sd**2, config.prior_var_free)
    mean = np.where(diag == 1, config.prior_logdiag_mean, 0.0)
    out = (-0.5 * (alpha**2).sum(axis=1) / config.prior_var_free
           - 0.5 * alpha.shape[1] * (LOG_2PI + math.log(config.prior_var_free)))
    dev = loadings_free - mean[None, :]
    out += (-0.5 * (dev**2 / var[None, :]).sum(axis=1)
            - 0.5 * (LOG_2PI * var.size + np.log(var).sum()))
    return out


def log_prior_latent(z: np.ndarray) -> np.ndarray:
    """Standard normal log density summed over all latent scores.

    Accepts (n_cases, k) or (draws, n_cases, k); sums over the trailing two
    axes.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        return float(-0.5 * (z**2).sum() - 0.5 * z.size * LOG_2PI)
    per_entry = z.shape[-1] * z.shape[-2]
    return -0.5 * (z**2).sum(axis=(-2, -1)) - 0.5 * per_entry * LOG_2PI


# ----------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------

def simulate_responses(params: ItemParams, z: np.ndarray,
                       rng: np.random.Generator) -> Dataset:
    """Draw one binary response matrix given parameters and latent scores."""
    probs = expit(_eta(params, np.asarray(z, dtype=np.float64)))
    return Dataset((rng.random(probs.shape) < probs).astype(np.uint8))


def simulate_dataset(config: ModelConfig, rng: np.random.Generator
                     ) -> tuple[Dataset, ItemParams, np.ndarray]:
    """Draw parameters from U(-2, 2), scores from N(0, 1), then responses.

    Diagonal loadings are redrawn until positive so the constraint pattern
    holds by construction.
    """
    p, k = config.n_items, config.n_factors
    intercepts = rng.uniform(-2.0, 2.0, size=p)
    loadings = np.zeros((p, k))
    rows, cols, diag = free_loading_indices(p, k)
    for r, c, d in zip(rows, cols, diag):
        value = rng.uniform(-2.0, 2.0)
        if d == 1:
            while value <= 0.0:
                value = rng.uniform(-2.0, 2.0)
        loadings[r, c] = value
    params = ItemParams(intercepts=intercepts, loadings=loadings)
    z = rng.standard_normal((config.n_cases, k))
    return simulate_responses(params, z, rng), params, z


# ----------------------------------------------------------------------
# Metropolis-within-Gibbs sampler
# ----------------------------------------------------------------------

@dataclass
class PosteriorDraws:
    """Thinned post-burn-in MCMC output plus sampler metadata."""

    intercepts: np.ndarray       # (n_draws, p)
    loadings: np.ndarray         # (n_draws, p, k), natural scale
    latent: np.ndarray           # (n_draws, n_cases, k)
    config: ModelConfig
    burn_in: int
    thin: int
    accept_rate_intercepts: np.ndarray = field(default=None)
    accept_rate_loadings: np.ndarray = field(default=None)
    accept_rate_latent: float = float("nan")
    proposal_log_scales: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.intercepts.shape[0]

    def loadings_free(self) -> np.ndarray:
        """Free loadings on the sampling scale, (n_draws, n_free)."""
        return pack_loadings(self.loadings)


def mwg_sample(
    data: Dataset,
    config: ModelConfig,
    n_kept: int,
    burn_in: int,
    thin: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    initial_scale: float = 0.3,
    initial_scale_latent: float = 0.5,
    adapt_rate: float = 1.0,
    chunk_scans: int = 512,
    use_numba: bool | None = None,
) -> PosteriorDraws:
    """Component-wise random-walk Metropolis within a Gibbs scan.

    Runs ``burn_in + n_kept * thin`` scans, adapting proposal scales toward
    0.3 acceptance during burn-in only, and stores every ``thin``-th
    post-burn-in state.  ``temperature`` scales the likelihood contribution;
    0 samples the prior (useful as a sampler diagnostic).
    """
    if n_kept < 1:
        raise ValueError("n_kept must be >= 1")
    if burn_in < 0 or thin < 1:
        raise ValueError("burn_in must be >= 0 and thin >= 1")
    if data.n_items != config.n_items or data.n_cases != config.n_cases:
        raise ValueError("data shape disagrees with model config")
    p, k, n_cases = config.n_items, config.n_factors, config.n_cases
    rows, cols, diag = free_loading_indices(p, k)
    n_free = rows.shape[0]

    y = data.responses.astype(np.float64)
    alpha = np.zeros(p)
    loadings = np.zeros((p, k))
    loadings[np.arange(k), np.arange(k)] = 1.0
    z = np.zeros((n_cases, k))
    eta = _eta(ItemParams(alpha, loadings), z).copy()

    log_scale_alpha = np.full(p, math.log(initial_scale))
    log_scale_beta = np.full(n_free, math.log(initial_scale))
    log_scale_z = np.array([math.log(initial_scale_latent)])

    out_alpha = np.empty((n_kept, p))
    out_loadings = np.empty((n_kept, p, k))
    out_z = np.empty((n_kept, n_cases, k))
    accept_alpha = np.zeros(p)
    accept_beta = np.zeros(n_free)
    accept_z = np.zeros(1)

    total_scans = burn_in + n_kept * thin
    n_norm = p + n_free + n_cases * k
    n_uni = p + n_free + n_cases
    kept = 0
    scan_offset = 0
    while scan_offset < total_scans:
        scans = min(chunk_scans, total_scans - scan_offset)
        normals = rng.standard_normal((scans, n_norm))
        uniforms = rng.random((scans, n_uni))
        kept += run_mwg_chunk(
            y, alpha, loadings, z, eta,
            rows, cols, diag,
            log_scale_alpha, log_scale_beta, log_scale_z,
            normals, uniforms,
            scan_offset, burn_in, thin, float(temperature),
            config.prior_var_free, float(adapt_rate),
            out_alpha, out_loadings, out_z,
            kept, accept_alpha, accept_beta, accept_z,
            use_numba=use_numba,
        )
        scan_offset += scans
    assert kept == n_kept, f"kept {kept} draws, expected {n_kept}"

    post_scans = total_scans - burn_in
    return PosteriorDraws(
        intercepts=out_alpha,
        loadings=out_loadings,
        latent=out_z,
        config=config,
        burn_in=burn_in,
        thin=thin,
        accept_rate_intercepts=accept_alpha / post_scans,
        accept_rate_loadings=accept_beta / post_scans,
        accept_rate_latent=float(accept_z[0] / (post_scans * n_cases)),
        proposal_log_scales={
            "intercepts": log_scale_alpha,
            "loadings": log_scale_beta,
            "latent": log_scale_z,
        },
    )


def marginal_loglik_draws(draws_alpha: np.ndarray, draws_loadings: np.ndarray,
                          data: Dataset, rule: QuadratureRule,
                          use_numba: bool | None = None) -> np.ndarray:
    """Marginal log-likelihood for a batch of parameter draws (hot path)."""
    nodes = rule.nodes.reshape(rule.n_points, rule.dimension)
    return run_marginal_loglik_draws(
        data.responses.astype(np.float64),
        np.ascontiguousarray(draws_alpha),
        np.ascontiguousarray(draws_loadings),
        np.ascontiguousarray(nodes),
        np.log(rule.weights),
        use_numba=use_numba,
    )


def joint_case_loglik_draws(draws_alpha: np.ndarray, draws_loadings: np.ndarray,
                            draws_z: np.ndarray, data: Dataset,
                            chunk: int = 2048) -> np.ndarray:
    """Per-case joint log-likelihood for a batch of draws, (n_draws, n_cases)."""
    y = data.responses.astype(np.float64)
    n_draws = draws_alpha.shape[0]
    out = np.empty((n_draws, data.n_cases))
    for start in range(0, n_draws, chunk):
        sl = slice(start, min(start + chunk, n_draws))
        eta = (draws_alpha[sl][:, None, :]
               + np.einsum("ril,rjl->rij", draws_z[sl], draws_loadings[sl]))
        out[sl] = (y[None, :, :] * eta - np.logaddexp(0.0, eta)).sum(axis=2)
    return out


# ----------------------------------------------------------------------
# moment-fitted importance function
# ----------------------------------------------------------------------

class SingularCovarianceError(RuntimeError):
    pass


def _chol_with_jitter(cov: np.ndarray) -> tuple[np.ndarray, float]:
    scale = float(np.mean(np.diag(cov)))
    if scale <= 0.0 or not np.isfinite(scale):
        scale = 1.0
    jitter = 0.0
    for attempt in range(14):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
            return chol, jitter
        except np.linalg.LinAlgError:
            jitter = scale * 10.0 ** (-12 + attempt) if jitter else scale * 1e-12
            jitter = max(jitter, 1e-300)
    raise SingularCovarianceError("covariance not positive definite after max jitter")


@dataclass(frozen=True)
class ImportanceFn:
    """Moment-matched importance density g for the posterior.

    Block multivariate normals for the intercepts and the free loadings (the
    latter on the sampling scale), and, when fitted for the joint approach,
    one independent normal per latent score.
    """

    alpha_mean: np.ndarray
    alpha_chol: np.ndarray
    beta_mean: np.ndarray
    beta_chol: np.ndarray
    z_mean: np.ndarray | None
    z_sd: np.ndarray | None
    config: ModelConfig
    jitter: tuple[float, float] = (0.0, 0.0)

    @property
    def includes_latent(self) -> bool:
        return self.z_mean is not None


def fit_importance(draws: PosteriorDraws, include_latent: bool) -> ImportanceFn:
    """Block means/covariances from MCMC output; latent scores as independent
    normals per score.  Covariances get minimal diagonal jitter if needed."""
    if draws.n_draws < 2:
        raise ValueError("need at least 2 posterior draws to fit moments")
    alpha = draws.intercepts
    beta_free = draws.loadings_free()
    alpha_mean = alpha.mean(axis=0)
    beta_mean = beta_free.mean(axis=0)
    alpha_cov = np.atleast_2d(np.cov(alpha, rowvar=False))
    beta_cov = np.atleast_2d(np.cov(beta_free, rowvar=False))
    alpha_chol, j_a = _chol_with_jitter(alpha_cov)
    beta_chol, j_b = _chol_with_jitter(beta_cov)
    z_mean = z_sd = None
    if include_latent:
        z_mean = draws.latent.mean(axis=0)
        z_sd = np.maximum(draws.latent.std(axis=0, ddof=1), 1e-8)
    return ImportanceFn(
        alpha_mean=alpha_mean, alpha_chol=alpha_chol,
        beta_mean=beta_mean, beta_chol=beta_chol,
        z_mean=z_mean, z_sd=z_sd,
        config=draws.config, jitter=(j_a, j_b),
    )


@dataclass(frozen=True)
class GSample:
    """Draws from an importance function, on both scales."""

    intercepts: np.ndarray        # (size, p)
    loadings_free: np.ndarray     # (size, n_free), sampling scale
    loadings: np.ndarray          # (size, p, k), natural scale
    latent: np.ndarray | None     # (size, n_cases, k) when g includes it

    @property
    def size(self) -> int:
        return self.intercepts.shape[0]


def sample_importance(g: ImportanceFn, rng: np.random.Generator, size: int) -> GSample:
    p, k = g.config.n_items, g.config.n_factors
    alpha = g.alpha_mean + rng.standard_normal((size, p)) @ g.alpha_chol.T
    beta_free = g.beta_mean + rng.standard_normal((size, g.beta_mean.size)) @ g.beta_chol.T
    latent = None
    if g.includes_latent:
        latent = g.z_mean[None] + g.z_sd[None] * rng.standard_normal(
            (size,) + g.z_mean.shape
        )
    return GSample(
        intercepts=alpha,
        loadings_free=beta_free,
        loadings=unpack_loadings(beta_free, p, k),
        latent=latent,
    )


def _mvn_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    dev = np.atleast_2d(x) - mean[None, :]
    sol = solve_triangular(chol, dev.T, lower=True)
    quad = (sol**2).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (mean.size * LOG_2PI + logdet + quad)


def log_g_theta(g: ImportanceFn, intercepts: np.ndarray,
                loadings_free: np.ndarray) -> np.ndarray:
    """Structural-parameter block of the importance log density."""
    return (_mvn_logpdf(intercepts, g.alpha_mean, g.alpha_chol)
            + _mvn_logpdf(loadings_free, g.beta_mean, g.beta_chol))


def log_g(g: ImportanceFn, intercepts: np.ndarray, loadings_free: np.ndarray,
          latent: np.ndarray | None = None) -> np.ndarray:
    """Log importance density, vectorized over leading draws.

    ``latent`` must be provided iff the importance function includes the
    latent block.
    """
    out = log_g_theta(g, intercepts, loadings_free)
    if g.includes_latent:
        if latent is None:
            raise ValueError("importance function includes latent scores; pass them")
        out = out + log_g_latent(g, latent).sum(axis=1)
    elif latent is not None:
        raise ValueError("importance function has no latent block")
    return out


def log_g_latent(g: ImportanceFn, latent: np.ndarray) -> np.ndarray:
    """Per-case latent-block log density, (n_draws, n_cases)."""
    if not g.includes_latent:
        raise ValueError("importance function has no latent block")
    z = latent if latent.ndim == 3 else latent[None]
    dev = (z - g.z_mean[None]) / g.z_sd[None]
    per_score = -0.5 * dev**2 - np.log(g.z_sd)[None] - 0.5 * LOG_2PI
    return per_score.sum(axis=2)
