"""Hot numeric kernels: scalar-loop bodies for numba, vectorized fallbacks.

Two operations dominate runtime: the Metropolis-within-Gibbs scan over the
latent trait model's parameters, and the per-draw Gauss-Hermite marginal
log-likelihood.  Each exists twice with one calling convention:

* ``*_loops``  -- scalar loops, compiled with ``numba.njit`` on first use;
* ``*_numpy`` -- vectorized numpy, used when numba is disabled or missing.

Both MWG paths consume the same pre-generated random arrays in the same
logical order, so the two backends produce the same chain up to
floating-point summation order (last-ulp differences; an acceptance
decision flips only if a log ratio lands within ~1e-15 of the threshold).

Random-array layout, per scan:
  normals  [0:p] intercepts | [p:p+n_free] loadings | [p+n_free:] latent (case-major)
  uniforms [0:p] intercepts | [p:p+n_free] loadings | [p+n_free:p+n_free+n_cases] latent
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import resolve_backend

ADAPT_TARGET = 0.3
ADAPT_DECAY = 0.6
LOG_SCALE_MIN = -10.0
LOG_SCALE_MAX = 3.0


def _log1pexp(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _make_mwg_loops(log1pexp):
    def mwg_chunk(
        y, alpha, loadings, z, eta,
        free_rows, free_cols, free_is_diag,
        log_scale_alpha, log_scale_beta, log_scale_z,
        normals, uniforms,
        scan_offset, burn_in, thin, temperature,
        prior_var_free, adapt_rate,
        out_alpha, out_loadings, out_z,
        kept_so_far, accept_alpha, accept_beta, accept_z,
    ):
        n_scans = normals.shape[0]
        n_cases, p = y.shape
        k = z.shape[1]
        n_free = free_rows.shape[0]
        n_kept = 0
        for s in range(n_scans):
            scan = scan_offset + s
            adapting = scan < burn_in
            rate = adapt_rate / (1.0 + scan) ** ADAPT_DECAY
            counting = scan >= burn_in

            # intercept updates, one item at a time
            for j in range(p):
                step = math.exp(log_scale_alpha[j]) * normals[s, j]
                delta = 0.0
                for i in range(n_cases):
                    e_old = eta[i, j]
                    e_new = e_old + step
                    delta += y[i, j] * step - (log1pexp(e_new) - log1pexp(e_old))
                delta *= temperature
                a_new = alpha[j] + step
                delta += -(a_new * a_new - alpha[j] * alpha[j]) / (2.0 * prior_var_free)
                accepted = math.log(uniforms[s, j]) < delta
                if accepted:
                    alpha[j] = a_new
                    for i in range(n_cases):
                        eta[i, j] += step
                    if counting:
                        accept_alpha[j] += 1.0
                if adapting:
                    ls = log_scale_alpha[j] + rate * ((1.0 if accepted else 0.0) - ADAPT_TARGET)
                    log_scale_alpha[j] = min(max(ls, LOG_SCALE_MIN), LOG_SCALE_MAX)

            # loading updates; diagonal entries move on the log scale
            for m in range(n_free):
                jr = free_rows[m]
                jc = free_cols[m]
                b_old = loadings[jr, jc]
                if free_is_diag[m] == 1:
                    t_old = math.log(b_old)
                else:
                    t_old = b_old
                step = math.exp(log_scale_beta[m]) * normals[s, p + m]
                t_new = t_old + step
                if free_is_diag[m] == 1:
                    b_new = math.exp(t_new)
                    dprior = -(t_new * t_new - t_old * t_old) / 2.0
                else:
                    b_new = t_new
                    dprior = -(t_new * t_new - t_old * t_old) / (2.0 * prior_var_free)
                db = b_new - b_old
                delta = 0.0
                for i in range(n_cases):
                    de = db * z[i, jc]
                    e_old = eta[i, jr]
                    e_new = e_old + de
                    delta += y[i, jr] * de - (log1pexp(e_new) - log1pexp(e_old))
                delta = delta * temperature + dprior
                accepted = math.log(uniforms[s, p + m]) < delta
                if accepted:
                    loadings[jr, jc] = b_new
                    for i in range(n_cases):
                        eta[i, jr] += db * z[i, jc]
                    if counting:
                        accept_beta[m] += 1.0
                if adapting:
                    ls = log_scale_beta[m] + rate * ((1.0 if accepted else 0.0) - ADAPT_TARGET)
                    log_scale_beta[m] = min(max(ls, LOG_SCALE_MIN), LOG_SCALE_MAX)

            # latent-score updates, one case (k-vector) at a time
            scale_z = math.exp(log_scale_z[0])
            z_accepted = 0.0
            for i in range(n_cases):
                delta = 0.0
                dprior = 0.0
                for j in range(p):
                    de = 0.0
                    for ell in range(k):
                        de += scale_z * normals[s, p + n_free + i * k + ell] * loadings[j, ell]
                    e_old = eta[i, j]
                    e_new = e_old + de
                    delta += y[i, j] * de - (log1pexp(e_new) - log1pexp(e_old))
                for ell in range(k):
                    dz = scale_z * normals[s, p + n_free + i * k + ell]
                    z_new = z[i, ell] + dz
                    dprior += -(z_new * z_new - z[i, ell] * z[i, ell]) / 2.0
                delta = delta * temperature + dprior
                if math.log(uniforms[s, p + n_free + i]) < delta:
                    z_accepted += 1.0
                    for ell in range(k):
                        z[i, ell] += scale_z * normals[s, p + n_free + i * k + ell]
                    for j in range(p):
                        de = 0.0
                        for ell in range(k):
                            de += scale_z * normals[s, p + n_free + i * k + ell] * loadings[j, ell]
                        eta[i, j] += de
            if counting:
                accept_z[0] += z_accepted
            if adapting:
                ls = log_scale_z[0] + rate * (z_accepted / n_cases - ADAPT_TARGET)
                log_scale_z[0] = min(max(ls, LOG_SCALE_MIN), LOG_SCALE_MAX)

            # store thinned post-burn-in states
            post = scan - burn_in
            if post >= 0 and (post + 1) % thin == 0:
                idx = kept_so_far + n_kept
                for j in range(p):
                    out_alpha[idx, j] = alpha[j]
                for j in range(p):
                    for ell in range(k):
                        out_loadings[idx, j, ell] = loadings[j, ell]
                for i in range(n_cases):
                    for ell in range(k):
                        out_z[idx, i, ell] = z[i, ell]
                n_kept += 1
        return n_kept

    return mwg_chunk


_mwg_loops_py = _make_mwg_loops(_log1pexp)


def _mwg_chunk_numpy(
    y, alpha, loadings, z, eta,
    free_rows, free_cols, free_is_diag,
    log_scale_alpha, log_scale_beta, log_scale_z,
    normals, uniforms,
    scan_offset, burn_in, thin, temperature,
    prior_var_free, adapt_rate,
    out_alpha, out_loadings, out_z,
    kept_so_far, accept_alpha, accept_beta, accept_z,
):
    n_scans = normals.shape[0]
    n_cases, p = y.shape
    k = z.shape[1]
    n_free = free_rows.shape[0]
    n_kept = 0
    for s in range(n_scans):
        scan = scan_offset + s
        adapting = scan < burn_in
        rate = adapt_rate / (1.0 + scan) ** ADAPT_DECAY
        counting = scan >= burn_in

        for j in range(p):
            step = math.exp(log_scale_alpha[j]) * normals[s, j]
            col = eta[:, j]
            new = col + step
            delta = temperature * float(
                y[:, j].sum() * step
                - (np.logaddexp(0.0, new) - np.logaddexp(0.0, col)).sum()
            )
            a_new = alpha[j] + step
            delta += -(a_new**2 - alpha[j] ** 2) / (2.0 * prior_var_free)
            accepted = math.log(uniforms[s, j]) < delta
            if accepted:
                alpha[j] = a_new
                eta[:, j] = new
                if counting:
                    accept_alpha[j] += 1.0
            if adapting:
                ls = log_scale_alpha[j] + rate * (float(accepted) - ADAPT_TARGET)
                log_scale_alpha[j] = min(max(ls, LOG_SCALE_MIN), LOG_SCALE_MAX)

        for m in range(n_free):
            jr = int(free_rows[m])
            jc = int(free_cols[m])
            b_old = loadings[jr, jc]
            t_old = math.log(b_old) if free_is_diag[m] == 1 else b_old
            step = math.exp(log_scale_beta[m]) * normals[s, p + m]
            t_new = t_old + step
            if free_is_diag[m] == 1:
                b_new = math.exp(t_new)
                dprior = -(t_new**2 - t_old**2) / 2.0
            else:
                b_new = t_new
                dprior = -(t_new**2 - t_old**2) / (2.0 * prior_var_free)
            db = b_new - b_old
            dcol = db * z[:, jc]
            col = eta[:, jr]
            new = col + dcol
            delta = temperature * float(
                (y[:, jr] * dcol).sum()
                - (np.logaddexp(0.0, new) - np.logaddexp(0.0, col)).sum()
            ) + dprior
            accepted = math.log(uniforms[s, p + m]) < delta
            if accepted:
                loadings[jr, jc] = b_new
                eta[:, jr] = new
                if counting:
                    accept_beta[m] += 1.0
            if adapting:
                ls = log_scale_beta[m] + rate * (float(accepted) - ADAPT_TARGET)
                log_scale_beta[m] = min(max(ls, LOG_SCALE_MIN), LOG_SCALE_MAX)

        scale_z = math.exp(log_scale_z[0])
        dz = scale_z * normals[s, p + n_free:].reshape(n_cases, k)
        deta = dz @ loadings.T
        new_eta = eta + deta
        dll = temperature * (
            (y * deta).sum(axis=1)
            - (np.logaddexp(0.0, new_eta) - np.logaddexp(0.0, eta)).sum(axis=1)
        )
        z_new = z + dz
        dprior = -((z_new**2 - z**2).sum(axis=1)) / 2.0
        accept_mask = np.log(uniforms[s, p + n_free:]) < dll + dprior
        z[accept_mask] = z_new[accept_mask]
        eta[accept_mask] = new_eta[accept_mask]
        z_accepted = float(accept_mask.sum())
        if counting:
            accept_z[0] += z_accepted
        if adapting:
            ls = log_scale_z[0] + rate * (z_accepted / n_cases - ADAPT_TARGET)
            log_scale_z[0] = min(max(ls, LOG_SCALE_MIN), LOG_SCALE_MAX)

        post = scan - burn_in
        if post >= 0 and (post + 1) % thin == 0:
            idx = kept_so_far + n_kept
            out_alpha[idx] = alpha
            out_loadings[idx] = loadings
            out_z[idx] = z
            n_kept += 1
    return n_kept


def _make_marginal_loglik_loops(log1pexp):
    def marginal_loglik_draws(y, alpha_draws, loadings_draws, nodes, log_weights, out):
        n_draws = alpha_draws.shape[0]
        n_cases, p = y.shape
        n_nodes, k = nodes.shape
        eta_nodes = np.empty((n_nodes, p))
        base = np.empty(n_nodes)
        for r in range(n_draws):
            for q in range(n_nodes):
                c = 0.0
                for j in range(p):
                    e = alpha_draws[r, j]
                    for ell in range(k):
                        e += nodes[q, ell] * loadings_draws[r, j, ell]
                    eta_nodes[q, j] = e
                    c += log1pexp(e)
                base[q] = log_weights[q] - c
            total = 0.0
            for i in range(n_cases):
                best = -np.inf
                for q in range(n_nodes):
                    score = base[q]
                    for j in range(p):
                        score += y[i, j] * eta_nodes[q, j]
                    if score > best:
                        best = score
                acc = 0.0
                for q in range(n_nodes):
                    score = base[q]
                    for j in range(p):
                        score += y[i, j] * eta_nodes[q, j]
                    acc += math.exp(score - best)
                total += best + math.log(acc)
            out[r] = total
        return out

    return marginal_loglik_draws


_marginal_loglik_loops_py = _make_marginal_loglik_loops(_log1pexp)


def _marginal_loglik_numpy(y, alpha_draws, loadings_draws, nodes, log_weights, out):
    from scipy.special import logsumexp

    n_draws = alpha_draws.shape[0]
    for r in range(n_draws):
        eta_nodes = alpha_draws[r][None, :] + nodes @ loadings_draws[r].T
        base = log_weights - np.logaddexp(0.0, eta_nodes).sum(axis=1)
        scores = y @ eta_nodes.T + base[None, :]
        out[r] = logsumexp(scores, axis=1).sum()
    return out


_compiled: dict[str, object] = {}


def _numba_kernel(name: str):
    kernel = _compiled.get(name)
    if kernel is None:
        from numba import njit

        log1pexp_nb = njit(cache=True)(_log1pexp)
        if name == "mwg":
            kernel = njit(cache=True)(_make_mwg_loops(log1pexp_nb))
        elif name == "marginal_loglik":
            kernel = njit(cache=True)(_make_marginal_loglik_loops(log1pexp_nb))
        else:
            raise KeyError(name)
        _compiled[name] = kernel
    return kernel


def run_mwg_chunk(*args, use_numba: bool | None = None):
    """Dispatch one chunk of MWG scans to the active backend."""
    if resolve_backend(use_numba):
        return _numba_kernel("mwg")(*args)
    return _mwg_chunk_numpy(*args)


def run_marginal_loglik_draws(y, alpha_draws, loadings_draws, nodes, log_weights,
                              use_numba: bool | None = None) -> np.ndarray:
    """Gauss-Hermite marginal log-likelihood for a batch of parameter draws."""
    out = np.empty(alpha_draws.shape[0])
    if resolve_backend(use_numba):
        return _numba_kernel("marginal_loglik")(
            y, alpha_draws, loadings_draws, nodes, log_weights, out
        )
    return _marginal_loglik_numpy(y, alpha_draws, loadings_draws, nodes, log_weights, out)
