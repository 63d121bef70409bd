"""Exact ground-truth quantities for mixture / empirical distributions.

Everything here works on the closed-form structure of the noised marginal:
if the data distribution is sum_k w_k * N(mu_k, sigma_hat**2 I) and the
kernel is N(a_t x, sigma_t**2 I), the marginal at time t is again a mixture,

    p_t = sum_k w_k * N(a_t mu_k, (a_t**2 sigma_hat**2 + sigma_t**2) I),

so scores, posterior responsibilities and exact posterior sampling are all
available in closed form.  An :class:`~stf_lab.datasets.EmpiricalSet` is the
sigma_hat = 0 case with uniform weights and is treated identically.

All density work happens in log space with log-sum-exp; sigma_t spans four
orders of magnitude and direct densities underflow in high dimension.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

from .datasets import GaussianMixture
from .kernels import NoiseSchedule, VE


def _marginal_params(dist, schedule: NoiseSchedule, t):
    """(weights, means, a_t, sigma_t, s2) with s2 the per-component marginal variance."""
    w, mu, sigma_hat = dist.components()
    a = np.asarray(schedule.scale_at(t), dtype=float)
    sig = np.asarray(schedule.sigma_at(t), dtype=float)
    s2 = a**2 * sigma_hat**2 + sig**2
    return w, mu, sigma_hat, a, sig, s2


def _sq_dists(xt, centers, chunk=2048):
    """Squared distances ||xt_i - centers_ik||^2 -> (B, K).

    ``centers`` is (K, d) or (B, K, d); computed from explicit differences
    (no norm expansion) in chunks over rows, so results are independent of
    the chunk size.
    """
    xt = np.atleast_2d(xt)
    out = np.empty((xt.shape[0], centers.shape[-2]))
    for lo in range(0, xt.shape[0], chunk):
        hi = min(lo + chunk, xt.shape[0])
        c = centers[lo:hi] if centers.ndim == 3 else centers[None, :, :]
        diff = xt[lo:hi, None, :] - c
        out[lo:hi] = np.einsum("bkd,bkd->bk", diff, diff)
    return out


def _log_responsibilities(dist, schedule, xt, t):
    """Unnormalized-then-normalized log posterior weights over components."""
    w, mu, _, a, _, s2 = _marginal_params(dist, schedule, t)
    xt2 = np.atleast_2d(np.asarray(xt, dtype=float))
    if xt2.shape[1] != mu.shape[1]:
        raise ValueError(f"dimension mismatch: xt has d={xt2.shape[1]}, dist has d={mu.shape[1]}")
    if np.ndim(a) == 1:
        centers = a[:, None, None] * mu[None, :, :]
        s2b = s2[:, None]
    else:
        centers = float(a) * mu
        s2b = s2
    logits = np.log(w)[None, :] - _sq_dists(xt2, centers) / (2.0 * s2b)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def posterior_weights(dist, schedule: NoiseSchedule, xt, t) -> np.ndarray:
    """Posterior probabilities over mixture components / empirical points.

    Shape (K,) for a single ``xt`` of shape (d,), else (B, K).
    """
    logr = _log_responsibilities(dist, schedule, xt, t)
    r = np.exp(logr)
    return r[0] if np.asarray(xt).ndim == 1 else r


def marginal_score(dist, schedule: NoiseSchedule, xt, t) -> np.ndarray:
    """Exact score of the noised marginal p_t at xt; t scalar or per-row."""
    w, mu, _, a, _, s2 = _marginal_params(dist, schedule, t)
    xt_in = np.asarray(xt, dtype=float)
    r = np.exp(_log_responsibilities(dist, schedule, xt_in, t))
    xt2 = np.atleast_2d(xt_in)
    if np.ndim(a) == 1:
        score = (a[:, None] * (r @ mu) - xt2) / s2[:, None]
    else:
        score = (float(a) * (r @ mu) - xt2) / s2
    return score[0] if xt_in.ndim == 1 else score


def log_marginal_density(dist, schedule: NoiseSchedule, xt, t) -> np.ndarray:
    """log p_t(xt); the independent oracle behind finite-difference score checks."""
    w, mu, _, a, _, s2 = _marginal_params(dist, schedule, t)
    xt_in = np.asarray(xt, dtype=float)
    xt2 = np.atleast_2d(xt_in)
    d = mu.shape[1]
    logits = np.log(w)[None, :] - _sq_dists(xt2, float(a) * mu) / (2.0 * s2)
    out = logsumexp(logits, axis=1) - 0.5 * d * np.log(2.0 * np.pi * s2)
    return out[0] if xt_in.ndim == 1 else out


def sample_posterior(dist, schedule: NoiseSchedule, xt, t, count: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the clean-data posterior given a single noisy point xt.

    A component index is drawn from the responsibilities; within a component
    the conditional over the clean point is Gaussian (closed-form conjugacy),
    degenerating to the component mean when sigma_hat = 0.
    """
    w, mu, sigma_hat, a, sig, s2 = _marginal_params(dist, schedule, t)
    r = posterior_weights(dist, schedule, xt, t)
    idx = np.searchsorted(np.cumsum(r), rng.random(count))
    idx = np.minimum(idx, len(w) - 1)
    picked = mu[idx]
    if sigma_hat == 0.0:
        return picked.copy()
    a = float(a)
    post_var = (sigma_hat**2 * sig**2) / s2
    post_mean = (sig**2 * picked + a * sigma_hat**2 * np.asarray(xt)[None, :]) / s2
    return post_mean + np.sqrt(post_var) * rng.standard_normal(picked.shape)


def _self_normalized_target(schedule, xt, refs, t):
    """STF target via raw log-kernel normalization (scipy logsumexp path).

    Independent of targets.stf_weights' max-subtracted streaming softmax;
    this is the oracle side of the dual-route check.
    """
    a = float(schedule.scale_at(t))
    sig = float(schedule.sigma_at(t))
    logk = -_sq_dists(np.broadcast_to(xt, refs.shape[:1] + xt.shape), a * refs) / (2.0 * sig**2)
    w = np.exp(logk - logsumexp(logk, axis=1, keepdims=True))
    xbar = np.einsum("cn,cnd->cd", w, refs)
    return (a * xbar - xt[None, :]) / sig**2


def brute_force_stf_minimizer(
    dist,
    schedule: NoiseSchedule,
    xt,
    t,
    n: int,
    trials: int,
    rng: np.random.Generator,
    return_stderr: bool = False,
):
    """Monte-Carlo estimate of the self-normalized objective's minimizer at (xt, t).

    Per trial the reference batch couples one exact posterior draw with n-1
    i.i.d. data draws; the self-normalized kernel-weighted target is averaged
    over trials.  Trials are evaluated in chunks and merged by index.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    xt = np.asarray(xt, dtype=float)
    d = xt.shape[0]
    acc = np.zeros(d)
    acc2 = np.zeros(d)
    chunk = max(1, int(4e6 // max(n * d, 1)))
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        x1 = sample_posterior(dist, schedule, xt, t, c, rng)
        if n > 1:
            rest = dist.sample(c * (n - 1), rng).reshape(c, n - 1, d)
            refs = np.concatenate([x1[:, None, :], rest], axis=1)
        else:
            refs = x1[:, None, :]
        tgt = _self_normalized_target(schedule, xt, refs, t)
        acc += tgt.sum(axis=0)
        acc2 += (tgt**2).sum(axis=0)
        done += c
    mean = acc / trials
    if not return_stderr:
        return mean
    var = np.maximum(acc2 / trials - mean**2, 0.0)
    stderr = np.sqrt(var / max(trials - 1, 1))
    return mean, stderr


def v_dsm_closed_two_gaussians(
    offset: float,
    sigma_hat: float,
    d: int,
    schedule: NoiseSchedule,
    t,
    mc_points: int,
    rng: np.random.Generator,
) -> float:
    """Semi-analytic reference for the target-variance curve of the symmetric pair.

    For the two-component distribution from :func:`make_two_gaussians` under a
    unit-scale kernel, the posterior trace-of-covariance of the per-sample
    targets has a closed form per noisy point:

        d*sh^2 / (sig^2*(sig^2+sh^2)) + 4*alpha*(1-alpha)*||mu||^2 / (sig^2+sh^2)^2

    with alpha(x) = sigmoid(2*x.mu/(sig^2+sh^2)) the responsibility of the
    +mu component.  Only the outer average over noisy points is Monte Carlo.
    This is a fast cross-check, not the acceptance oracle; the two-level MC
    estimator in the variance module is the ground truth.
    """
    if schedule.kind != VE:
        raise ValueError("closed form assumes a unit-scale (ve) kernel")
    sig = float(schedule.sigma_at(t))
    s2 = sig**2 + sigma_hat**2
    mu = offset * np.ones(d)
    mu_norm2 = float(mu @ mu)
    signs = np.where(rng.random(mc_points) < 0.5, 1.0, -1.0)
    x0 = signs[:, None] * mu[None, :]
    if sigma_hat > 0:
        x0 = x0 + sigma_hat * rng.standard_normal((mc_points, d))
    xt = x0 + sig * rng.standard_normal((mc_points, d))
    # sigmoid of the log responsibility ratio
    alpha = expit(2.0 * (xt @ mu) / s2)
    integrand = d * sigma_hat**2 / (sig**2 * s2) + 4.0 * alpha * (1.0 - alpha) * mu_norm2 / s2**2
    return float(integrand.mean())
