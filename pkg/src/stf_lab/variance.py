"""Monte-Carlo diagnostics: target variance, divergence scans, bias curves.

The central quantity is the average trace-of-covariance of training targets
at a given time,

    V(t) = E_{x_t ~ p_t}[ Tr Cov( target | x_t ) ],

estimated with two-level Monte Carlo: an outer loop over noisy points and an
inner loop over conditional target draws with the unbiased (inner - 1)
denominator.  Standard errors come from the outer-level sample variance.

The divergence D(t) between the clean-data posterior and the data prior is
computed exactly per noisy point (both are categorical over components here)
under the piecewise generator

    f(y) = (1/y - 1)**2       for y < 1.5
    f(y) = 8*y/27 - 1/3       for y >= 1.5

in both argument orders; the orders disagree strongly in the near field
(prior-vs-posterior stays bounded, posterior-vs-prior can be astronomically
large and is reported as +inf once it exceeds float range).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .analytic import posterior_weights, marginal_score, sample_posterior, _marginal_params
from .datasets import sample_data
from .kernels import NoiseSchedule
from .targets import stf_target_multi

P0_VS_POSTERIOR = "p0_vs_posterior"
POSTERIOR_VS_P0 = "posterior_vs_p0"


# ---------------------------------------------------------------------------
# trace-of-covariance estimators
# ---------------------------------------------------------------------------

def _draw_noisy(dist, schedule, t, count, rng):
    x0 = sample_data(dist, count, rng)
    noise = rng.standard_normal(x0.shape)
    return schedule.perturb(x0, t, noise)


def _posterior_draws(dist, schedule, xts, t, inner, rng):
    """(B, inner, d) exact posterior draws, one block per noisy point."""
    w, mu, sigma_hat, a, sig, s2 = _marginal_params(dist, schedule, t)
    r = posterior_weights(dist, schedule, xts, t)
    cdf = np.cumsum(r, axis=1)
    u = rng.random((xts.shape[0], inner))
    idx = np.empty((xts.shape[0], inner), dtype=int)
    for i in range(xts.shape[0]):
        idx[i] = np.searchsorted(cdf[i], u[i])
    idx = np.minimum(idx, len(w) - 1)
    picked = mu[idx]
    if sigma_hat == 0.0:
        return picked
    a = float(a)
    post_var = (sigma_hat**2 * sig**2) / s2
    post_mean = (sig**2 * picked + a * sigma_hat**2 * xts[:, None, :]) / s2
    return post_mean + np.sqrt(post_var) * rng.standard_normal(picked.shape)


def conditional_dsm_trace(dist, schedule, xt, t, inner, rng) -> float:
    """Unbiased inner estimator: trace of Cov of per-sample targets at one xt."""
    if inner < 2:
        raise ValueError("need inner >= 2 for an unbiased covariance")
    xt = np.asarray(xt, dtype=float)
    draws = _posterior_draws(dist, schedule, xt[None, :], t, inner, rng)[0]
    targets = schedule.kernel_score(draws, np.broadcast_to(xt, draws.shape), t)
    return float(np.var(targets, axis=0, ddof=1).sum())


def estimate_v_dsm(dist, schedule, t, outer: int, inner: int, rng) -> Tuple[float, float]:
    """Two-level MC estimate of the per-sample target variance at time t."""
    if outer < 2 or inner < 2:
        raise ValueError("need outer >= 2 and inner >= 2")
    xts = _draw_noisy(dist, schedule, t, outer, rng)
    draws = _posterior_draws(dist, schedule, xts, t, inner, rng)
    targets = schedule.kernel_score(draws, np.broadcast_to(xts[:, None, :], draws.shape), t)
    per_point = np.var(targets, axis=1, ddof=1).sum(axis=1)
    return float(per_point.mean()), float(per_point.std(ddof=1) / np.sqrt(outer))


def estimate_v_stf(dist, schedule, t, n: int, outer: int, inner: int, rng) -> Tuple[float, float]:
    """Same two-level design for the batch target with reference size n.

    Per noisy point, ``inner`` independent reference batches are drawn, the
    first element from the exact posterior and the remaining n-1 from the
    data distribution; the batch target of each gives the conditional sample.
    """
    if outer < 2 or inner < 2:
        raise ValueError("need outer >= 2 and inner >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    xts = _draw_noisy(dist, schedule, t, outer, rng)
    d = xts.shape[1]
    per_point = np.empty(outer)
    for i in range(outer):
        x1 = sample_posterior(dist, schedule, xts[i], t, inner, rng)
        if n > 1:
            rest = sample_data(dist, inner * (n - 1), rng).reshape(inner, n - 1, d)
            refs = np.concatenate([x1[:, None, :], rest], axis=1)
        else:
            refs = x1[:, None, :]
        tgt = stf_target_multi(schedule, np.broadcast_to(xts[i], (inner, d)), refs, t)
        per_point[i] = np.var(tgt, axis=0, ddof=1).sum()
    return float(per_point.mean()), float(per_point.std(ddof=1) / np.sqrt(outer))


# ---------------------------------------------------------------------------
# f-divergence
# ---------------------------------------------------------------------------

def f_div_scalar(y):
    """Piecewise divergence generator; convex, f(1) = 0, continuous at 1.5."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("generator argument must be positive")
    out = np.where(y < 1.5, (1.0 / y - 1.0) ** 2, 8.0 * y / 27.0 - 1.0 / 3.0)
    return float(out) if out.ndim == 0 else out


def _f_divergence_rows(p, q):
    """Row-wise sum_k q_k f(p_k / q_k), with exact limits at zero masses.

    Vanishing q with positive p contributes the linear-branch limit 8p/27;
    vanishing p with positive q genuinely diverges and yields +inf.
    """
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        y = p / q
        quad = q * np.square((q - p) / p)          # q * (1/y - 1)^2
        lin = 8.0 * p / 27.0 - q / 3.0             # q * (8y/27 - 1/3)
        terms = np.where(y < 1.5, quad, lin)
        terms = np.where(q == 0.0, np.where(p > 0.0, 8.0 * p / 27.0, 0.0), terms)
        terms = np.where((p == 0.0) & (q > 0.0), np.inf, terms)
    return terms.sum(axis=1)


def estimate_divergence(dist, schedule, t, outer: int, rng, order: str = POSTERIOR_VS_P0) -> Tuple[float, float]:
    """Average divergence between posterior and prior component weights at t.

    ``order`` selects the argument order: ``p0_vs_posterior`` evaluates
    D_f(prior || posterior), ``posterior_vs_p0`` the reverse.  Both are exact
    sums over components per noisy point; only the outer average is MC.
    """
    if order not in (P0_VS_POSTERIOR, POSTERIOR_VS_P0):
        raise ValueError(f"unknown order {order!r}")
    w = dist.components()[0]
    xts = _draw_noisy(dist, schedule, t, outer, rng)
    r = posterior_weights(dist, schedule, xts, t)
    wb = np.broadcast_to(w, r.shape)
    if order == P0_VS_POSTERIOR:
        vals = _f_divergence_rows(wb, r)
    else:
        vals = _f_divergence_rows(r, wb)
    est = float(vals.mean())
    if not np.isfinite(est):
        return est, float("nan")
    with np.errstate(over="ignore"):
        se = float(vals.std(ddof=1) / np.sqrt(outer))  # may overflow to inf near t=0
    return est, se


# ---------------------------------------------------------------------------
# bias curve and phase scan
# ---------------------------------------------------------------------------

def estimate_bias_curve(dist, schedule, xt, t, n_grid: Sequence[int], trials: int, rng) -> List[Tuple[int, float]]:
    """|| brute-force minimizer - exact score || for each reference size."""
    from .analytic import brute_force_stf_minimizer

    truth = marginal_score(dist, schedule, xt, t)
    out = []
    for n in n_grid:
        est = brute_force_stf_minimizer(dist, schedule, xt, t, n, trials, rng)
        out.append((int(n), float(np.linalg.norm(est - truth))))
    return out


@dataclass
class VarianceReport:
    """Per-time variance and divergence estimates over a scan grid."""

    t_grid: np.ndarray
    v_dsm: np.ndarray
    v_dsm_se: np.ndarray
    v_stf: Dict[int, np.ndarray] = field(default_factory=dict)
    v_stf_se: Dict[int, np.ndarray] = field(default_factory=dict)
    d_p0_post: np.ndarray = None
    d_p0_post_se: np.ndarray = None
    d_post_p0: np.ndarray = None
    d_post_p0_se: np.ndarray = None
    fingerprint: str = ""

    def peak_t(self) -> float:
        return float(self.t_grid[int(np.argmax(self.v_dsm))])

    def normalized(self) -> Dict[str, np.ndarray]:
        """Curves scaled so the largest finite value is 1 (figure reproduction)."""
        out = {}
        curves = {"v_dsm": self.v_dsm, "d_p0_post": self.d_p0_post, "d_post_p0": self.d_post_p0}
        for n, v in self.v_stf.items():
            curves[f"v_stf_n{n}"] = v
        for name, v in curves.items():
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            finite = v[np.isfinite(v)]
            peak = finite.max() if finite.size else 1.0
            out[name] = v / peak if peak > 0 else v.copy()
        return out

    def columns(self) -> Dict[str, np.ndarray]:
        cols = {"t": np.asarray(self.t_grid, dtype=float), "v_dsm": self.v_dsm, "v_dsm_se": self.v_dsm_se}
        for n in sorted(self.v_stf):
            cols[f"v_stf_n{n}"] = self.v_stf[n]
            cols[f"v_stf_n{n}_se"] = self.v_stf_se[n]
        if self.d_p0_post is not None:
            cols["d_t_p0_post"] = self.d_p0_post
            cols["d_t_p0_post_se"] = self.d_p0_post_se
            cols["d_t_post_p0"] = self.d_post_p0
            cols["d_t_post_p0_se"] = self.d_post_p0_se
        return cols

    def to_csv(self, path) -> None:
        from .config import write_csv

        cols = self.columns()
        names = list(cols)
        rows = zip(*(cols[c] for c in names))
        write_csv(path, names, rows, fingerprint=self.fingerprint)


def phase_scan(
    dist,
    schedule: NoiseSchedule,
    t_grid: Sequence[float],
    n_list: Sequence[int],
    outer: int,
    inner: int,
    rng: np.random.Generator,
    fingerprint: str = "",
) -> VarianceReport:
    """Full scan over the time grid; one spawned RNG stream per grid point.

    Streams are keyed by grid index, so the scan is reproducible and the
    per-time work could run in parallel without changing results.
    """
    t_grid = np.asarray(list(t_grid), dtype=float)
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    n_list = [int(n) for n in n_list]
    T = t_grid.size
    rep = VarianceReport(
        t_grid=t_grid,
        v_dsm=np.empty(T),
        v_dsm_se=np.empty(T),
        v_stf={n: np.empty(T) for n in n_list},
        v_stf_se={n: np.empty(T) for n in n_list},
        d_p0_post=np.empty(T),
        d_p0_post_se=np.empty(T),
        d_post_p0=np.empty(T),
        d_post_p0_se=np.empty(T),
        fingerprint=fingerprint,
    )
    streams = rng.spawn(T)
    for i, t in enumerate(t_grid):
        sub = streams[i]
        rep.v_dsm[i], rep.v_dsm_se[i] = estimate_v_dsm(dist, schedule, t, outer, inner, sub)
        for n in n_list:
            rep.v_stf[n][i], rep.v_stf_se[n][i] = estimate_v_stf(dist, schedule, t, n, outer, inner, sub)
        rep.d_p0_post[i], rep.d_p0_post_se[i] = estimate_divergence(
            dist, schedule, t, outer, sub, order=P0_VS_POSTERIOR
        )
        rep.d_post_p0[i], rep.d_post_p0_se[i] = estimate_divergence(
            dist, schedule, t, outer, sub, order=POSTERIOR_VS_P0
        )
    return rep
