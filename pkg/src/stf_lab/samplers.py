"""Reverse-time generation: probability-flow ODE and SDE samplers.

The probability-flow ODE shares the forward process marginals:

    dx/dt = f(x, t) - 0.5 * g(t)**2 * score(x, t),

with f = 0 for unit-scale kernels (ve/edm) and f = -0.5 * beta(t) * x for vp.
Integrated from t = 1 down to a terminal time, or across a sigma grid ending
exactly at 0 for the 2nd-order method.  The reverse SDE adds g dw and keeps
the full g**2 score drift.

Samplers are driven by a :class:`ScoreSource` -- either a trained network or
the analytic oracle -- so sampler behaviour can be tested with no training
error in the loop.  All samplers are deterministic given (rng, config).
"""

from __future__ import annotations

import warnings
from typing import Tuple

import numpy as np

from .analytic import marginal_score
from .kernels import NoiseSchedule, VP


class StepSizeUnderflow(RuntimeError):
    def __init__(self, t_reached: float):
        super().__init__(f"adaptive step size underflow at t = {t_reached:.6g}")
        self.t_reached = t_reached


class AnalyticScore:
    """Exact marginal score of a mixture/empirical distribution."""

    def __init__(self, dist, schedule: NoiseSchedule):
        self.dist = dist
        self.schedule = schedule
        self.dim = dist.dim

    def score(self, x, t):
        return marginal_score(self.dist, self.schedule, x, t)


class NetScore:
    """Wraps a trained ScoreNet as a sampler score source."""

    def __init__(self, net):
        self.net = net
        self.dim = net.dim

    def score(self, x, t):
        return self.net.forward(x, t)


_DEFAULT_T_END = {"ve": 1e-5, "vp": 1e-3, "edm": 1e-5}


def _terminal_time(schedule, t_end):
    return _DEFAULT_T_END[schedule.kind] if t_end is None else float(t_end)


def ode_drift(source, schedule: NoiseSchedule, xt, t):
    """Probability-flow drift f - 0.5 g^2 score; t scalar or per-row."""
    xt = np.asarray(xt, dtype=float)
    s = np.asarray(source.score(xt, t), dtype=float)
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("score source returned non-finite values")
    g2 = np.asarray(schedule.diffusion_coeff(t), dtype=float) ** 2
    if g2.ndim == 1 and xt.ndim == 2:
        g2 = g2[:, None]
    drift = -0.5 * g2 * s
    if schedule.kind == VP:
        beta = schedule.diffusion_coeff(t) ** 2  # g^2 = beta(t) for vp
        if np.ndim(beta) == 1 and xt.ndim == 2:
            beta = np.asarray(beta)[:, None]
        drift = drift - 0.5 * beta * xt
    return drift


def edm_sigma_grid(steps: int, sigma_min: float, sigma_max: float, rho: float) -> np.ndarray:
    """Rho-power interpolated sigma grid of steps+1 values, last exactly 0."""
    if steps < 2:
        raise ValueError("need at least 2 steps")
    if rho <= 0:
        raise ValueError("rho must be positive")
    i = np.arange(steps)
    hi = sigma_max ** (1.0 / rho)
    lo = sigma_min ** (1.0 / rho)
    grid = (hi + i / (steps - 1) * (lo - hi)) ** rho
    return np.append(grid, 0.0)


def sample_heun(source, schedule: NoiseSchedule, steps: int, batch: int,
                rng: np.random.Generator) -> np.ndarray:
    """2nd-order Heun integration across the sigma grid, Euler on the last step.

    Costs 2*steps - 1 score evaluations.  For a vp schedule (non-unit mean
    scale) the grid is converted to times by schedule inversion and the ODE
    is integrated in t instead; a warning notes the conversion.
    """
    sigma_hi = schedule.prior_sigma()
    x = sigma_hi * rng.standard_normal((batch, source.dim))
    if schedule.kind == VP:
        warnings.warn("sigma grid requested with a vp schedule; converting via sigma inversion")
        return _heun_time_grid(source, schedule, steps, x)
    grid = edm_sigma_grid(steps, schedule.sigma_min, schedule.sigma_max,
                          schedule.rho if schedule.kind == "edm" else 7.0)

    def dxdsigma(xc, sigma):
        t = float(np.clip(schedule.sigma_inverse(sigma), 0.0, 1.0))
        return -sigma * np.asarray(source.score(xc, t), dtype=float)

    for i in range(steps):
        s_cur, s_next = grid[i], grid[i + 1]
        d_cur = dxdsigma(x, s_cur)
        x_pred = x + (s_next - s_cur) * d_cur
        if s_next == 0.0:
            x = x_pred  # Euler final step; no score evaluation at sigma = 0
        else:
            d_next = dxdsigma(x_pred, s_next)
            x = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {i}")
    return x


def _heun_time_grid(source, schedule, steps, x):
    grid = edm_sigma_grid(steps, float(schedule.sigma_at(_DEFAULT_T_END["vp"])),
                          schedule.prior_sigma(), 7.0)
    t_grid = np.clip(schedule.sigma_inverse(np.maximum(grid[:-1], 1e-300)), 0.0, 1.0)
    t_grid = np.append(t_grid, 0.0)
    for i in range(steps):
        t_cur, t_next = float(t_grid[i]), float(t_grid[i + 1])
        d_cur = ode_drift(source, schedule, x, t_cur)
        x_pred = x + (t_next - t_cur) * d_cur
        if t_next == 0.0:
            x = x_pred
        else:
            d_next = ode_drift(source, schedule, x_pred, t_next)
            x = x + (t_next - t_cur) * 0.5 * (d_cur + d_next)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {i}")
    return x


def sample_euler(source, schedule: NoiseSchedule, steps: int, batch: int,
                 rng: np.random.Generator, t_end: float = None) -> np.ndarray:
    """First-order integration of the probability flow on a uniform time grid."""
    if steps < 1:
        raise ValueError("need at least one step")
    t_end = _terminal_time(schedule, t_end)
    x = schedule.prior_sigma() * rng.standard_normal((batch, source.dim))
    grid = np.linspace(1.0, t_end, steps + 1)
    for i in range(steps):
        dt = float(grid[i + 1] - grid[i])
        x = x + dt * ode_drift(source, schedule, x, float(grid[i]))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {i}")
    return x


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) adaptive integration
# ---------------------------------------------------------------------------

# standard tableau; no FSAL reuse, all 7 stages evaluated per attempt
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: local error estimate weights
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def sample_rk45(source, schedule: NoiseSchedule, atol: float, rtol: float, batch: int,
                rng: np.random.Generator, t_end: float = None) -> Tuple[np.ndarray, int]:
    """Adaptive 5(4) integration of the flow from t = 1 to the terminal time.

    Every batch element carries its own time and step size (no lockstep);
    acceptance uses the RMS mixed norm against atol + rtol * |x| and the
    initial step comes from the standard automatic heuristic.  Returns the
    samples and the total number of score evaluations across the batch.
    """
    if atol <= 0 or rtol <= 0:
        raise ValueError("tolerances must be positive")
    t_end = _terminal_time(schedule, t_end)
    d = source.dim
    x = schedule.prior_sigma() * rng.standard_normal((batch, d))
    t = np.full(batch, 1.0)
    nfe = np.zeros(batch, dtype=int)

    def f(xa, ta):
        return ode_drift(source, schedule, xa, ta)

    # automatic initial step (per element), integrating backwards (h < 0)
    f0 = f(x, t)
    nfe += 1
    scale = atol + rtol * np.abs(x)
    d0 = np.sqrt(np.mean((x / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    f1 = f(x - h0[:, None] * f0, t - h0)
    nfe += 1
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
    h1 = np.where(np.maximum(d1, d2) <= 1e-15,
                  np.maximum(1e-6, h0 * 1e-3),
                  (0.01 / np.maximum(d1, d2)) ** 0.2)
    h = -np.minimum(100.0 * h0, h1)
    h = np.maximum(h, t_end - t)  # both negative: do not overshoot

    active = np.ones(batch, dtype=bool)
    k = np.empty((batch, 7, d))
    max_iter = 100_000
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        xa, ta, ha = x[idx], t[idx], h[idx]
        for s in range(7):
            xs = xa if s == 0 else xa + ha[:, None] * np.einsum(
                "j,bjd->bd", _DP_A[s], k[idx][:, :s, :][:, : len(_DP_A[s]), :])
            k[idx, s] = f(xs, ta + _DP_C[s] * ha)
        nfe[idx] += 7
        ks = k[idx]
        x_new = xa + ha[:, None] * np.einsum("j,bjd->bd", _DP_B5, ks)
        err_vec = ha[:, None] * np.einsum("j,bjd->bd", _DP_E, ks)
        scale = atol + rtol * np.maximum(np.abs(xa), np.abs(x_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))

        accept = err <= 1.0
        t_acc = ta + ha
        x[idx[accept]] = x_new[accept]
        t[idx[accept]] = t_acc[accept]

        with np.errstate(divide="ignore"):
            factor = 0.9 * err**-0.2
        factor = np.clip(np.where(np.isfinite(factor), factor, 5.0), 0.2, 5.0)
        h_new = ha * factor
        if np.any(np.abs(h_new) < 1e-14):
            raise StepSizeUnderflow(float(t[idx][np.argmin(np.abs(h_new))]))
        h[idx] = h_new
        # clamp to the terminal time and retire finished elements
        h[idx] = np.maximum(h[idx], t_end - t[idx])
        finished = t[idx] <= t_end + 1e-13
        active[idx[finished]] = False
    else:
        raise RuntimeError("rk45 failed to converge within the iteration budget")
    return x, int(nfe.sum())


# ---------------------------------------------------------------------------
# SDE samplers
# ---------------------------------------------------------------------------

def sample_euler_maruyama(source, schedule: NoiseSchedule, steps: int, batch: int,
                          rng: np.random.Generator, t_end: float = None,
                          noise_scale: float = 1.0) -> np.ndarray:
    """Euler-Maruyama on the reverse SDE over a uniform time grid.

    ``noise_scale = 0`` degenerates to deterministic integration of the
    full-drift field f - g^2 * score (not the probability flow).
    """
    if steps < 1:
        raise ValueError("need at least one step")
    t_end = _terminal_time(schedule, t_end)
    x = schedule.prior_sigma() * rng.standard_normal((batch, source.dim))
    grid = np.linspace(1.0, t_end, steps + 1)
    for i in range(steps):
        t_cur = float(grid[i])
        dt = float(grid[i + 1] - grid[i])  # negative
        g = float(schedule.diffusion_coeff(t_cur))
        s = np.asarray(source.score(x, t_cur), dtype=float)
        drift = -g**2 * s
        if schedule.kind == VP:
            drift = drift - 0.5 * g**2 * x  # f = -beta/2 x with beta = g^2
        z = rng.standard_normal(x.shape)
        x = x + drift * dt + noise_scale * g * np.sqrt(-dt) * z
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {i}")
    return x


def sample_pc(source, schedule: NoiseSchedule, steps: int, snr: float, corrector_steps: int,
              batch: int, rng: np.random.Generator, t_end: float = None) -> np.ndarray:
    """Predictor-corrector: EM predictor plus Langevin refinement per step.

    The Langevin step size follows the annealed-Langevin rule
    eta = 2 * (snr * ||z|| / ||score||)^2 with the norms averaged over the
    batch (a per-element ratio blows up near score zeros in low dimension);
    elements whose own score norm is zero skip the corrector update.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    if corrector_steps < 0:
        raise ValueError("corrector_steps must be >= 0")
    t_end = _terminal_time(schedule, t_end)
    x = schedule.prior_sigma() * rng.standard_normal((batch, source.dim))
    grid = np.linspace(1.0, t_end, steps + 1)
    for i in range(steps):
        t_cur = float(grid[i])
        t_next = float(grid[i + 1])
        dt = t_next - t_cur
        g = float(schedule.diffusion_coeff(t_cur))
        s = np.asarray(source.score(x, t_cur), dtype=float)
        drift = -g**2 * s
        if schedule.kind == VP:
            drift = drift - 0.5 * g**2 * x
        x = x + drift * dt + g * np.sqrt(-dt) * rng.standard_normal(x.shape)
        for _ in range(corrector_steps):
            s = np.asarray(source.score(x, t_next), dtype=float)
            z = rng.standard_normal(x.shape)
            s_norm = np.linalg.norm(s, axis=1)
            ok = s_norm > 0
            if not ok.any():
                continue
            eta_all = 2.0 * (snr * np.linalg.norm(z, axis=1).mean() / s_norm[ok].mean()) ** 2
            eta = np.where(ok, eta_all, 0.0)
            x = x + eta[:, None] * s + np.sqrt(2.0 * eta)[:, None] * z
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {i}")
    return x
