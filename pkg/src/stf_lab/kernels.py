"""Noise schedules and Gaussian transition kernels.

Three schedule families are supported, all parametrized by a continuous
time t in [0, 1]:

* ``ve``  (variance exploding):   sigma_t = sigma_min * (sigma_max/sigma_min)**t,
  mean scale a_t = 1.
* ``vp``  (variance preserving):  a_t = exp(beta_t) with
  beta_t = -t**2 * (beta_max - beta_min)/4 - t * beta_min/2,
  sigma_t = sqrt(1 - exp(2*beta_t)); satisfies a_t**2 + sigma_t**2 = 1.
* ``edm`` (rho-power interpolation):
  sigma_t = (t * sigma_max**(1/rho) + (1-t) * sigma_min**(1/rho))**rho,
  a_t = 1.

The transition kernel is p(x_t | x_0) = N(a_t * x_0, sigma_t**2 * I)
throughout.  Time is the canonical parametrization; sigma-parametrized
entry points go through :meth:`NoiseSchedule.sigma_inverse`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

VE = "ve"
VP = "vp"
EDM = "edm"

_KINDS = (VE, VP, EDM)


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("time values must be finite")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"time outside [0, 1]: {t!r}")
    return t


@dataclass(frozen=True)
class NoiseSchedule:
    """A noise schedule plus its Gaussian transition kernel.

    Use the :func:`ve`, :func:`vp`, :func:`edm` factories rather than the
    constructor.  ``weighting`` optionally overrides the default loss
    weight lambda(t) = sigma_t**2.
    """

    kind: str
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    rho: float = 7.0
    weighting: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, compare=False
    )

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        params = (self.sigma_min, self.sigma_max, self.beta_min, self.beta_max, self.rho)
        if not all(math.isfinite(p) for p in params):
            raise ValueError("schedule parameters must be finite")
        if self.kind in (VE, EDM):
            if not (0.0 < self.sigma_min < self.sigma_max):
                raise ValueError("need 0 < sigma_min < sigma_max")
        if self.kind == VP:
            if not (0.0 <= self.beta_min < self.beta_max):
                raise ValueError("need 0 <= beta_min < beta_max")
        if self.kind == EDM and self.rho <= 0.0:
            raise ValueError("rho must be positive")

    # -- core maps --------------------------------------------------------

    def sigma_at(self, t):
        """Standard deviation of the transition kernel at time t."""
        t = _check_time(t)
        if self.kind == VE:
            return self.sigma_min * (self.sigma_max / self.sigma_min) ** t
        if self.kind == EDM:
            lo = self.sigma_min ** (1.0 / self.rho)
            hi = self.sigma_max ** (1.0 / self.rho)
            return (t * hi + (1.0 - t) * lo) ** self.rho
        # VP: sigma_t = sqrt(1 - exp(2*beta_t)); expm1 keeps precision near t=0
        return np.sqrt(-np.expm1(2.0 * self._vp_log_scale(t)))

    def scale_at(self, t):
        """Mean scale a_t of the kernel; identically 1 for ve/edm."""
        t = _check_time(t)
        if self.kind == VP:
            return np.exp(self._vp_log_scale(t))
        return np.ones_like(t)

    def _vp_log_scale(self, t):
        return -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min

    def sigma_inverse(self, sigma):
        """Return the t with sigma_at(t) == sigma (exact closed-form inverse)."""
        sigma = np.asarray(sigma, dtype=float)
        if self.kind == VE:
            return np.log(sigma / self.sigma_min) / math.log(self.sigma_max / self.sigma_min)
        if self.kind == EDM:
            lo = self.sigma_min ** (1.0 / self.rho)
            hi = self.sigma_max ** (1.0 / self.rho)
            return (sigma ** (1.0 / self.rho) - lo) / (hi - lo)
        # VP: solve the quadratic  t**2*db/4 + t*beta_min/2 + log(1-sigma^2)/2 = 0
        db = self.beta_max - self.beta_min
        c = -0.5 * np.log1p(-np.square(sigma))
        disc = 0.25 * self.beta_min**2 + db * c
        return (-0.5 * self.beta_min + np.sqrt(disc)) / (0.5 * db)

    # -- kernel operations -------------------------------------------------

    def perturb(self, x0, t, noise):
        """a_t * x0 + sigma_t * noise, with t scalar or per-row array."""
        x0 = np.asarray(x0, dtype=float)
        noise = np.asarray(noise, dtype=float)
        if x0.shape != noise.shape:
            raise ValueError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
        a, s = self._broadcast_at(t, x0.ndim)
        return a * x0 + s * noise

    def kernel_score(self, x0, xt, t):
        """Gradient of log p(x_t | x_0) at xt: (a_t*x0 - xt) / sigma_t**2."""
        x0 = np.asarray(x0, dtype=float)
        xt = np.asarray(xt, dtype=float)
        if x0.shape != xt.shape:
            raise ValueError(f"shape mismatch: x0 {x0.shape} vs xt {xt.shape}")
        a, s = self._broadcast_at(t, x0.ndim)
        return (a * x0 - xt) / s**2

    def _broadcast_at(self, t, ndim):
        """a_t and sigma_t shaped to broadcast against an (..., d) array."""
        a = self.scale_at(t)
        s = self.sigma_at(t)
        if np.ndim(a) == 1 and ndim == 2:
            a = a[:, None]
            s = s[:, None]
        return a, s

    def diffusion_coeff(self, t):
        """Diffusion coefficient g(t) of the forward SDE.

        Satisfies g(t)**2 = d(sigma_t**2)/dt / a_t**2, so that the SDE
        reproduces the transition kernel.
        """
        t = _check_time(t)
        if self.kind == VE:
            return self.sigma_at(t) * math.sqrt(2.0 * math.log(self.sigma_max / self.sigma_min))
        if self.kind == VP:
            return np.sqrt(self.beta_min + t * (self.beta_max - self.beta_min))
        # EDM: g^2 = 2 * sigma * dsigma/dt
        lo = self.sigma_min ** (1.0 / self.rho)
        hi = self.sigma_max ** (1.0 / self.rho)
        base = t * hi + (1.0 - t) * lo
        dsigma = self.rho * (hi - lo) * base ** (self.rho - 1.0)
        return np.sqrt(2.0 * base**self.rho * dsigma)

    def loss_weight(self, t):
        """Loss weight lambda(t); defaults to sigma_t**2, override via ``weighting``."""
        if self.weighting is not None:
            return np.asarray(self.weighting(_check_time(t)), dtype=float)
        return self.sigma_at(t) ** 2

    def prior_sigma(self) -> float:
        """Std of the t=1 prior used to initialize reverse-time samplers."""
        return float(self.sigma_at(1.0))


def ve(sigma_min: float = 0.01, sigma_max: float = 50.0, weighting=None) -> NoiseSchedule:
    return NoiseSchedule(VE, sigma_min=sigma_min, sigma_max=sigma_max, weighting=weighting)


def vp(beta_min: float = 0.1, beta_max: float = 20.0, weighting=None) -> NoiseSchedule:
    return NoiseSchedule(VP, beta_min=beta_min, beta_max=beta_max, weighting=weighting)


def edm(sigma_min: float = 0.002, sigma_max: float = 80.0, rho: float = 7.0, weighting=None) -> NoiseSchedule:
    return NoiseSchedule(EDM, sigma_min=sigma_min, sigma_max=sigma_max, rho=rho, weighting=weighting)


@dataclass(frozen=True)
class TimeSampler:
    """Training-time distribution over t.

    ``uniform`` draws t ~ U[t_min, 1].  ``log_normal_sigma`` draws
    log(sigma) ~ N(log_mean, log_std**2), clamps sigma to the schedule's
    range and inverts the schedule to get t.
    """

    kind: str = "uniform"
    t_min: float = 1e-5
    log_mean: float = -1.2
    log_std: float = 1.2

    def __post_init__(self):
        if self.kind not in ("uniform", "log_normal_sigma"):
            raise ValueError(f"unknown time sampler kind {self.kind!r}")
        if not (0.0 < self.t_min < 1.0):
            raise ValueError("t_min must lie in (0, 1)")
        if self.log_std <= 0.0:
            raise ValueError("log_std must be positive")

    def sample(self, schedule: NoiseSchedule, rng: np.random.Generator, size=None):
        if self.kind == "uniform":
            return rng.uniform(self.t_min, 1.0, size=size)
        log_sigma = rng.normal(self.log_mean, self.log_std, size=size)
        if schedule.kind == VP:
            # vp has sigma_at(0) = 0 and no explicit sigma range; floor at t_min
            lo = float(schedule.sigma_at(self.t_min))
        else:
            lo = schedule.sigma_min
        hi = float(schedule.sigma_at(1.0))
        sigma = np.clip(np.exp(log_sigma), lo, hi)
        return schedule.sigma_inverse(sigma)


def sample_time(sampler: TimeSampler, schedule: NoiseSchedule, rng: np.random.Generator, size=None):
    """Module-level alias for :meth:`TimeSampler.sample`."""
    return sampler.sample(schedule, rng, size=size)
