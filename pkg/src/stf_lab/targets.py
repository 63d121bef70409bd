"""Training targets: per-sample kernel scores and self-normalized batch targets.

The per-sample target is the kernel score grad log p(x_t | x_0).  The batch
target replaces it with a kernel-weighted average over a reference batch,

    target(x_t) = sum_k w_k * (a_t x_k - x_t) / sigma_t**2,
    w_k = softmax_k( -||x_t - a_t x_k||^2 / (2 sigma_t**2) ),

which reduces to the per-sample target when the reference batch has a single
element, and equals the exact empirical marginal score when the reference
batch is the entire support of a finite point set.

Weights are computed with max-subtracted softmax so exponents of order -1e8
at the smallest noise levels stay finite.  The distance matrix is evaluated
from explicit differences in chunks over the reference axis; every entry is
independent of the chunk size, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datasets import sample_data
from .kernels import NoiseSchedule, TimeSampler

DSM = "dsm"
STF = "stf"


@dataclass
class TargetBatch:
    """One training batch: noisy inputs, their times, targets and diagnostics."""

    perturbed: np.ndarray            # (B, d)
    times: np.ndarray                # (B,)
    targets: np.ndarray              # (B, d)
    weights_used: Optional[np.ndarray] = None  # (B, n) self-normalized weights


def dsm_target(schedule: NoiseSchedule, x0, xt, t) -> np.ndarray:
    """Per-sample target: the kernel score of the single source point."""
    return schedule.kernel_score(x0, xt, t)


def _weight_matrix(schedule, xt, refs, t, chunk):
    xt = np.atleast_2d(np.asarray(xt, dtype=float))
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    if refs.shape[0] < 1:
        raise ValueError("empty reference batch")
    if refs.shape[1] != xt.shape[1]:
        raise ValueError(f"dimension mismatch: xt d={xt.shape[1]}, refs d={refs.shape[1]}")
    a = np.asarray(schedule.scale_at(t), dtype=float)
    sig = np.asarray(schedule.sigma_at(t), dtype=float)
    a_col = a[:, None] if a.ndim == 1 else a
    dist2 = np.empty((xt.shape[0], refs.shape[0]))
    for lo in range(0, refs.shape[0], chunk):
        hi = min(lo + chunk, refs.shape[0])
        diff = xt[:, None, :] - a_col[..., None] * refs[None, lo:hi, :]
        dist2[:, lo:hi] = np.einsum("bkd,bkd->bk", diff, diff)
    sig_col = sig[:, None] if sig.ndim == 1 else sig
    logits = -dist2 / (2.0 * sig_col**2)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w, a, sig


def stf_weights(schedule: NoiseSchedule, xt, ref_batch, t, chunk: int = 1024) -> np.ndarray:
    """Self-normalized kernel weights of xt against a reference batch.

    Returns (n,) for a single xt, else (B, n); ``t`` may be scalar or per-row.
    Invariant to adding a constant to all log-kernels.
    """
    w, _, _ = _weight_matrix(schedule, xt, ref_batch, t, chunk)
    return w[0] if np.asarray(xt).ndim == 1 else w


def stf_target(schedule: NoiseSchedule, xt, ref_batch, t, chunk: int = 1024, return_weights: bool = False):
    """Kernel-weighted average of per-reference scores at xt."""
    xt_in = np.asarray(xt, dtype=float)
    refs = np.atleast_2d(np.asarray(ref_batch, dtype=float))
    w, a, sig = _weight_matrix(schedule, xt_in, refs, t, chunk)
    xbar = w @ refs
    xt2 = np.atleast_2d(xt_in)
    if a.ndim == 1:
        target = (a[:, None] * xbar - xt2) / sig[:, None] ** 2
    else:
        target = (a * xbar - xt2) / sig**2
    if xt_in.ndim == 1:
        target = target[0]
        w = w[0]
    return (target, w) if return_weights else target


def stf_target_multi(schedule: NoiseSchedule, xt, refs, t) -> np.ndarray:
    """Batch targets where every row has its own reference batch.

    ``xt`` is (B, d), ``refs`` is (B, n, d); same math as :func:`stf_target`
    applied row-wise, used by the variance estimators which resample the
    reference batch per conditional draw.
    """
    xt = np.asarray(xt, dtype=float)
    refs = np.asarray(refs, dtype=float)
    a = float(schedule.scale_at(t))
    sig = float(schedule.sigma_at(t))
    diff = xt[:, None, :] - a * refs
    logits = -np.einsum("bkd,bkd->bk", diff, diff) / (2.0 * sig**2)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    xbar = np.einsum("bk,bkd->bd", w, refs)
    return (a * xbar - xt) / sig**2


def make_training_batch(
    dataset,
    schedule: NoiseSchedule,
    time_sampler: TimeSampler,
    batch_size: int,
    n: int,
    objective: str,
    rng: np.random.Generator,
    chunk: int = 1024,
) -> TargetBatch:
    """One training step's worth of perturbed points, times and targets.

    The reference batch is drawn once per call; the small batch is its first
    ``batch_size`` elements (so every perturbation source is itself a
    reference), each perturbed at its own time.  The per-sample objective
    ignores ``n`` entirely and consumes the identical RNG stream as the
    batch objective with n == batch_size.
    """
    if objective not in (DSM, STF):
        raise ValueError(f"unknown objective {objective!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if objective == STF and n < batch_size:
        raise ValueError(f"reference size n={n} must be >= batch_size={batch_size}")

    if objective == STF:
        refs = sample_data(dataset, n, rng)
        x0 = refs[:batch_size]
    else:
        refs = None
        x0 = sample_data(dataset, batch_size, rng)
    t = time_sampler.sample(schedule, rng, size=batch_size)
    noise = rng.standard_normal(x0.shape)
    xt = schedule.perturb(x0, t, noise)

    if objective == DSM:
        targets = schedule.kernel_score(x0, xt, t)
        weights = None
    else:
        targets, weights = stf_target(schedule, xt, refs, t, chunk=chunk, return_weights=True)
    if not np.all(np.isfinite(targets)):
        raise FloatingPointError("non-finite training targets")
    return TargetBatch(perturbed=xt, times=t, targets=targets, weights_used=weights)
