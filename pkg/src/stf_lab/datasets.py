"""Synthetic data distributions with exact scores, plus CSV point files.

Two kinds of distribution are supported and treated uniformly by the
analytic module:

* :class:`GaussianMixture` -- K isotropic components sharing one std
  ``sigma_hat`` (``sigma_hat = 0`` degenerates to a mixture of deltas);
* :class:`EmpiricalSet` -- a finite point set with uniform weights,
  equivalent to a ``GaussianMixture`` with ``sigma_hat = 0`` on the same
  points.

The CSV interchange format is one point per row of decimal floats, with
an optional first line ``d=<dim>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray  # (K,) probabilities
    means: np.ndarray    # (K, d)
    sigma_hat: float     # shared isotropic component std, >= 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        if w.ndim != 1 or m.shape[0] != w.shape[0]:
            raise ValueError("weights and means must agree on the component count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(m)):
            raise ValueError("means must be finite")
        if self.sigma_hat < 0:
            raise ValueError("sigma_hat must be >= 0")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """i.i.d. draws: component index from the weights, then Gaussian noise."""
        if count == 0:
            return np.empty((0, self.dim))
        idx = rng.choice(self.weights.shape[0], size=count, p=self.weights)
        out = self.means[idx]
        if self.sigma_hat > 0:
            out = out + self.sigma_hat * rng.standard_normal((count, self.dim))
        return out

    def components(self):
        """(weights, means, sigma_hat) -- the uniform mixture view."""
        return self.weights, self.means, self.sigma_hat


@dataclass(frozen=True)
class EmpiricalSet:
    points: np.ndarray  # (N, d)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", p)
        if p.shape[0] < 1:
            raise ValueError("empty dataset")
        if not np.all(np.isfinite(p)):
            raise ValueError("points must be finite")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform draws with replacement (duplicates allowed)."""
        if count == 0:
            return np.empty((0, self.dim))
        idx = rng.integers(0, self.points.shape[0], size=count)
        return self.points[idx]

    def components(self):
        n = self.points.shape[0]
        return np.full(n, 1.0 / n), self.points, 0.0


def make_two_gaussians(d: int, offset: float, sigma_hat: float) -> GaussianMixture:
    """Symmetric pair of components at +-offset * ones(d), weights 1/2 each."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    mu = offset * np.ones(d)
    return GaussianMixture(weights=np.array([0.5, 0.5]), means=np.stack([mu, -mu]), sigma_hat=sigma_hat)


def make_ring(k: int, radius: float, sigma_hat: float) -> GaussianMixture:
    """k equal-weight components at angles 2*pi*j/k on a circle in R^2."""
    if k < 1:
        raise ValueError("need at least one component")
    ang = 2.0 * np.pi * np.arange(k) / k
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return GaussianMixture(weights=np.full(k, 1.0 / k), means=means, sigma_hat=sigma_hat)


def sample_data(dist, count: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. draws from either distribution kind; count=0 gives an empty batch."""
    if count < 0:
        raise ValueError("count must be >= 0")
    return dist.sample(count, rng)


def save_points(path, points: np.ndarray) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"d={points.shape[1]}\n")
        for row in points:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_points(path) -> EmpiricalSet:
    """Load a CSV point file; round-trips :func:`save_points` bit-exactly."""
    rows = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("d="):
                dim = int(line[2:])
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {line!r}") from exc
            if dim is None:
                dim = len(row)
            if len(row) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ValueError("empty dataset")
    return EmpiricalSet(np.asarray(rows))
