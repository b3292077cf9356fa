"""Probability mass and sampling under a diagonal Gaussian input model.

Box masses use the standard normal CDF per dimension, evaluated on the
side of the mean that avoids catastrophic cancellation, and multiplied
across dimensions (the coordinates are independent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, NumericUnderflowError

UNDERFLOW_MASS = 1e-300


@dataclass(frozen=True)
class GaussianInput:
    """Independent Gaussian input ``x ~ N(mean, diag(std**2))``."""

    mean: np.ndarray
    std: np.ndarray
    seed: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.ndim != 1 or std.ndim != 1 or mean.shape != std.shape or mean.size == 0:
            raise ConfigError(
                f"mean and std must be equal-length vectors, got {mean.shape} and {std.shape}"
            )
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(std)):
            raise ConfigError("mean and std must be finite")
        if np.any(std <= 0):
            raise ConfigError("all std entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def standard(cls, d: int, seed: int = 0) -> "GaussianInput":
        return cls(np.zeros(d), np.ones(d), seed)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class BoxRegion:
    """Closed axis-aligned box ``[lower_1, upper_1] x ... x [lower_d, upper_d]``."""

    lower: np.ndarray
    upper: np.ndarray
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise ConfigError(
                f"box bounds must be equal-length vectors, got {lower.shape} and {upper.shape}"
            )
        if np.any(lower > upper):
            raise ConfigError("box lower bound exceeds upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "_key", (tuple(lower), tuple(upper)))

    def __eq__(self, other):
        return isinstance(other, BoxRegion) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lower - tol) & (points <= self.upper + tol), axis=1)

    def split(self, dim: int, threshold: float) -> tuple["BoxRegion", "BoxRegion"]:
        """Cut at ``threshold`` along ``dim``; the children share one facet."""
        if not self.lower[dim] <= threshold <= self.upper[dim]:
            raise ConfigError(f"threshold {threshold} outside box extent in dimension {dim}")
        left_upper = self.upper.copy()
        left_upper[dim] = threshold
        right_lower = self.lower.copy()
        right_lower[dim] = threshold
        return BoxRegion(self.lower, left_upper), BoxRegion(right_lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def _check_dims(g: GaussianInput, r: BoxRegion):
    if g.dim != r.dim:
        raise ConfigError(f"dimension mismatch: Gaussian has d={g.dim}, box has d={r.dim}")


def _standardize(g: GaussianInput, r: BoxRegion):
    return (r.lower - g.mean) / g.std, (r.upper - g.mean) / g.std


def interval_masses(za, zb) -> np.ndarray:
    """Standard-normal mass of ``[za, zb]`` elementwise, accurate in both tails."""
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    upper_side = ndtr(-za) - ndtr(-zb)
    lower_side = ndtr(zb) - ndtr(za)
    straddle = 1.0 - ndtr(za) - ndtr(-zb)
    mass = np.where(za >= 0, upper_side, np.where(zb <= 0, lower_side, straddle))
    return np.clip(mass, 0.0, 1.0)


def box_probability(g: GaussianInput, r: BoxRegion) -> float:
    """Probability that ``x ~ g`` falls in ``r``."""
    _check_dims(g, r)
    za, zb = _standardize(g, r)
    return float(np.prod(interval_masses(za, zb)))


def initial_box(g: GaussianInput, tail_mass: float = 1e-5, tol: float = 1e-12):
    """Symmetric box ``mean +- k*std`` holding at least ``1 - tail_mass``.

    ``k`` is shared by all dimensions and found by bisection as the smallest
    multiplier meeting the target (to ``tol``). Returns ``(box, k)``.
    """
    if not 0.0 < tail_mass < 1.0:
        raise ConfigError(f"tail_mass must lie in (0, 1), got {tail_mass}")
    target = 1.0 - tail_mass

    def mass(k):
        return box_probability(g, BoxRegion(g.mean - k * g.std, g.mean + k * g.std))

    lo, hi = 0.0, 1.0
    while mass(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 64.0:
            raise ConfigError(f"tail_mass {tail_mass} too small to reach in double precision")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mass(mid) >= target:
            hi = mid
        else:
            lo = mid
    return BoxRegion(g.mean - hi * g.std, g.mean + hi * g.std), hi


def sample_uniform(r: BoxRegion, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform points in ``r`` as an ``(n, d)`` array."""
    if n < 0:
        raise ConfigError(f"sample count must be nonnegative, got {n}")
    u = rng.random((n, r.dim))
    return r.lower + u * r.widths


def sample_truncated_gaussian(
    g: GaussianInput, r: BoxRegion, n: int, rng: np.random.Generator
) -> np.ndarray:
    """``n`` i.i.d. draws from ``g`` conditioned on ``r`` by inverse-CDF truncation.

    Dimensions above the mean are inverted through the survival function so
    that far-tail boxes keep full relative precision.
    """
    _check_dims(g, r)
    if n < 0:
        raise ConfigError(f"sample count must be nonnegative, got {n}")
    p = box_probability(g, r)
    if p < UNDERFLOW_MASS:
        raise NumericUnderflowError(
            f"box probability {p:.3g} is below {UNDERFLOW_MASS:g}; treat the region as negligible"
        )
    za, zb = _standardize(g, r)
    upper_side = za >= 0
    # survival-space bounds for upper-side dimensions, CDF-space otherwise
    p_lo = np.where(upper_side, ndtr(-zb), ndtr(za))
    p_hi = np.where(upper_side, ndtr(-za), ndtr(zb))
    u = p_lo + rng.random((n, g.dim)) * (p_hi - p_lo)
    z = np.where(upper_side, -ndtri(u), ndtri(u))
    z = np.clip(z, za, zb)
    return g.mean + z * g.std


def split_counts(n: int, weights) -> tuple[int, int]:
    """``(n_uniform, n_distribution)`` for a combined batch of ``n`` points."""
    w_uniform, w_distribution = (float(w) for w in weights)
    if w_uniform < 0 or w_distribution < 0 or not math.isclose(w_uniform + w_distribution, 1.0, abs_tol=1e-9):
        raise ConfigError(f"sampling weights must be nonnegative and sum to 1, got {weights}")
    # guard against products like 0.29 * 100 = 28.999999999999996
    n_dist = min(n, int(math.floor(n * w_distribution + 1e-9)))
    return n - n_dist, n_dist


def combined_sample(
    g: GaussianInput, r: BoxRegion, n: int, weights=(0.5, 0.5), rng: np.random.Generator = None
) -> np.ndarray:
    """Truncated-Gaussian points followed by uniform points.

    ``weights`` is ``(w_uniform, w_distribution)``; the distributional share is
    ``floor(n * w_distribution)`` and the remainder is drawn uniformly.
    """
    if rng is None:
        rng = g.rng()
    n_uniform, n_dist = split_counts(n, weights)
    parts = []
    if n_dist:
        parts.append(sample_truncated_gaussian(g, r, n_dist, rng))
    if n_uniform:
        parts.append(sample_uniform(r, n_uniform, rng))
    if not parts:
        return np.empty((0, r.dim))
    return np.concatenate(parts, axis=0)
