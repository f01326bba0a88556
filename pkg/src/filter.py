"""
Particle filter over 2-D positions.

Heading is an input shared by every particle, not filter state. Resampling
copies positions exactly; the only exploration noise comes from propagate().
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.errors import DimensionMismatchError, InvalidArgumentError, UnnormalizedError

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9

SYSTEMATIC = "systematic"
MULTINOMIAL = "multinomial"
EVERY_STEP_MULTINOMIAL = "every-step-multinomial"
RESAMPLING_STRATEGIES = (SYSTEMATIC, MULTINOMIAL, EVERY_STEP_MULTINOMIAL)


class Particle(NamedTuple):
    x: float
    y: float
    weight: float


class OdometryStep(NamedTuple):
    dx: float
    dy: float
    dpsi: float


class Estimate(NamedTuple):
    mean: tuple
    std: tuple
    rms_dispersion: float


@dataclass
class ParticleSet:
    """N weighted positions; `xy` is (N, 2), `weights` is (N,)."""
    xy: np.ndarray
    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.xy.shape[0] < 1:
            raise InvalidArgumentError("A particle set needs at least one particle")
        if self.weights.shape[0] != self.xy.shape[0]:
            raise DimensionMismatchError(
                f"{self.xy.shape[0]} positions but {self.weights.shape[0]} weights")
        if not np.all(np.isfinite(self.xy)):
            raise InvalidArgumentError("Particle positions must be finite")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise InvalidArgumentError("Particle weights must be finite and non-negative")

    @classmethod
    def uniform(cls, xy):
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        n = xy.shape[0]
        return cls(xy, np.full(n, 1.0 / n), normalized=True)

    @classmethod
    def from_particles(cls, particles):
        particles = list(particles)
        return cls.normalize(cls([(p.x, p.y) for p in particles], [p.weight for p in particles]))

    @staticmethod
    def normalize(particle_set):
        total = particle_set.weights.sum()
        if not total > 0:
            raise UnnormalizedError("Cannot normalize a particle set whose weights sum to zero")
        return ParticleSet(particle_set.xy, particle_set.weights / total, normalized=True)

    def __len__(self):
        return self.xy.shape[0]

    def __getitem__(self, i):
        return Particle(float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.weights[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def check_normalized(self):
        if not self.normalized or abs(self.weights.sum() - 1.0) > NORMALIZATION_TOLERANCE:
            raise UnnormalizedError("Operation requires a normalized particle set")


@dataclass(frozen=True)
class MeasurementModel:
    """Gaussian likelihood of a similarity score around the expected match score `mu`."""
    mu: float = 1.0
    sigma: float = 0.3
    floor: float = 1e-12

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgumentError(f"Measurement sigma must be positive, got {self.sigma}")
        if not self.floor > 0:
            raise InvalidArgumentError(f"Likelihood floor must be positive, got {self.floor}")

    def likelihood(self, scores):
        scores = np.asarray(scores, dtype=np.float64)
        observed = ~np.isnan(scores)
        gaussian = np.exp(-(np.where(observed, scores, self.mu) - self.mu) ** 2 / (2.0 * self.sigma ** 2))
        return np.where(observed, np.maximum(gaussian, self.floor), self.floor)


def init_gaussian(center, sigma, n, rng):
    """n particles drawn i.i.d. from N(center, sigma^2 I) with uniform weights."""
    if not (math.isfinite(sigma) and sigma > 0):
        raise InvalidArgumentError(f"Initial sigma must be positive, got {sigma}")
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"Particle count must be a positive integer, got {n}")
    xy = np.asarray(center, dtype=np.float64)[None, :] + rng.normal(0.0, sigma, size=(int(n), 2))
    return ParticleSet.uniform(xy)


def propagate(particle_set, odo, noise_frac, rng):
    """
    Moves every particle by the odometry displacement plus Gaussian noise
    with per-axis std noise_frac * |(dx, dy)|. Particle i always takes the
    i-th pair of draws, so results do not depend on evaluation order.
    """
    if not noise_frac >= 0:
        raise InvalidArgumentError(f"Odometry noise fraction must be >= 0, got {noise_frac}")
    step = np.array([odo.dx, odo.dy], dtype=np.float64)
    std = noise_frac * math.hypot(odo.dx, odo.dy)
    xy = particle_set.xy + step[None, :]
    if std > 0:
        xy = xy + rng.normal(0.0, std, size=xy.shape)
    return ParticleSet(xy, particle_set.weights.copy(), normalized=particle_set.normalized)


def reweight(particle_set, scores, model):
    """Multiplies weights by the measurement likelihood of each score, then renormalizes."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != len(particle_set):
        raise DimensionMismatchError(f"Got {scores.shape[0]} scores for {len(particle_set)} particles")
    likelihood = model.likelihood(scores)
    weights = particle_set.weights * likelihood
    total = weights.sum()
    if not total > 0:
        # prior weights were all zero; fall back to the likelihood alone
        weights, total = likelihood, likelihood.sum()
    if np.all(likelihood == model.floor):
        logger.warning("Every particle is at the likelihood floor")
    return ParticleSet(particle_set.xy, weights / total, normalized=True)


def ess(particle_set):
    """Effective sample size 1 / sum(w^2)."""
    particle_set.check_normalized()
    return float(1.0 / np.square(particle_set.weights).sum())


def _select(weights, positions):
    """Index of the inclusive cumulative-weight interval holding each position."""
    indices = np.searchsorted(np.cumsum(weights), positions, side="right")
    # positions past a cumulative sum that rounded below 1 go to the last live particle
    last_live = int(np.flatnonzero(weights > 0)[-1])
    return np.minimum(indices, last_live)


def _offspring(particle_set, indices):
    n = len(particle_set)
    return ParticleSet(particle_set.xy[indices].copy(), np.full(n, 1.0 / n), normalized=True)


def multinomial_indices(weights, rng):
    return _select(weights, rng.random(weights.shape[0]))


def systematic_indices(weights, rng, offset=None):
    """
    One draw u0 ~ U[0, 1/N); picks the particle whose inclusive cumulative
    weight interval contains u0 + k/N for k = 0..N-1.
    """
    n = weights.shape[0]
    if offset is None:
        offset = rng.uniform(0.0, 1.0 / n)
    return _select(weights, offset + np.arange(n) / n)


def resample_multinomial(particle_set, rng):
    particle_set.check_normalized()
    return _offspring(particle_set, multinomial_indices(particle_set.weights, rng))


def resample_systematic(particle_set, rng, offset=None):
    particle_set.check_normalized()
    return _offspring(particle_set, systematic_indices(particle_set.weights, rng, offset))


def maybe_resample(particle_set, threshold_frac, strategy, rng):
    """
    Resamples when ESS < threshold_frac * N, or always for the every-step
    multinomial strategy. Returns (particle_set, resampled).
    """
    if not 0 < threshold_frac <= 1:
        raise InvalidArgumentError(f"ESS threshold must be in (0, 1], got {threshold_frac}")
    if strategy == EVERY_STEP_MULTINOMIAL:
        return resample_multinomial(particle_set, rng), True
    if strategy not in (SYSTEMATIC, MULTINOMIAL):
        raise InvalidArgumentError(f"Unknown resampling strategy {strategy!r}")
    if ess(particle_set) >= threshold_frac * len(particle_set):
        return particle_set, False
    if strategy == SYSTEMATIC:
        return resample_systematic(particle_set, rng), True
    return resample_multinomial(particle_set, rng), True


def estimate(particle_set):
    """Weighted mean, weighted per-axis std and RMS dispersion about the mean."""
    particle_set.check_normalized()
    w = particle_set.weights
    mean = w @ particle_set.xy
    residual = particle_set.xy - mean[None, :]
    variance = w @ np.square(residual)
    return Estimate(mean=(float(mean[0]), float(mean[1])),
                    std=(float(math.sqrt(variance[0])), float(math.sqrt(variance[1]))),
                    rms_dispersion=float(math.sqrt(variance.sum())))
