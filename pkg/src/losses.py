"""
Metric-learning losses with analytic gradients, and Fancy PCA color augmentation.

Sign convention: triplet_loss implements log(1 + exp(-alpha * (d_pos - d_neg)))
as written, so it shrinks as d_pos grows. Read d_pos and d_neg as
similarity-like scores (higher means closer), not as distances.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from src.errors import InvalidArgumentError

# Std of the standard Fancy PCA draw; alpha_scale multiplies it.
SIGMA_DRAW = 0.1


def softplus(x):
    """log(1 + exp(x)) without overflow for large |x|."""
    return -log_expit(-np.asarray(x, dtype=np.float64))


def _check_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidArgumentError(f"{name} must be finite, got {value}")


def triplet_loss(d_pos, d_neg, alpha=10.0):
    _check_finite(d_pos=d_pos, d_neg=d_neg, alpha=alpha)
    if alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    return float(softplus(-alpha * (d_pos - d_neg)))


def triplet_loss_grad(d_pos, d_neg, alpha=10.0):
    """Returns (dL/dd_pos, dL/dd_neg)."""
    _check_finite(d_pos=d_pos, d_neg=d_neg, alpha=alpha)
    if alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    slope = alpha * float(expit(-alpha * (d_pos - d_neg)))
    return -slope, slope


@dataclass(frozen=True)
class TrinomialParams:
    """
    Slopes, margins and pair counts of the three trinomial terms.

    The defaults (alpha 10, margin 0, count 1) are library defaults only.
    """
    alpha_p: float = 10.0
    alpha_n: float = 10.0
    alpha_semi: float = 10.0
    m_p: float = 0.0
    m_n: float = 0.0
    m_semi: float = 0.0
    n_p: int = 1
    n_n: int = 1
    n_semi: int = 1

    def __post_init__(self):
        for name in ("alpha_p", "alpha_n", "alpha_semi"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {value}")
        for name in ("m_p", "m_n", "m_semi"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite")
        for name in ("n_p", "n_n", "n_semi"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be at least 1, got {getattr(self, name)}")


def trinomial_loss(s_p, s_n, s_semi, params=TrinomialParams()):
    """Positive and semi-positive terms reward high similarity; the negative term penalizes it."""
    _check_finite(s_p=s_p, s_n=s_n, s_semi=s_semi)
    p = params
    positive = softplus(-p.alpha_p * (s_p - p.m_p)) / (p.n_p * p.alpha_p)
    negative = softplus(p.alpha_n * (s_n - p.m_n)) / (p.n_n * p.alpha_n)
    semi = softplus(-p.alpha_semi * (s_semi - p.m_semi)) / (p.n_semi * p.alpha_semi)
    return float(positive + negative + semi)


def trinomial_loss_grad(s_p, s_n, s_semi, params=TrinomialParams()):
    """Returns (dL/ds_p, dL/ds_n, dL/ds_semi); the alphas cancel."""
    _check_finite(s_p=s_p, s_n=s_n, s_semi=s_semi)
    p = params
    return (-float(expit(-p.alpha_p * (s_p - p.m_p))) / p.n_p,
            float(expit(p.alpha_n * (s_n - p.m_n))) / p.n_n,
            -float(expit(-p.alpha_semi * (s_semi - p.m_semi))) / p.n_semi)


def central_difference(func, point, step=1e-5):
    """Central finite-difference gradient of a scalar function of a few scalars."""
    point = [float(v) for v in point]
    grad = []
    for i in range(len(point)):
        up, down = list(point), list(point)
        up[i] += step
        down[i] -= step
        grad.append((func(*up) - func(*down)) / (2.0 * step))
    return tuple(grad)


def principal_components(image):
    """
    Eigen-decomposition of the 3x3 RGB covariance over all pixels.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending and
    eigenvectors as columns.
    """
    pixels = np.asarray(image, dtype=np.float64).reshape(-1, 3)
    if pixels.shape[0] < 1:
        raise InvalidArgumentError("Image must contain at least one pixel")
    centered = pixels - pixels.mean(axis=0)
    covariance = centered.T @ centered / pixels.shape[0]
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    return np.clip(eigenvalues[order], 0.0, None), eigenvectors[:, order]


def pca_perturbation(image, alpha_scale, rng):
    """
    The RGB offset Fancy PCA adds to every pixel: sum_k a_k * lambda_k * e_k,
    a_k ~ N(0, (alpha_scale * SIGMA_DRAW)^2), drawn in eigen-index order.
    """
    eigenvalues, eigenvectors = principal_components(image)
    draws = rng.normal(0.0, 1.0, size=3) * (alpha_scale * SIGMA_DRAW)
    return eigenvectors @ (draws * eigenvalues)


def fancy_pca_augment(image, alpha_scale, rng):
    """Adds one Fancy PCA color shift to every pixel of an (H, W, 3) image in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] * image.shape[1] < 1:
        raise InvalidArgumentError(f"Expected a non-empty (H, W, 3) image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidArgumentError("Image intensities must be finite")
    shift = pca_perturbation(image, alpha_scale, rng)
    return np.clip(image + shift[None, None, :], 0.0, 1.0)
