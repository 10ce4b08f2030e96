"""
Empirical-measure utilities used by the mean-field generators.
"""

import numpy as np

from model.data_models import EmpiricalMeasure
from .error_handler import DimensionMismatch


def as_measure(samples) -> EmpiricalMeasure:
    """Wrap raw samples; measures pass through unchanged."""
    if isinstance(samples, EmpiricalMeasure):
        return samples
    return EmpiricalMeasure(samples)


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    """Componentwise sample average, shape (d,)."""
    return as_measure(mu).samples.mean(axis=0)


def wasserstein1_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """
    Wasserstein-1 distance between two equal-size one-dimensional empirical measures

    The optimal coupling in one dimension pairs order statistics.

    Raises:
        DimensionMismatch: either measure has d != 1, or the sample counts differ
    """
    mu, nu = as_measure(mu), as_measure(nu)
    if mu.d != 1 or nu.d != 1:
        raise DimensionMismatch("wasserstein1_1d needs one-dimensional measures",
                                {"d_mu": mu.d, "d_nu": nu.d})
    if mu.N != nu.N:
        raise DimensionMismatch("wasserstein1_1d needs equal sample counts",
                                {"N_mu": mu.N, "N_nu": nu.N})
    a = np.sort(mu.samples[:, 0])
    b = np.sort(nu.samples[:, 0])
    return float(np.mean(np.abs(a - b)))


def d1_to_dirac0(mu: EmpiricalMeasure) -> float:
    """Exact Wasserstein-1 distance to the Dirac mass at the origin, any dimension."""
    mu = as_measure(mu)
    return float(np.mean(np.linalg.norm(mu.samples, axis=1)))


def standard_error(values: np.ndarray) -> float:
    """Standard error of a sample mean (0 for a single sample)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))
