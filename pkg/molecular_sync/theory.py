"""
Closed-form performance predictions plotted against the Monte Carlo results.
"""
from typing import List, Sequence

import numpy as np

from molecular_sync.ig_distribution import crlb
from molecular_sync.models import ConfusionMatrix, IgParams, ImprovementReport, LevelStats, ModulationScheme, \
    OrderStatSpec, PairMargin
from molecular_sync.order_statistics import os_moments


def level_stats(scheme: ModulationScheme, p: IgParams) -> LevelStats:
    """
    Mean ``v_j`` and variance ``sigma_j^2`` of the earliest arrival among ``L_j`` molecules, for every level.

    Args:
        scheme (ModulationScheme): alphabet and priors
        p (IgParams): delay law

    Returns:
        :rtype: LevelStats
    """
    v, sigma2 = [], []
    for level in scheme.levels:
        mean, variance = os_moments(OrderStatSpec(i=1, n=level, params=p))
        v.append(mean)
        sigma2.append(variance)
    return LevelStats(v=v, sigma2=sigma2, priors=list(scheme.priors))


def ule2_theoretical_mse(var1: float, var2: float, cov: float) -> float:
    """
    MSE of the two-arrival unbiased linear estimator:
    ``(Var1 Var2 - Cov^2) / Var[T_(1) - T_(2)]``.

    Args:
        var1 (float): variance of the earliest arrival
        var2 (float): variance of the second arrival
        cov (float): their covariance

    Returns:
        :rtype: float
    """
    denominator = var1 + var2 - 2.0 * cov
    if not denominator > 0:
        raise ValueError(f"Var[T(1) - T(2)] must be positive, got {denominator}")
    return (var1 * var2 - cov * cov) / denominator


def _spread(ls: LevelStats) -> np.ndarray:
    v = np.asarray(ls.v, dtype=float)
    return (v[None, :] - v[:, None]) ** 2


def decision_directed_mse(ls: LevelStats) -> float:
    """
    ``sum_j p_j sigma_j^2``, the MSE with error-free first-symbol decisions.
    """
    return float(np.asarray(ls.priors) @ np.asarray(ls.sigma2))


def blind_ule1_mse(ls: LevelStats) -> float:
    """
    Variance of the earliest arrival under the level mixture:
    ``sum_j p_j sigma_j^2 + sum_{i<j} (v_j - v_i)^2 p_i p_j``.

    Args:
        ls (LevelStats): per-level moments and priors

    Returns:
        :rtype: float
    """
    priors = np.asarray(ls.priors, dtype=float)
    pairs = np.triu(_spread(ls) * np.outer(priors, priors), k=1)
    return decision_directed_mse(ls) + float(pairs.sum())


def _crossover(ls: LevelStats, q: ConfusionMatrix) -> np.ndarray:
    priors = np.asarray(ls.priors, dtype=float)
    matrix = q.matrix
    if matrix.shape != (priors.size, priors.size):
        raise ValueError(f"confusion matrix {matrix.shape} does not match {priors.size} levels")
    # [i, j] = p_i q_ij + p_j q_ji
    weighted = priors[:, None] * matrix
    return weighted + weighted.T


def df_mse(ls: LevelStats, q: ConfusionMatrix) -> float:
    """
    MSE of decision feedback: ``sum_j p_j sigma_j^2 + sum_{i<j} (v_j - v_i)^2 (p_i q_ij + p_j q_ji)``.

    Args:
        ls (LevelStats): per-level moments and priors
        q (ConfusionMatrix): first-symbol detection probabilities

    Returns:
        :rtype: float
    """
    pairs = np.triu(_spread(ls) * _crossover(ls, q), k=1)
    return decision_directed_mse(ls) + float(pairs.sum())


def df_improves(ls: LevelStats, q: ConfusionMatrix) -> ImprovementReport:
    """
    Decision feedback beats the blind estimator when ``p_i q_ij + p_j q_ji < p_i p_j`` for every pair ``i < j``.

    Returns:
        :rtype: ImprovementReport with margins ``p_i p_j - (p_i q_ij + p_j q_ji)``
    """
    priors = np.asarray(ls.priors, dtype=float)
    crossover = _crossover(ls, q)
    margins = [PairMargin(i=i, j=j, margin=float(priors[i] * priors[j] - crossover[i, j]))
               for i in range(priors.size) for j in range(i + 1, priors.size)]
    return ImprovementReport(improves=all(pair.margin > 0 for pair in margins), margins=margins)


def crlb_curve(n_values: Sequence[int], p: IgParams) -> List[float]:
    if len(n_values) == 0:
        raise ValueError("n_values must not be empty")
    return [crlb(int(n), p) for n in n_values]
