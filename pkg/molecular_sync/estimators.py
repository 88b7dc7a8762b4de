"""
Timing-offset estimators: permutation-sum maximum likelihood, unbiased linear estimation (ULE) on the first ``n``
arrivals, its per-symbol iterative form (IULE), the blind first-arrival estimator and decision feedback.

Every estimator is equivariant: shifting all arrivals by ``c`` shifts the estimate by ``c``.
"""
import functools
import itertools
import json
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, special

from molecular_sync.ig_distribution import ig_logpdf
from molecular_sync.models import ComplexityLimitExceeded, ConfusionMatrix, CovarianceConditioningError, \
    IgParams, InfeasibleSearchInterval, IulePrecompute, ModulationScheme, SortedArrivalStats, UleWeights
from molecular_sync.order_statistics import condition_covariance

DEFAULT_MAX_MOLECULES = 8
MLE_GRID_POINTS = 201
MLE_TOLERANCE_FRACTION = 1e-4
MLE_SEARCH_SDS = 10.0


@functools.lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp)


def log_likelihood(tau: float, y: Sequence[float], x: Sequence[float], p: IgParams,
                   max_molecules: int = DEFAULT_MAX_MOLECULES) -> float:
    """
    Log of the permutation-sum likelihood ``sum over permutations u of y of prod f_T(u_i - x_i - tau)``.

    Args:
        tau (float): candidate offset
        y: sorted arrivals
        x: release times
        p (IgParams): delay law
        max_molecules (int): refuse larger observations, the sum has N! terms

    Returns:
        :rtype: float, ``-inf`` when no permutation is feasible
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.size != x.size:
        raise ValueError(f"{y.size} arrivals for {x.size} released molecules")
    if y.size > max_molecules:
        raise ComplexityLimitExceeded(y.size, max_molecules)
    # entry [i, j] pairs molecule i with arrival j
    log_density = ig_logpdf(y[None, :] - x[:, None] - tau, p)
    if np.all(x == x[0]):
        # identical rows: every permutation contributes the same product
        return math.lgamma(y.size + 1) + float(np.sum(log_density[0]))
    terms = log_density[np.arange(y.size), _permutations(y.size)].sum(axis=1)
    with np.errstate(divide="ignore"):
        return float(special.logsumexp(terms))


def _negated(value: float) -> float:
    return -value if math.isfinite(value) else 1e300


def mle_estimate(y: Sequence[float], x: Sequence[float], p: IgParams, lower: Optional[float] = None,
                 upper: Optional[float] = None, tolerance: Optional[float] = None,
                 grid_points: int = MLE_GRID_POINTS, max_molecules: int = DEFAULT_MAX_MOLECULES) -> float:
    """
    Maximum-likelihood offset: a coarse grid over the search interval, then bounded scalar refinement
    (golden section with parabolic steps) on the two grid cells around the best grid point.

    The default interval ends at ``min(y_i - x_i)``, the largest offset any permutation can explain, and
    starts ``mu + 10 sd`` earlier.

    Args:
        y: sorted arrivals
        x: release times
        p (IgParams): delay law
        lower (float): start of the search interval
        upper (float): end of the search interval
        tolerance (float): refinement tolerance, default ``1e-4 mu``

    Returns:
        :rtype: float

    Raises:
        InfeasibleSearchInterval: when the likelihood vanishes on the whole grid
    """
    y = np.sort(np.asarray(y, dtype=float))
    x = np.sort(np.asarray(x, dtype=float))
    if y.size > max_molecules:
        raise ComplexityLimitExceeded(y.size, max_molecules)
    if upper is None:
        upper = float(np.min(y - x))
    if lower is None:
        lower = upper - (p.mu + MLE_SEARCH_SDS * p.std)
    if not lower < upper:
        raise InfeasibleSearchInterval(lower, upper)
    tolerance = tolerance or MLE_TOLERANCE_FRACTION * p.mu

    def objective(candidate: float) -> float:
        return log_likelihood(candidate, y, x, p, max_molecules)

    grid = np.linspace(lower, upper, grid_points)
    values = np.array([objective(candidate) for candidate in grid])
    if not np.any(np.isfinite(values)):
        raise InfeasibleSearchInterval(lower, upper)
    best = int(np.argmax(values))
    left, right = grid[max(best - 1, 0)], grid[min(best + 1, grid_points - 1)]
    refined = optimize.minimize_scalar(lambda candidate: _negated(objective(candidate)), bounds=(left, right),
                                       method="bounded", options={"xatol": tolerance})
    if refined.success and -refined.fun >= values[best]:
        return float(refined.x)
    return float(grid[best])


def ule_fit(stats: SortedArrivalStats, n: int) -> UleWeights:
    """
    Minimum-variance weights under the unbiasedness constraint ``sum(a) = 1`` on the first ``n`` sorted arrivals:
    ``a = 1 C^-1 / (1 C^-1 1')`` and ``b = -a u``.

    Args:
        stats (SortedArrivalStats): arrival moments of the schedule
        n (int): window, ``1 <= n <= N``

    Returns:
        :rtype: UleWeights
    """
    if not 1 <= n <= len(stats.u):
        raise ValueError(f"window must be between 1 and {len(stats.u)}, got {n}")
    means = stats.mean_vector[:n]
    covariance, _ = condition_covariance(stats.covariance[:n, :n])
    try:
        solved = linalg.solve(covariance, np.ones(n), assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        raise CovarianceConditioningError(float(np.linalg.eigvalsh(covariance).min()), float(np.trace(covariance)))
    total = float(solved.sum())
    if not np.all(np.isfinite(solved)) or total == 0.0:
        raise CovarianceConditioningError(float(np.linalg.eigvalsh(covariance).min()), float(np.trace(covariance)))
    weights = solved / total
    return UleWeights(a=weights.tolist(), b=-float(weights @ means), u=means.tolist(), n=n)


def ule_estimate(y: Sequence[float], w: UleWeights) -> float:
    """
    ``a (y_1..n - u)``.
    """
    y = np.asarray(y, dtype=float)
    if y.size < w.n:
        raise ValueError(f"need at least {w.n} arrivals, got {y.size}")
    return float(w.weights @ (y[:w.n] - w.means))


def ule_estimate_batch(observations: np.ndarray, w: UleWeights) -> np.ndarray:
    return (observations[:, :w.n] - w.means) @ w.weights


def ule_theoretical_mse(w: UleWeights, stats: SortedArrivalStats) -> float:
    """
    Exact MSE ``a C a'`` of an unbiased linear estimator under the given arrival covariance.
    """
    covariance = stats.covariance[:w.n, :w.n]
    return float(w.weights @ covariance @ w.weights)


def iule_precompute(stats3: SortedArrivalStats, n1: int, Ts: float, stats1: Optional[SortedArrivalStats] = None,
                    steady_block: int = 2) -> IulePrecompute:
    """
    Constants of the per-symbol recursion from the statistics of three identical symbols.

    The inverse covariance of a long training sequence is close to block diagonal with a first block ``A`` and a
    repeated steady-state block ``B``; both are read off the 3-symbol inverse. ``alpha = 1 A 1' / 1 B 1'``,
    ``w = 1 B / 1 B 1'`` and ``m`` is the steady block's mean with its release time removed.

    Args:
        stats3 (SortedArrivalStats): statistics of the schedule ``(n1, n1, n1)`` with duration ``Ts``
        n1 (int): molecules per symbol
        Ts (float): symbol duration
        stats1 (SortedArrivalStats): statistics of one symbol; defaults to the leading block of ``stats3``
        steady_block (int): 2 or 3, which symbol supplies the steady-state block

    Returns:
        :rtype: IulePrecompute
    """
    if stats3.schedule.symbols != [n1, n1, n1] or stats3.schedule.Ts != Ts:
        raise ValueError(f"statistics must come from three symbols of {n1} molecules spaced {Ts} apart")
    if steady_block not in (2, 3):
        raise ValueError(f"steady_block must be 2 or 3, got {steady_block}")
    covariance, _ = condition_covariance(stats3.covariance)
    try:
        factor = linalg.cho_factor(covariance)
    except linalg.LinAlgError:
        raise CovarianceConditioningError(float(np.linalg.eigvalsh(covariance).min()), float(np.trace(covariance)))
    precision = linalg.cho_solve(factor, np.eye(3 * n1))
    precision = (precision + precision.T) / 2.0
    first_block = precision[:n1, :n1]
    start = (steady_block - 1) * n1
    steady = precision[start:start + n1, start:start + n1]
    first_total, steady_total = float(first_block.sum()), float(steady.sum())
    w = steady.sum(axis=0) / steady_total
    m = stats3.mean_vector[start:start + n1] - (steady_block - 1) * Ts
    first = ule_fit(stats1 if stats1 is not None else stats3, n1)
    alpha = first_total / steady_total
    if alpha < 1.0 - 1e-6:
        logging.warning(json.dumps({"method": "iule_precompute", "action": "alpha_below_one",
                                    "alpha": alpha, "n1": n1, "Ts": Ts}))
    return IulePrecompute(a1=first.a, u1=first.u, w=w.tolist(), m=m.tolist(), alpha=alpha, n1=n1, Ts=Ts,
                          steady_block=steady_block)


def iule_initial(y: Sequence[float], pc: IulePrecompute) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.asarray(pc.a1) @ (y[:pc.n1] - np.asarray(pc.u1)))


def iule_step(prev: float, k: int, y_new: Sequence[float], pc: IulePrecompute) -> float:
    """
    Fold symbol ``k+1`` into the running estimate:
    ``(alpha+k-1)/(alpha+k) prev + 1/(alpha+k) w (y_new - k Ts - m)``.

    Args:
        prev (float): estimate after ``k`` symbols
        k (int): number of symbols already folded in, at least 1
        y_new: the ``n1`` arrivals of the new symbol
        pc (IulePrecompute): recursion constants

    Returns:
        :rtype: float
    """
    y_new = np.asarray(y_new, dtype=float)
    if k < 1:
        raise ValueError(f"symbol index must be at least 1, got {k}")
    if y_new.size != pc.n1:
        raise ValueError(f"expected {pc.n1} new arrivals, got {y_new.size}")
    fresh = float(np.asarray(pc.w) @ (y_new - k * pc.Ts - np.asarray(pc.m)))
    return (pc.alpha + k - 1) / (pc.alpha + k) * prev + fresh / (pc.alpha + k)


def iule_estimate(y: Sequence[float], pc: IulePrecompute, K: int) -> float:
    """
    Run the recursion over the first ``K`` symbols of an observation.
    """
    y = np.asarray(y, dtype=float)
    if y.size < K * pc.n1:
        raise ValueError(f"need {K * pc.n1} arrivals for {K} symbols, got {y.size}")
    estimate = iule_initial(y, pc)
    for k in range(1, K):
        estimate = iule_step(estimate, k, y[k * pc.n1:(k + 1) * pc.n1], pc)
    return estimate


def iule_estimate_batch(observations: np.ndarray, pc: IulePrecompute, K: int) -> np.ndarray:
    n1 = pc.n1
    w, m = np.asarray(pc.w), np.asarray(pc.m)
    estimates = (observations[:, :n1] - np.asarray(pc.u1)) @ np.asarray(pc.a1)
    for k in range(1, K):
        fresh = (observations[:, k * n1:(k + 1) * n1] - k * pc.Ts - m) @ w
        estimates = (pc.alpha + k - 1) / (pc.alpha + k) * estimates + fresh / (pc.alpha + k)
    return estimates


def _check_level_means(scheme: ModulationScheme, v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size != scheme.M:
        raise ValueError(f"expected {scheme.M} level means, got {v.size}")
    return v


def blind_ule1(y1: float, scheme: ModulationScheme, v: Sequence[float]) -> float:
    """
    First-arrival estimate without knowing the first symbol: ``y1 - sum_j p_j v_j``.

    Args:
        y1 (float): earliest arrival
        scheme (ModulationScheme): alphabet and priors
        v: ``v_j``, mean earliest delay among ``L_j`` molecules

    Returns:
        :rtype: float
    """
    v = _check_level_means(scheme, v)
    return float(y1 - np.asarray(scheme.priors) @ v)


def demodulate_first_symbol(y: Sequence[float], tau_hat: float, scheme: ModulationScheme) -> int:
    """
    Count arrivals in ``(tau_hat, tau_hat + Ts]`` and return the nearest level; ties go to the smaller level.
    """
    y = np.asarray(y, dtype=float)
    count = int(np.count_nonzero((y > tau_hat) & (y <= tau_hat + scheme.Ts)))
    levels = np.asarray(scheme.levels)
    # argmin keeps the first of equal distances, the smaller level
    return int(levels[np.argmin(np.abs(levels - count))])


def df_estimate(y: Sequence[float], scheme: ModulationScheme, v: Sequence[float]) -> float:
    """
    Decision feedback: blind first-arrival estimate, demodulate the first symbol with it, then subtract the mean
    earliest delay of the detected level.
    """
    v = _check_level_means(scheme, v)
    y = np.asarray(y, dtype=float)
    tau_blind = blind_ule1(y[0], scheme, v)
    detected = demodulate_first_symbol(y, tau_blind, scheme)
    return float(y[0] - v[scheme.level_index(detected)])


def decision_directed_estimate(y1: float, level: int, scheme: ModulationScheme, v: Sequence[float]) -> float:
    """
    Decision feedback with the true first symbol injected in place of the decision.
    """
    v = _check_level_means(scheme, v)
    return float(y1 - v[scheme.level_index(level)])


def df_estimate_batch(observations: np.ndarray, scheme: ModulationScheme,
                      v: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decision feedback over many observations (rows, ``+inf`` padding allowed).

    Returns:
        :rtype: tuple(numpy.ndarray, numpy.ndarray) estimates and detected levels
    """
    v = _check_level_means(scheme, v)
    levels = np.asarray(scheme.levels)
    first = observations[:, 0]
    tau_blind = first - np.asarray(scheme.priors) @ v
    inside = (observations > tau_blind[:, None]) & (observations <= tau_blind[:, None] + scheme.Ts)
    counts = inside.sum(axis=1)
    detected_index = np.argmin(np.abs(levels[None, :] - counts[:, None]), axis=1)
    return first - v[detected_index], levels[detected_index]


def estimate_confusion_matrix(sent: Sequence[int], detected: Sequence[int], levels: Sequence[int]) -> ConfusionMatrix:
    """
    Empirical ``q[i][j] = Pr{detected L_j | sent L_i}``. A level that was never sent gets an identity row.
    """
    sent = np.asarray(sent)
    detected = np.asarray(detected)
    size = len(levels)
    rows = []
    for i, level in enumerate(levels):
        decisions = detected[sent == level]
        if decisions.size == 0:
            logging.warning(json.dumps({"method": "estimate_confusion_matrix", "action": "level_never_sent",
                                        "level": int(level)}))
            rows.append([1.0 if j == i else 0.0 for j in range(size)])
            continue
        counts = np.array([np.count_nonzero(decisions == other) for other in levels], dtype=float)
        rows.append((counts / decisions.size).tolist())
    return ConfusionMatrix(q=rows)


def blind_ule1_batch(first: np.ndarray, scheme: ModulationScheme, v: Sequence[float]) -> np.ndarray:
    v = _check_level_means(scheme, v)
    return first - float(np.asarray(scheme.priors) @ v)


def decision_directed_batch(first: np.ndarray, sent: np.ndarray, scheme: ModulationScheme,
                            v: Sequence[float]) -> np.ndarray:
    """
    Decision-directed estimates for many observations given the true first symbols.
    """
    v = _check_level_means(scheme, v)
    index = np.searchsorted(np.asarray(scheme.levels), sent)
    if np.any(np.asarray(scheme.levels)[np.minimum(index, scheme.M - 1)] != sent):
        raise ValueError(f"first symbols outside the alphabet {scheme.levels}")
    return first - v[index]
