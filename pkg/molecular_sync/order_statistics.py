"""
Moments of order statistics of inverse Gaussian delays and of sorted multi-symbol arrival vectors.

Means and variances of a single order statistic come from quadrature on the order-statistic density.
Covariances, and all statistics of multi-symbol schedules, come from seeded Monte Carlo: trials are split into
fixed-size chunks, chunk ``k`` draws from ``SeedSequence(seed, spawn_key=(0, k))`` and chunk moments are merged
pairwise in chunk order, so results do not depend on how many workers computed the chunks.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Tuple

import numpy as np
from scipy import integrate

from molecular_sync.ig_distribution import ig_cdf, ig_pdf, ig_sf, ig_sample, quadrature_integral
from molecular_sync.models import IgParams, OrderStatSpec, ReleaseSchedule, SortedArrivalStats

MC_CHUNK_SIZE = 100_000
DEFAULT_STATS_TRIALS = 10_000_000
MIN_STATS_TRIALS = 10_000
STATS_STREAM = 0


def os_min_mean(n: int, p: IgParams) -> float:
    """
    Mean of the earliest of ``n`` iid first hitting times, ``int_0^inf (1 - F(t))^n dt``.

    Args:
        n (int): sample size, at least 1
        p (IgParams): law parameters

    Returns:
        :rtype: float
    """
    if n < 1:
        raise ValueError(f"sample size must be at least 1, got {n}")
    return quadrature_integral(lambda t: float(ig_sf(t, p)) ** n, p)


def order_statistic_density(t: float, i: int, n: int, p: IgParams) -> float:
    density = float(ig_pdf(t, p))
    if density == 0.0:
        return 0.0
    coefficient = n * math.comb(n - 1, i - 1)
    return coefficient * float(ig_cdf(t, p)) ** (i - 1) * float(ig_sf(t, p)) ** (n - i) * density


def os_moments(spec: OrderStatSpec) -> Tuple[float, float]:
    """
    Mean and variance of the ``i``-th smallest of ``n`` iid first hitting times.

    Args:
        spec (OrderStatSpec): order index, sample size and law

    Returns:
        :rtype: tuple(float, float)
    """
    i, n, p = spec.i, spec.n, spec.params
    mean = quadrature_integral(lambda t: t * order_statistic_density(t, i, n, p), p)
    variance = quadrature_integral(lambda t: (t - mean) ** 2 * order_statistic_density(t, i, n, p), p)
    return mean, variance


def os_cov_quadrature(i: int, j: int, n: int, p: IgParams) -> float:
    """
    ``Cov[T_(i), T_(j)]`` by 2-D quadrature of the joint order-statistic density. Only for ``n <= 3``.
    """
    if n > 3:
        raise ValueError(f"2-D quadrature cross-check is limited to n <= 3, got {n}")
    if not 1 <= i <= j <= n:
        raise ValueError(f"need 1 <= i <= j <= n, got i={i}, j={j}, n={n}")
    if i == j:
        return os_moments(OrderStatSpec(i=i, n=n, params=p))[1]
    mean_i = os_moments(OrderStatSpec(i=i, n=n, params=p))[0]
    mean_j = os_moments(OrderStatSpec(i=j, n=n, params=p))[0]
    coefficient = math.factorial(n) / (math.factorial(i - 1) * math.factorial(j - i - 1) * math.factorial(n - j))
    upper = p.mu + 40.0 * p.std

    def joint(second: float, first: float) -> float:
        f_first = float(ig_pdf(first, p))
        f_second = float(ig_pdf(second, p))
        if f_first == 0.0 or f_second == 0.0:
            return 0.0
        below, between = float(ig_cdf(first, p)), float(ig_cdf(second, p)) - float(ig_cdf(first, p))
        density = coefficient * below ** (i - 1) * between ** (j - i - 1) * float(ig_sf(second, p)) ** (n - j) \
            * f_first * f_second
        return (first - mean_i) * (second - mean_j) * density

    value, _ = integrate.dblquad(joint, 0.0, upper, lambda first: first, lambda first: upper,
                                 epsabs=1e-9, epsrel=1e-9)
    return value


def _chunk_moments(task: Tuple[np.ndarray, IgParams, int, int, int]) -> Tuple[int, np.ndarray, np.ndarray]:
    release, params, seed, chunk, size = task
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STATS_STREAM, chunk)))
    samples = np.sort(release + ig_sample(params, rng, size=(size, release.size)), axis=1, kind="stable")
    mean = samples.mean(axis=0)
    centered = samples - mean
    return size, mean, centered.T @ centered


def _merge(left: Tuple[int, np.ndarray, np.ndarray],
           right: Tuple[int, np.ndarray, np.ndarray]) -> Tuple[int, np.ndarray, np.ndarray]:
    count_a, mean_a, m2_a = left
    count_b, mean_b, m2_b = right
    count = count_a + count_b
    delta = mean_b - mean_a
    mean = mean_a + delta * (count_b / count)
    m2 = m2_a + m2_b + np.outer(delta, delta) * (count_a * count_b / count)
    return count, mean, m2


def monte_carlo_sorted_moments(x: Iterable[float], p: IgParams, trials: int, seed: int,
                               workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Empirical mean vector and covariance matrix of ``sort(x + T)``.

    Args:
        x: release times, one per molecule
        p (IgParams): law parameters
        trials (int): number of simulated releases, at least 2
        seed (int): root seed
        workers (int): processes computing chunks; does not change the result

    Returns:
        :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """
    if trials < 2:
        raise ValueError(f"need at least 2 trials for a covariance, got {trials}")
    release = np.asarray(list(x), dtype=float)
    chunks = math.ceil(trials / MC_CHUNK_SIZE)
    tasks = [(release, p, seed, chunk, min(MC_CHUNK_SIZE, trials - chunk * MC_CHUNK_SIZE))
             for chunk in range(chunks)]
    if workers > 1 and chunks > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_chunk_moments, tasks))
    else:
        results = [_chunk_moments(task) for task in tasks]
    merged = results[0]
    for result in results[1:]:
        merged = _merge(merged, result)
    count, mean, m2 = merged
    covariance = m2 / (count - 1)
    logging.debug(json.dumps({"method": "monte_carlo_sorted_moments", "action": "merged",
                              "chunks": chunks, "trials": count, "molecules": int(release.size)}))
    return mean, (covariance + covariance.T) / 2.0


def os_cov(i: int, j: int, n: int, p: IgParams, trials: int = DEFAULT_STATS_TRIALS, seed: int = 0) -> float:
    """
    ``Cov[T_(i), T_(j)]`` among ``n`` iid first hitting times, by seeded Monte Carlo.

    Args:
        i (int): first order index
        j (int): second order index, ``i <= j <= n``
        n (int): sample size
        p (IgParams): law parameters
        trials (int): Monte Carlo trials
        seed (int): root seed

    Returns:
        :rtype: float
    """
    if not 1 <= i <= j <= n:
        raise ValueError(f"need 1 <= i <= j <= n, got i={i}, j={j}, n={n}")
    _, covariance = monte_carlo_sorted_moments(np.zeros(n), p, trials, seed)
    return float(covariance[i - 1, j - 1])


def sorted_arrival_stats(schedule: ReleaseSchedule, p: IgParams, trials: int, seed: int,
                         workers: int = 1) -> SortedArrivalStats:
    """
    Mean vector and covariance matrix of the sorted noiseless arrivals ``sort(x + T)`` of a release schedule.

    Args:
        schedule (ReleaseSchedule): release times
        p (IgParams): law parameters
        trials (int): Monte Carlo trials, at least 10 000
        seed (int): root seed, recorded in the result

    Returns:
        :rtype: SortedArrivalStats
    """
    if trials < MIN_STATS_TRIALS:
        raise ValueError(f"need at least {MIN_STATS_TRIALS} trials for arrival statistics, got {trials}")
    logging.info(json.dumps({"method": "sorted_arrival_stats", "action": "simulating",
                             "symbols": schedule.symbols, "Ts": schedule.Ts, "trials": trials, "seed": seed}))
    mean, covariance = monte_carlo_sorted_moments(schedule.x, p, trials, seed, workers)
    return SortedArrivalStats(params=p, schedule=schedule, seed=seed, mc_trials=trials,
                              schedule_hash=schedule.schedule_hash(), u=mean.tolist(), C=covariance.tolist())


def condition_covariance(covariance: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Add a ridge of ``1e-10 trace/n`` when the smallest eigenvalue falls below ``1e-12 trace``.

    Returns:
        :rtype: tuple(numpy.ndarray, bool) the matrix to invert and whether a ridge was added
    """
    covariance = np.asarray(covariance, dtype=float)
    size = covariance.shape[0]
    trace = float(np.trace(covariance))
    smallest = float(np.linalg.eigvalsh(covariance).min())
    if smallest >= 1e-12 * trace:
        return covariance, False
    logging.warning(json.dumps({"method": "condition_covariance", "action": "ridge_added",
                                "smallest_eigenvalue": smallest, "trace": trace}))
    return covariance + np.eye(size) * (1e-10 * trace / size), True
