"""
Receiver observations for quantity-based modulation: release schedules, symbol draws and sorted arrivals shifted
by the unknown timing offset.
"""
import json
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from molecular_sync.ig_distribution import ig_sample
from molecular_sync.models import ArrivalObservation, IgParams, ModulationScheme, ReleaseSchedule, \
    ReportWriteError

OBSERVATION_COLUMNS = ["trial_id", "arrival_index", "y"]


def build_release_schedule(symbols: Sequence[int], Ts: float) -> ReleaseSchedule:
    """
    Release times of every molecule: the molecules of symbol ``j`` leave at ``(j-1) Ts``.

    Args:
        symbols: molecule count of each symbol, every count at least 1
        Ts (float): symbol duration (s)

    Returns:
        :rtype: ReleaseSchedule
    """
    counts = [int(n) for n in symbols]
    if len(counts) == 0:
        raise ValueError("a schedule needs at least one symbol")
    if any(n < 1 for n in counts):
        raise ValueError(f"every symbol needs at least one molecule: {counts}")
    x = [index * Ts for index, count in enumerate(counts) for _ in range(count)]
    return ReleaseSchedule(symbols=counts, x=x, Ts=Ts)


def quantity_levels(n1: int, M: int) -> List[int]:
    """
    Levels ``L_j = (2j+1) n1 / M`` centred on an average of ``n1`` molecules, rounded half up.
    """
    levels = [int(math.floor((2 * j + 1) * n1 / M + 0.5)) for j in range(M)]
    if levels[0] < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"n1={n1} is too small for {M} distinct levels: {levels}")
    return levels


def modulation_scheme(n1: int, M: int, Ts: float, K: int, levels: Optional[Sequence[int]] = None,
                      priors: Optional[Sequence[float]] = None) -> ModulationScheme:
    """
    Build the alphabet; missing levels follow ``quantity_levels`` and missing priors are uniform.
    """
    if levels is None:
        levels = [n1] if M == 1 else quantity_levels(n1, M)
    if priors is None:
        priors = [1.0 / M] * M
    return ModulationScheme(M=M, levels=list(levels), priors=list(priors), Ts=Ts, K=K)


def generate_symbols(scheme: ModulationScheme, rng: np.random.Generator) -> List[int]:
    """
    Draw ``K`` iid symbols (molecule counts) from the alphabet's priors.
    """
    return [int(level) for level in rng.choice(scheme.levels, size=scheme.K, p=scheme.priors)]


def simulate_arrivals(schedule: ReleaseSchedule, tau: float, p: IgParams,
                      rng: np.random.Generator) -> ArrivalObservation:
    """
    One observation ``y = sort(x + T) + tau``.

    Args:
        schedule (ReleaseSchedule): release times
        tau (float): timing offset, any sign
        p (IgParams): delay law
        rng (numpy.random.Generator): random stream

    Returns:
        :rtype: ArrivalObservation
    """
    delays = ig_sample(p, rng, size=schedule.N)
    y = np.sort(schedule.release_times + delays, kind="stable") + tau
    return ArrivalObservation(y=y.tolist(), truth_tau=tau, truth_symbols=schedule.symbols)


def simulate_arrival_batch(schedule: ReleaseSchedule, tau: float, p: IgParams, trials: int,
                           rng: np.random.Generator) -> np.ndarray:
    """
    ``trials`` independent observations of the same schedule, one sorted row each.

    Returns:
        :rtype: numpy.ndarray of shape (trials, N)
    """
    delays = ig_sample(p, rng, size=(trials, schedule.N))
    return np.sort(schedule.release_times + delays, axis=1, kind="stable") + tau


def simulate_blind_batch(scheme: ModulationScheme, tau: float, p: IgParams, trials: int,
                         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Observations of random message symbols. Each row holds ``K * max(levels)`` slots; slots of molecules that
    were never released are ``+inf`` and sort to the end.

    Returns:
        :rtype: tuple(numpy.ndarray, numpy.ndarray) arrivals of shape (trials, K*max(levels)) and the
        transmitted symbols of shape (trials, K)
    """
    symbols = rng.choice(np.asarray(scheme.levels), size=(trials, scheme.K), p=scheme.priors)
    slots = max(scheme.levels)
    delays = ig_sample(p, rng, size=(trials, scheme.K, slots))
    released = np.arange(slots)[None, None, :] < symbols[:, :, None]
    release = (np.arange(scheme.K) * scheme.Ts)[None, :, None]
    arrivals = np.where(released, release + delays, np.inf).reshape(trials, scheme.K * slots)
    return np.sort(arrivals, axis=1, kind="stable") + tau, symbols


def write_observations_csv(observations: Sequence[ArrivalObservation], path: str) -> str:
    """
    Write observations in long format, one row per arrival: ``trial_id, arrival_index, y``.

    Args:
        observations: observations in trial order
        path (str): destination file

    Returns:
        :rtype: str the path written
    """
    records = [(trial_id, index, value) for trial_id, observation in enumerate(observations)
               for index, value in enumerate(observation.y)]
    frame = pd.DataFrame.from_records(records, columns=OBSERVATION_COLUMNS)
    try:
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as error:
        raise ReportWriteError(path, str(error))
    logging.info(json.dumps({"method": "write_observations_csv", "action": "written",
                             "path": path, "rows": len(records)}))
    return path


def read_observations_csv(path: str) -> List[np.ndarray]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [group.sort_values("arrival_index")["y"].to_numpy()
            for _, group in frame.groupby("trial_id", sort=True)]
