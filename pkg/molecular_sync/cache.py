import configparser
import hashlib
import json
import logging
import os
from typing import Optional

from pydantic import BaseModel

from molecular_sync.estimators import iule_precompute, ule_fit
from molecular_sync.models import CacheDirectoryNotFound, IgParams, IulePrecompute, ReleaseSchedule, \
    SortedArrivalStats, UleWeights
from molecular_sync.order_statistics import sorted_arrival_stats
from molecular_sync.version import CACHE_FORMAT_VERSION

CACHE_DIR_ENVIRONMENT_VARIABLE = "MOLECULAR_SYNC_CACHE_DIR"


class StatsCache:
    """
    On-disk JSON store of precomputed arrival statistics, ULE weights and IULE constants.

    Every entry is one file named by the SHA-256 of its canonical inputs and holds
    ``{format_version, kind, inputs, payload}``. An entry written by another format version, or whose recorded
    inputs differ from the request, is a miss and gets overwritten.
    """

    def __init__(self):
        # try the environment first, then USER_PROFILE/.molecular_sync, then the user cache dir
        msg = {"method": "__init__", "action": f"cache directory found from environment"}
        if os.environ.get(CACHE_DIR_ENVIRONMENT_VARIABLE):
            self.__directory__ = os.environ.get(CACHE_DIR_ENVIRONMENT_VARIABLE)
            logging.info(json.dumps(msg))
            return
        config_file_path = os.path.join(os.path.expanduser("~"), ".molecular_sync")
        if os.path.exists(config_file_path):
            config = configparser.ConfigParser()
            config.read(config_file_path)
            if config.has_option("cache", "directory"):
                self.__directory__ = os.path.expanduser(config["cache"]["directory"])
                msg["action"] = f"{config_file_path} config file found"
                logging.info(json.dumps(msg))
                return
        self.__directory__ = os.path.join(os.path.expanduser("~"), ".cache", "molecular_sync")

    def with_directory(self, directory: str):
        """Store entries somewhere other than the environment, ini file or default location

        Args:
            directory (str): cache directory, created on first write

        Returns:
            :rtype: StatsCache
        """
        if directory is None or len(str(directory)) == 0:
            raise CacheDirectoryNotFound(directory)
        self.__directory__ = str(directory)

        return self

    @property
    def directory(self) -> str:
        return self.__directory__

    def __key_for__(self, kind: str, inputs: dict) -> str:
        canonical = json.dumps({"kind": kind, "inputs": inputs}, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def __path_for__(self, kind: str, inputs: dict) -> str:
        return os.path.join(self.__directory__, f"{kind}-{self.__key_for__(kind, inputs)}.json")

    def __load__(self, kind: str, inputs: dict, model: type) -> Optional[BaseModel]:
        path = self.__path_for__(kind, inputs)
        msg = {"method": "__load__", "action": "cache miss", "kind": kind, "path": path}
        if not os.path.exists(path):
            logging.info(json.dumps(msg))
            return None
        try:
            with open(path, "r", encoding="utf-8") as entry_file:
                entry = json.load(entry_file)
        except (OSError, ValueError):
            msg["action"] = "unreadable entry, treating as miss"
            logging.warning(json.dumps(msg))
            return None
        if entry.get("format_version") != CACHE_FORMAT_VERSION or entry.get("kind") != kind \
                or entry.get("inputs") != inputs:
            msg["action"] = "stale entry, treating as miss"
            logging.info(json.dumps(msg))
            return None
        msg["action"] = "cache hit"
        logging.info(json.dumps(msg))
        return model.parse_obj(entry["payload"])

    def __store__(self, kind: str, inputs: dict, payload: BaseModel) -> str:
        path = self.__path_for__(kind, inputs)
        os.makedirs(self.__directory__, exist_ok=True)
        entry = {"format_version": CACHE_FORMAT_VERSION, "kind": kind, "inputs": inputs,
                 "payload": json.loads(payload.json(by_alias=True))}
        partial = f"{path}.{os.getpid()}.tmp"
        with open(partial, "w", encoding="utf-8") as entry_file:
            json.dump(entry, entry_file, sort_keys=True)
        os.replace(partial, path)
        logging.info(json.dumps({"method": "__store__", "action": "stored", "kind": kind, "path": path}))
        return path

    def __stats_inputs__(self, stats: SortedArrivalStats) -> dict:
        return {"params": stats.params.dict(by_alias=True), "schedule_hash": stats.schedule_hash,
                "trials": stats.mc_trials, "seed": stats.seed}

    def sorted_arrival_stats(self, schedule: ReleaseSchedule, params: IgParams, trials: int, seed: int,
                             workers: int = 1) -> SortedArrivalStats:
        """
        Cached ``order_statistics.sorted_arrival_stats``. ``workers`` does not enter the key.

        Returns:
            :rtype: SortedArrivalStats
        """
        inputs = {"params": params.dict(by_alias=True), "schedule_hash": schedule.schedule_hash(),
                  "trials": trials, "seed": seed}
        cached = self.__load__("stats", inputs, SortedArrivalStats)
        if cached is not None:
            return cached
        stats = sorted_arrival_stats(schedule, params, trials, seed, workers)
        self.__store__("stats", inputs, stats)
        return stats

    def ule_weights(self, stats: SortedArrivalStats, n: int) -> UleWeights:
        inputs = {"stats": self.__stats_inputs__(stats), "n": n}
        cached = self.__load__("ule", inputs, UleWeights)
        if cached is not None:
            return cached
        weights = ule_fit(stats, n)
        self.__store__("ule", inputs, weights)
        return weights

    def iule_precompute(self, stats3: SortedArrivalStats, n1: int, Ts: float,
                        stats1: Optional[SortedArrivalStats] = None, steady_block: int = 2) -> IulePrecompute:
        inputs = {"stats3": self.__stats_inputs__(stats3),
                  "stats1": None if stats1 is None else self.__stats_inputs__(stats1),
                  "n1": n1, "Ts": Ts, "steady_block": steady_block}
        cached = self.__load__("iule", inputs, IulePrecompute)
        if cached is not None:
            return cached
        constants = iule_precompute(stats3, n1, Ts, stats1, steady_block)
        self.__store__("iule", inputs, constants)
        return constants
