"""
Seeded Monte Carlo harness: experiment configuration files, trial execution per sweep point, MSE aggregation
with theory overlays, and CSV/JSON report emission.

Trials run in blocks of ``TRIAL_BLOCK``. Block ``b`` of sweep point ``k`` draws from
``SeedSequence(seed, spawn_key=(1, k, b))`` and blocks are concatenated in order, so a report depends only on
the configuration and the seed, never on ``workers``.
"""
import configparser
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import pydantic

from molecular_sync.cache import StatsCache
from molecular_sync.channel_sim import build_release_schedule, modulation_scheme, simulate_arrival_batch, \
    simulate_blind_batch
from molecular_sync.compatibility_rules import CompatibilityRuleChecks
from molecular_sync.estimators import blind_ule1_batch, decision_directed_batch, df_estimate_batch, \
    estimate_confusion_matrix, iule_estimate_batch, mle_estimate, ule_estimate_batch, ule_theoretical_mse
from molecular_sync.ig_distribution import crlb, derive_ig_params
from molecular_sync.models import ChannelParams, ComplexityLimitExceeded, ConfigurationError, EstimatorNotApplicable, \
    EstimatorResult, ExperimentConfig, IgParams, ModulationScheme, MseReport, ReportWriteError
from molecular_sync.theory import blind_ule1_mse, decision_directed_mse, df_mse, level_stats
from molecular_sync.version import __version__

TRIAL_BLOCK = 10_000
SIMULATION_STREAM = 1
REPORT_COLUMNS = ["sweep", "sweep_value", "estimator", "trials", "mse_mc", "standard_error", "bias", "variance",
                  "mse_theory", "crlb", "error"]
BLIND_CAPABLE = ("blind_ule1", "df", "dd")

DEFAULTS = {
    "experiment": {"trials": "100000", "mle_trials": "10000", "seed": "0", "tau_true": "0", "workers": "1"},
    "modulation": {"K": "1", "M": "1", "Ts_over_mu": "3"},
    "precompute": {"stats_trials": "10000000", "steady_block": "2", "mle_max_molecules": "8"},
}

CHANNEL_KEYS = {"temperature": "temperature_Ta", "viscosity": "viscosity_eta", "radius": "molecule_radius_r",
                "distance": "distance_d", "drift": "drift_v", "boltzmann": "boltzmann_k"}


def _inject_values(default_values: dict, dest_obj: dict):
    # inject defaults for missing values
    for default_key in default_values:
        if default_key not in dest_obj or dest_obj[default_key] is None or dest_obj[default_key] == "":
            dest_obj[default_key] = default_values[default_key]


def _split(value: Optional[str]) -> Optional[List[str]]:
    if value is None or value.strip() == "":
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def _channel_from(section: Dict[str, str]) -> dict:
    if "mu" in section:
        return {"params": IgParams(mu=float(section["mu"]), lam=float(section["lambda"])), "channel": None}
    physical = {field: float(section[key]) for key, field in CHANNEL_KEYS.items() if key in section}
    channel = ChannelParams(**physical)
    return {"params": derive_ig_params(channel), "channel": channel}


def load_config(path: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Read an experiment configuration file.

    Args:
        path (str): ini file with ``[experiment]``, ``[channel]``, ``[modulation]`` and optional ``[precompute]``
        overrides (dict): values taking precedence over the file, e.g. ``{"seed": 7, "trials": 1000}``;
            ``None`` values are ignored

    Returns:
        :rtype: ExperimentConfig

    Raises:
        ConfigurationError: unreadable file, missing keys or invalid values
    """
    if not os.path.exists(path):
        raise ConfigurationError(path, "file not found")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as error:
        raise ConfigurationError(path, str(error))
    sections = {name: dict(parser[name]) if parser.has_section(name) else {}
                for name in ("experiment", "channel", "modulation", "precompute")}
    for name, defaults in DEFAULTS.items():
        _inject_values(defaults, sections[name])
    experiment, modulation, precompute = sections["experiment"], sections["modulation"], sections["precompute"]
    try:
        fields = {
            "name": experiment["name"],
            "estimators": _split(experiment["estimators"]),
            "trials": int(experiment["trials"]),
            "mle_trials": int(experiment["mle_trials"]),
            "seed": int(experiment["seed"]),
            "tau_true": float(experiment["tau_true"]),
            "sweep": experiment["sweep"],
            "sweep_values": [float(value) for value in _split(experiment["sweep_values"]) or []],
            "workers": int(experiment["workers"]),
            "K": int(modulation["K"]),
            "n1": int(modulation["n1"]),
            "M": int(modulation["M"]),
            "Ts_over_mu": float(modulation["Ts_over_mu"]),
            "levels": [int(level) for level in _split(modulation.get("levels")) or []] or None,
            "priors": [float(prior) for prior in _split(modulation.get("priors")) or []] or None,
            "window": int(modulation["window"]) if modulation.get("window") else None,
            "stats_trials": int(precompute["stats_trials"]),
            "steady_block": int(precompute["steady_block"]),
            "mle_max_molecules": int(precompute["mle_max_molecules"]),
        }
        fields.update(_channel_from(sections["channel"]))
        for key, value in (overrides or {}).items():
            if value is not None:
                fields[key] = value
        config = ExperimentConfig.parse_obj(fields)
    except KeyError as error:
        raise ConfigurationError(path, f"missing key {error}")
    except (pydantic.ValidationError, ValueError) as error:
        raise ConfigurationError(path, str(error))
    logging.info(json.dumps({"method": "load_config", "action": "loaded", "path": path, "name": config.name}))
    return config


def scheme_for(point: ExperimentConfig) -> ModulationScheme:
    return modulation_scheme(point.n1, point.M, point.Ts, point.K, point.levels, point.priors)


def _applicable(point: ExperimentConfig, estimator: str) -> None:
    checks = CompatibilityRuleChecks().from_point(point).for_estimator(estimator)
    if not checks.failed():
        return
    if not point.is_training and estimator in BLIND_CAPABLE:
        logging.warning(json.dumps({"method": "_applicable", "action": "running despite warning",
                                    "estimator": estimator, "reason": checks.get_error_message()}))
        return
    raise EstimatorNotApplicable(estimator, checks.get_error_message())


def _point_context(point: ExperimentConfig, estimators: List[str], cache: StatsCache) -> dict:
    """
    Everything the trial blocks of one sweep point share: schedule, weights, level moments.
    """
    scheme = scheme_for(point)
    context = {"scheme": scheme}
    if point.is_training:
        schedule = build_release_schedule([point.n1] * point.K, point.Ts)
        context["schedule"] = schedule
        if "ule" in estimators:
            stats = cache.sorted_arrival_stats(schedule, point.params, point.stats_trials, point.seed, point.workers)
            context["ule_stats"] = stats
            context["ule"] = cache.ule_weights(stats, point.window or point.N)
        if "iule" in estimators:
            stats1 = cache.sorted_arrival_stats(build_release_schedule([point.n1], point.Ts), point.params,
                                                point.stats_trials, point.seed, point.workers)
            stats3 = cache.sorted_arrival_stats(build_release_schedule([point.n1] * 3, point.Ts), point.params,
                                                point.stats_trials, point.seed, point.workers)
            context["iule"] = cache.iule_precompute(stats3, point.n1, point.Ts, stats1, point.steady_block)
    if any(estimator in BLIND_CAPABLE for estimator in estimators):
        context["levels"] = level_stats(scheme, point.params)
    return context


def _run_block(task: tuple) -> Dict[str, np.ndarray]:
    point, point_index, block, start, size, estimators, context = task
    rng = np.random.default_rng(np.random.SeedSequence(point.seed, spawn_key=(SIMULATION_STREAM, point_index, block)))
    scheme = context["scheme"]
    if point.is_training:
        schedule = context["schedule"]
        y = simulate_arrival_batch(schedule, point.tau_true, point.params, size, rng)
        sent = np.full(size, point.n1)
    else:
        y, symbols = simulate_blind_batch(scheme, point.tau_true, point.params, size, rng)
        sent = symbols[:, 0]
    outputs = {"sent": sent}
    v = context["levels"].v if "levels" in context else None
    for estimator in estimators:
        if estimator == "ule":
            outputs["ule"] = ule_estimate_batch(y, context["ule"])
        elif estimator == "iule":
            outputs["iule"] = iule_estimate_batch(y, context["iule"], point.K)
        elif estimator == "mle":
            rows = max(0, min(size, point.mle_trials - start))
            outputs["mle"] = np.array([mle_estimate(row, schedule.x, point.params,
                                                    max_molecules=point.mle_max_molecules) for row in y[:rows]])
        elif estimator == "blind_ule1":
            outputs["blind_ule1"] = blind_ule1_batch(y[:, 0], scheme, v)
        elif estimator == "df":
            outputs["df"], outputs["detected"] = df_estimate_batch(y, scheme, v)
        elif estimator == "dd":
            outputs["dd"] = decision_directed_batch(y[:, 0], sent, scheme, v)
    return outputs


def _simulate_point(point: ExperimentConfig, point_index: int, estimators: List[str],
                    context: dict) -> Dict[str, np.ndarray]:
    blocks = math.ceil(point.trials / TRIAL_BLOCK)
    tasks = [(point, point_index, block, block * TRIAL_BLOCK, min(TRIAL_BLOCK, point.trials - block * TRIAL_BLOCK),
              estimators, context) for block in range(blocks)]
    if point.workers > 1 and blocks > 1:
        with ProcessPoolExecutor(max_workers=point.workers) as executor:
            results = list(executor.map(_run_block, tasks))
    else:
        results = [_run_block(task) for task in tasks]
    return {key: np.concatenate([result[key] for result in results]) for key in results[0]}


def summarize_errors(sweep_value: float, estimator: str, estimates: np.ndarray, tau_true: float,
                     mse_theory: Optional[float] = None, crlb_value: Optional[float] = None) -> EstimatorResult:
    """
    Aggregate the estimates of one estimator at one sweep point.

    ``mse`` is the mean squared error, ``standard_error`` the sample standard deviation of the squared errors over
    the square root of the trial count, ``bias`` the mean error and ``variance`` the population variance of the
    errors, so ``mse = bias^2 + variance`` up to rounding.

    Returns:
        :rtype: EstimatorResult
    """
    errors = np.asarray(estimates, dtype=float) - tau_true
    trials = int(errors.size)
    squared = errors * errors
    bias = float(errors.mean())
    return EstimatorResult(sweep_value=sweep_value, estimator=estimator, trials=trials, mse=float(squared.mean()),
                           standard_error=float(squared.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
                           bias=bias, variance=float(np.mean((errors - bias) ** 2)),
                           mse_theory=mse_theory, crlb=crlb_value)


def _theory_for(estimator: str, context: dict, confusion=None) -> Optional[float]:
    if estimator == "ule":
        return ule_theoretical_mse(context["ule"], context["ule_stats"])
    if estimator == "blind_ule1":
        return blind_ule1_mse(context["levels"])
    if estimator == "dd":
        return decision_directed_mse(context["levels"])
    if estimator == "df" and confusion is not None:
        return df_mse(context["levels"], confusion)
    return None


def _runnable(point: ExperimentConfig, value: float, estimators: List[str]):
    runnable, failures = [], {}
    for estimator in estimators:
        try:
            _applicable(point, estimator)
            runnable.append(estimator)
        except (EstimatorNotApplicable, ComplexityLimitExceeded) as error:
            logging.warning(json.dumps({"method": "_runnable", "action": "estimator skipped",
                                        "sweep_value": value, "estimator": estimator, "reason": error.message}))
            failures[estimator] = EstimatorResult(sweep_value=value, estimator=estimator, error=error.message)
    return runnable, failures


def run_experiment(cfg: ExperimentConfig, cache: Optional[StatsCache] = None) -> MseReport:
    """
    Run every estimator of the configuration at every sweep point.

    An estimator that cannot run at a point gets a row carrying the reason in ``error``; the run continues.

    Args:
        cfg (ExperimentConfig): validated configuration
        cache (StatsCache): store for precomputed statistics, default location when omitted

    Returns:
        :rtype: MseReport
    """
    cache = cache or StatsCache()
    rows, confusion = [], {}
    for point_index, value in enumerate(cfg.sweep_values):
        point = cfg.at_sweep_point(value)
        runnable, failures = _runnable(point, value, cfg.estimators)
        estimates, context = {}, {}
        if runnable:
            context = _point_context(point, runnable, cache)
            estimates = _simulate_point(point, point_index, runnable, context)
        measured = None
        if "df" in estimates:
            measured = estimate_confusion_matrix(estimates["sent"], estimates["detected"], context["scheme"].levels)
            confusion[repr(value)] = measured.q
        bound = crlb(point.N, point.params) if point.is_training else None
        for estimator in cfg.estimators:
            if estimator in failures:
                rows.append(failures[estimator])
                continue
            row = summarize_errors(value, estimator, estimates[estimator], point.tau_true,
                                   _theory_for(estimator, context, measured), bound)
            logging.info(json.dumps({"method": "run_experiment", "action": "sweep point done",
                                     "sweep_value": value, "estimator": estimator, "mse": row.mse,
                                     "mse_theory": row.mse_theory}))
            rows.append(row)
    return MseReport(config=cfg, package_version=__version__, rows=rows, confusion=confusion)


def precompute(cfg: ExperimentConfig, cache: Optional[StatsCache] = None) -> List[float]:
    """
    Build and cache the arrival statistics and weights every sweep point needs.

    Returns:
        :rtype: list the sweep values prepared
    """
    cache = cache or StatsCache()
    prepared = []
    for value in cfg.sweep_values:
        point = cfg.at_sweep_point(value)
        runnable, _ = _runnable(point, value, cfg.estimators)
        if runnable:
            _point_context(point, runnable, cache)
            prepared.append(value)
        logging.info(json.dumps({"method": "precompute", "action": "prepared", "sweep_value": value,
                                 "estimators": runnable}))
    return prepared


def theory_report(cfg: ExperimentConfig, cache: Optional[StatsCache] = None) -> MseReport:
    """
    Closed-form curves only: ULE ``a C a'``, blind first-arrival MSE, decision-directed floor and the bound.
    Decision feedback needs a measured confusion matrix and carries an explanatory ``error`` instead.

    Returns:
        :rtype: MseReport
    """
    cache = cache or StatsCache()
    rows = []
    for value in cfg.sweep_values:
        point = cfg.at_sweep_point(value)
        runnable, failures = _runnable(point, value, cfg.estimators)
        closed_form = [estimator for estimator in runnable if estimator in ("ule", "blind_ule1", "dd")]
        context = _point_context(point, closed_form, cache) if closed_form else {}
        bound = crlb(point.N, point.params) if point.is_training else None
        for estimator in cfg.estimators:
            if estimator in failures:
                rows.append(failures[estimator])
            elif estimator in closed_form:
                rows.append(EstimatorResult(sweep_value=value, estimator=estimator,
                                            mse_theory=_theory_for(estimator, context), crlb=bound))
            else:
                rows.append(EstimatorResult(sweep_value=value, estimator=estimator, crlb=bound,
                                            error=f"{estimator} has no closed form without simulation"))
    return MseReport(config=cfg, package_version=__version__, rows=rows)


def report_frame(report: MseReport) -> pd.DataFrame:
    records = [{"sweep": report.config.sweep, "sweep_value": row.sweep_value, "estimator": row.estimator,
                "trials": row.trials, "mse_mc": row.mse, "standard_error": row.standard_error, "bias": row.bias,
                "variance": row.variance, "mse_theory": row.mse_theory, "crlb": row.crlb, "error": row.error}
               for row in report.rows]
    return pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)


def render_report(report: MseReport, format: str = "csv") -> str:
    """
    Render a report. CSV starts with one ``#`` line carrying experiment name, seed, units, sweep, version and the
    configuration as JSON, followed by the columns of ``REPORT_COLUMNS``; JSON is the full report including the
    configuration.

    Args:
        report (MseReport): finished report
        format (str): ``csv`` or ``json``

    Returns:
        :rtype: str
    """
    if format == "json":
        return report.json(indent=2, by_alias=True) + "\n"
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}, use csv or json")
    header = f"# experiment={report.config.name} seed={report.config.seed} units={report.units} " \
             f"sweep={report.config.sweep} version={report.package_version} config={report.provenance()}\n"
    return header + report_frame(report).to_csv(index=False, float_format="%.17g")


def emit_report(report: MseReport, format: str, path: str) -> str:
    """
    Write a report to ``path``.

    Returns:
        :rtype: str the path written

    Raises:
        ReportWriteError: on any I/O failure, with the path
    """
    text = render_report(report, format)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as report_file:
            report_file.write(text)
    except OSError as error:
        raise ReportWriteError(path, str(error))
    logging.info(json.dumps({"method": "emit_report", "action": "written", "path": path, "format": format}))
    return path


def read_report_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, skiprows=1, float_precision="round_trip")
