import hashlib
import json
import math
from typing import Dict, List, Literal, Optional

import numpy as np
import pydantic
from pydantic import BaseModel, Field

from molecular_sync.version import CACHE_FORMAT_VERSION

BOLTZMANN_CONSTANT = 1.380649e-23

EstimatorName = Literal["mle", "ule", "iule", "blind_ule1", "df", "dd"]
SweepParameter = Literal["N", "n1", "K", "M", "Ts_over_mu", "window"]

INTEGER_SWEEPS = ("N", "n1", "K", "M", "window")


class UnsupportedMomentOrder(Exception):
    def __init__(self, order: int):
        self.order = order
        self.message = f"Negative moment of order {order} is not supported, use 1, 2 or 3"
        super().__init__(self.message)


class QuadratureError(Exception):
    def __init__(self, value: float, abserr: float, tolerance: float):
        self.value = value
        self.abserr = abserr
        self.tolerance = tolerance
        self.message = f"Quadrature did not converge: value {value!r} with achieved error {abserr:.3e} " \
                       f"above tolerance {tolerance:.3e}"
        super().__init__(self.message)


class ComplexityLimitExceeded(Exception):
    def __init__(self, n: int, n_max: int):
        self.n = n
        self.n_max = n_max
        self.message = f"Permutation likelihood over {n} molecules needs {math.factorial(n)} terms, " \
                       f"limit is {n_max} molecules"
        super().__init__(self.message)


class InfeasibleSearchInterval(Exception):
    def __init__(self, lower: float, upper: float):
        self.lower = lower
        self.upper = upper
        self.message = f"Likelihood is zero everywhere on the search interval [{lower}, {upper}]"
        super().__init__(self.message)


class CovarianceConditioningError(Exception):
    def __init__(self, min_eigenvalue: float, trace: float):
        self.min_eigenvalue = min_eigenvalue
        self.trace = trace
        self.message = f"Covariance matrix is singular after ridge: smallest eigenvalue {min_eigenvalue:.3e}, " \
                       f"trace {trace:.3e}"
        super().__init__(self.message)


class EstimatorNotApplicable(Exception):
    def __init__(self, estimator: str, reason: str):
        self.estimator = estimator
        self.reason = reason
        self.message = f"{estimator} cannot run here: {reason}"
        super().__init__(self.message)


class ConfigurationError(Exception):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = f"{path}: {message}"
        super().__init__(self.message)


class CacheDirectoryNotFound(Exception):
    def __init__(self, directory: str):
        self.directory = directory
        self.message = f"Cache directory is not defined: {directory!r}. Call with_directory(...), set " \
                       f"MOLECULAR_SYNC_CACHE_DIR or add [cache] directory to ~/.molecular_sync"
        super().__init__(self.message)


class ReportWriteError(Exception):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.message = f"Could not write report to {path}: {reason}"
        super().__init__(self.message)


class FrozenModel(BaseModel):

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True


class ChannelParams(FrozenModel):
    """
    Physical constants of the diffusion channel. Defaults to the CODATA Boltzmann constant.
    """
    boltzmann_k: float = Field(BOLTZMANN_CONSTANT, gt=0)
    temperature_Ta: float = Field(..., gt=0)
    viscosity_eta: float = Field(..., gt=0)
    molecule_radius_r: float = Field(..., gt=0)
    distance_d: float = Field(..., gt=0)
    drift_v: float = Field(..., gt=0)

    @property
    def diffusion_coefficient(self) -> float:
        return self.boltzmann_k * self.temperature_Ta / (6.0 * math.pi * self.viscosity_eta * self.molecule_radius_r)


class IgParams(FrozenModel):
    mu: float = Field(..., gt=0)
    lam: float = Field(..., gt=0, alias="lambda")

    @property
    def std(self) -> float:
        return math.sqrt(self.mu ** 3 / self.lam)


class ModulationScheme(FrozenModel):
    """
    M-ary quantity alphabet. ``levels`` are molecule counts, ``priors`` their probabilities.
    """
    M: int = Field(..., ge=1)
    levels: List[int]
    priors: List[float]
    Ts: float = Field(..., gt=0)
    K: int = Field(..., ge=1)

    @pydantic.root_validator(skip_on_failure=True)
    def check_alphabet(cls, values):
        levels, priors, size = values["levels"], values["priors"], values["M"]
        if len(levels) != size or len(priors) != size:
            raise ValueError(f"expected {size} levels and priors, got {len(levels)} and {len(priors)}")
        if levels[0] < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must be strictly increasing and at least 1: {levels}")
        if any(p < 0 for p in priors) or abs(math.fsum(priors) - 1.0) > 1e-12:
            raise ValueError(f"priors must be nonnegative and sum to 1: {priors}")
        return values

    def level_index(self, level: int) -> int:
        return self.levels.index(level)


class ReleaseSchedule(FrozenModel):
    symbols: List[int]
    x: List[float]
    Ts: float = Field(..., gt=0)

    @pydantic.root_validator(skip_on_failure=True)
    def check_release_times(cls, values):
        symbols, x, duration = values["symbols"], values["x"], values["Ts"]
        if len(symbols) == 0 or any(n < 1 for n in symbols):
            raise ValueError(f"every symbol needs at least one molecule: {symbols}")
        expected = [index * duration for index, count in enumerate(symbols) for _ in range(count)]
        if x != expected:
            raise ValueError("release times must equal (j-1)*Ts for every molecule of symbol j")
        return values

    @property
    def N(self) -> int:
        return len(self.x)

    @property
    def release_times(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def schedule_hash(self) -> str:
        return hashlib.sha256(self.json(sort_keys=True).encode("utf-8")).hexdigest()


class ArrivalObservation(FrozenModel):
    y: List[float]
    truth_tau: float
    truth_symbols: List[int]

    @pydantic.validator("y")
    def check_sorted(cls, y):
        if any(b < a for a, b in zip(y, y[1:])):
            raise ValueError("arrival times must be nondecreasing")
        return y

    @pydantic.root_validator(skip_on_failure=True)
    def check_after_offset(cls, values):
        if any(value <= values["truth_tau"] for value in values["y"]):
            raise ValueError("every arrival must come after the timing offset")
        return values

    @property
    def arrivals(self) -> np.ndarray:
        return np.asarray(self.y, dtype=float)


class OrderStatSpec(FrozenModel):
    i: int = Field(..., ge=1)
    n: int = Field(..., ge=1)
    params: IgParams

    @pydantic.root_validator(skip_on_failure=True)
    def check_index(cls, values):
        if values["i"] > values["n"]:
            raise ValueError(f"order index {values['i']} exceeds sample size {values['n']}")
        return values


class SortedArrivalStats(FrozenModel):
    """
    Mean vector ``u`` and covariance ``C`` of the sorted noiseless arrivals of one release schedule.
    """
    format_version: int = CACHE_FORMAT_VERSION
    params: IgParams
    schedule: ReleaseSchedule
    seed: int
    mc_trials: int = Field(..., ge=2)
    schedule_hash: str
    u: List[float]
    C: List[List[float]]

    @pydantic.root_validator(skip_on_failure=True)
    def check_moments(cls, values):
        u = np.asarray(values["u"], dtype=float)
        cov = np.asarray(values["C"], dtype=float)
        size = u.size
        if cov.shape != (size, size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {size}")
        trace = float(np.trace(cov))
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(trace, 1.0)):
            raise ValueError("covariance must be symmetric")
        if float(np.linalg.eigvalsh(cov).min()) < -1e-9 * trace:
            raise ValueError("covariance must be positive semidefinite")
        if np.any(np.diff(u) < -1e-9 * max(float(np.abs(u).max()), 1.0)):
            raise ValueError("mean of a sorted vector must be nondecreasing")
        return values

    @property
    def mean_vector(self) -> np.ndarray:
        return np.asarray(self.u, dtype=float)

    @property
    def covariance(self) -> np.ndarray:
        return np.asarray(self.C, dtype=float)


class UleWeights(FrozenModel):
    a: List[float]
    b: float
    u: List[float]
    n: int = Field(..., ge=1)

    @pydantic.root_validator(skip_on_failure=True)
    def check_unbiased(cls, values):
        a = np.asarray(values["a"], dtype=float)
        u = np.asarray(values["u"], dtype=float)
        if a.size != values["n"] or u.size != values["n"]:
            raise ValueError(f"weights and means must have length {values['n']}")
        if abs(math.fsum(values["a"]) - 1.0) > 1e-10:
            raise ValueError("weights must sum to one")
        if abs(values["b"] + float(a @ u)) > 1e-10 * max(1.0, float(np.abs(u).max())):
            raise ValueError("intercept must equal -a.u")
        return values

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float)

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.u, dtype=float)


class IulePrecompute(FrozenModel):
    """
    Constants of the per-symbol recursion: first-symbol weights ``a1``/means ``u1``, steady-state weights ``w``,
    steady-state mean offsets ``m`` and the importance ratio ``alpha``.
    """
    a1: List[float]
    u1: List[float]
    w: List[float]
    m: List[float]
    alpha: float = Field(..., gt=0)
    n1: int = Field(..., ge=1)
    Ts: float = Field(..., gt=0)
    steady_block: int = 2

    @pydantic.root_validator(skip_on_failure=True)
    def check_weights(cls, values):
        for name in ("a1", "u1", "w", "m"):
            if len(values[name]) != values["n1"]:
                raise ValueError(f"{name} must have length {values['n1']}")
        for name in ("a1", "w"):
            if abs(math.fsum(values[name]) - 1.0) > 1e-10:
                raise ValueError(f"{name} must sum to one")
        if values["steady_block"] not in (2, 3):
            raise ValueError("steady_block must be 2 or 3")
        return values


class ConfusionMatrix(FrozenModel):
    q: List[List[float]]

    @pydantic.validator("q")
    def check_rows(cls, q):
        size = len(q)
        for row in q:
            if len(row) != size:
                raise ValueError("confusion matrix must be square")
            if any(value < 0.0 or value > 1.0 for value in row):
                raise ValueError("confusion probabilities must lie in [0, 1]")
            if abs(math.fsum(row) - 1.0) > 1e-12:
                raise ValueError("every confusion row must sum to one")
        return q

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.q, dtype=float)


class LevelStats(FrozenModel):
    v: List[float]
    sigma2: List[float]
    priors: List[float]

    @pydantic.root_validator(skip_on_failure=True)
    def check_lengths(cls, values):
        if not len(values["v"]) == len(values["sigma2"]) == len(values["priors"]):
            raise ValueError("v, sigma2 and priors must have the same length")
        if any(s < 0 for s in values["sigma2"]):
            raise ValueError("variances must be nonnegative")
        if any(p < 0 for p in values["priors"]) or abs(math.fsum(values["priors"]) - 1.0) > 1e-12:
            raise ValueError("priors must be nonnegative and sum to 1")
        return values


class PairMargin(FrozenModel):
    i: int
    j: int
    margin: float


class ImprovementReport(FrozenModel):
    improves: bool
    margins: List[PairMargin] = []


class ExperimentConfig(FrozenModel):
    name: str
    params: IgParams
    channel: Optional[ChannelParams] = None
    K: int = Field(1, ge=1)
    n1: int = Field(..., ge=1)
    M: int = Field(1, ge=1)
    Ts_over_mu: float = Field(3.0, gt=0)
    levels: Optional[List[int]] = None
    priors: Optional[List[float]] = None
    window: Optional[int] = Field(None, ge=1)
    estimators: List[EstimatorName]
    trials: int = Field(100_000, ge=1000)
    mle_trials: int = Field(10_000, ge=1000)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    tau_true: float = 0.0
    sweep: SweepParameter
    sweep_values: List[float]
    stats_trials: int = Field(10_000_000, ge=10_000)
    steady_block: int = 2
    mle_max_molecules: int = Field(8, ge=1)
    workers: int = Field(1, ge=1)

    @pydantic.validator("estimators")
    def check_estimators(cls, estimators):
        if len(estimators) == 0:
            raise ValueError("at least one estimator is required")
        return estimators

    @pydantic.validator("steady_block")
    def check_steady_block(cls, steady_block):
        if steady_block not in (2, 3):
            raise ValueError("steady_block must be 2 or 3")
        return steady_block

    @pydantic.root_validator(skip_on_failure=True)
    def check_sweep_values(cls, values):
        sweep, sweep_values = values["sweep"], values["sweep_values"]
        if len(sweep_values) == 0:
            raise ValueError("sweep_values must not be empty")
        for value in sweep_values:
            if value <= 0:
                raise ValueError(f"sweep value {value} for {sweep} must be positive")
            if sweep in INTEGER_SWEEPS and value != int(value):
                raise ValueError(f"sweep value {value} for {sweep} must be an integer")
            if sweep == "N" and int(value) % values["K"] != 0:
                raise ValueError(f"N={value} is not a multiple of K={values['K']}")
        return values

    @property
    def Ts(self) -> float:
        return self.Ts_over_mu * self.params.mu

    @property
    def N(self) -> int:
        return self.K * self.n1

    @property
    def is_training(self) -> bool:
        return self.M == 1

    def at_sweep_point(self, value: float) -> "ExperimentConfig":
        """
        Return a copy of this configuration with the swept parameter set to ``value``.

        Args:
            value (float): One of ``sweep_values``

        Returns:
            :rtype: ExperimentConfig
        """
        update = {}
        if self.sweep == "N":
            update["n1"] = int(value) // self.K
        elif self.sweep == "Ts_over_mu":
            update["Ts_over_mu"] = float(value)
        else:
            update[self.sweep] = int(value)
        if self.sweep in ("M", "n1", "N"):
            # explicit alphabets only make sense at the point they were written for
            update["levels"] = None
            update["priors"] = None
        fields = self.dict()
        fields.update(update)
        return ExperimentConfig.parse_obj(fields)


class EstimatorResult(FrozenModel):
    sweep_value: float
    estimator: str
    trials: int = Field(0, ge=0)
    mse: Optional[float] = None
    standard_error: Optional[float] = None
    bias: Optional[float] = None
    variance: Optional[float] = None
    mse_theory: Optional[float] = None
    crlb: Optional[float] = None
    error: Optional[str] = None

    @pydantic.root_validator(skip_on_failure=True)
    def check_decomposition(cls, values):
        mse, se, bias = values["mse"], values["standard_error"], values["bias"]
        if mse is None:
            return values
        if mse < 0 or (se is not None and se < 0):
            raise ValueError("mse and standard error must be nonnegative")
        if bias is not None and se is not None and bias ** 2 > mse + 3.0 * se + 1e-9 * mse:
            raise ValueError("squared bias exceeds mse")
        return values


class MseReport(FrozenModel):
    config: ExperimentConfig
    package_version: str
    units: str = "s^2"
    rows: List[EstimatorResult] = []
    confusion: Dict[str, List[List[float]]] = {}

    def rows_for(self, estimator: str) -> List[EstimatorResult]:
        return [row for row in self.rows if row.estimator == estimator]

    def row(self, estimator: str, sweep_value: float) -> EstimatorResult:
        for row in self.rows:
            if row.estimator == estimator and row.sweep_value == sweep_value:
                return row
        raise KeyError(f"no result for {estimator} at {sweep_value}")

    def provenance(self) -> str:
        return json.dumps(self.config.dict(by_alias=True), sort_keys=True)
