from molecular_sync.cache import StatsCache
from molecular_sync.experiments import emit_report, load_config, run_experiment, theory_report
from molecular_sync.models import ArrivalObservation, CacheDirectoryNotFound, ChannelParams, \
    ComplexityLimitExceeded, ConfigurationError, ConfusionMatrix, CovarianceConditioningError, EstimatorNotApplicable, \
    ExperimentConfig, IgParams, InfeasibleSearchInterval, IulePrecompute, LevelStats, ModulationScheme, MseReport, \
    QuadratureError, ReleaseSchedule, ReportWriteError, SortedArrivalStats, UleWeights, UnsupportedMomentOrder
from molecular_sync.version import __version__
