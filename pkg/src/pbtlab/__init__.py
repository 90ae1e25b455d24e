"""Asynchronous population-based training with bounded hyperparameter
mutation, initiator-based selection, and schedule extraction."""

from .analysis import (
    Schedule,
    ScheduleEntry,
    SeriesPoint,
    best_checkpoint,
    export,
    extract_schedule,
    lineage,
    lowess,
    metric_correlation,
    population_series,
    read_table,
    tail_average,
    validate_schedule,
)
from .config import ConfigError, RunConfig, load_config, save_config
from .hparam import (
    SPACE_PROFILES,
    TABLE2,
    HyperparamSpec,
    clamp,
    init_vector,
    mutate,
    mutate_param,
    sample_count,
    validate_vector,
)
from .orchestrator import RunSummary, TrainingDiverged, resume, run, worker_loop
from .population import (
    CheckpointRecord,
    LogCorruptError,
    PopulationLog,
    initiator_wins,
)
from .specaugment import (
    LD_POLICY,
    MaskPolicy,
    apply_freq_masks,
    apply_time_masks,
    policy_from_vector,
    specaugment,
)
from .tasks import (
    QuadraticTask,
    RegressionTask,
    SpecToyTask,
    Task,
    grid_baseline,
    make_task,
)

__version__ = "0.1.0"
