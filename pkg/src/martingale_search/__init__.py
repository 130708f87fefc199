"""Ensemble global search driven by a martingale innovation, with state-space splitting."""

from .benchmarks import CompositeBenchmark, make_suite, shifted
from .ensemble import (
    ConfigError,
    Ensemble,
    GainSolveError,
    ObjectiveSpec,
    SearchConfig,
    best_vector,
    ensemble_mean,
    fitness,
    init_ensemble,
)
from .estimator import MartingaleSearch
from .harness import ExperimentConfig, RunRecord, read_records, run_experiment, run_single, write_records
from .rng import RecordingStream, ReplayStream, RngStream
from .splitting import Partition, iterate_3s, make_partition, substructure_gain
from .update import compute_gain, iterate

__all__ = [
    "CompositeBenchmark", "ConfigError", "Ensemble", "ExperimentConfig", "GainSolveError",
    "MartingaleSearch", "ObjectiveSpec", "Partition", "RecordingStream", "ReplayStream",
    "RngStream", "RunRecord", "SearchConfig", "best_vector", "compute_gain", "ensemble_mean",
    "fitness", "init_ensemble", "iterate", "iterate_3s", "make_partition", "make_suite",
    "read_records", "run_experiment", "run_single", "shifted", "substructure_gain",
    "write_records",
]
