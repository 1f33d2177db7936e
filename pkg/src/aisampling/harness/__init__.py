from .config import ExperimentConfig, bench_grid, preset
from .output import emit_outputs, read_results_csv, write_results_csv
from .runner import ResultRow, compute_mse, run_experiment

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "bench_grid",
    "compute_mse",
    "emit_outputs",
    "preset",
    "read_results_csv",
    "run_experiment",
    "write_results_csv",
]
