"""Sweeps, run records, reports and the command-line interface."""
from .records import RunRecord, append_records, derive_seed, read_records, read_records_csv, stable_hash, write_records_csv
from .report import FitEntry, emit_report
from .sweep import SweepResult, SweepSpec, best_per_batch, run_sweep

__all__ = [
    "RunRecord", "append_records", "derive_seed", "read_records", "read_records_csv",
    "stable_hash", "write_records_csv", "FitEntry", "emit_report", "SweepResult",
    "SweepSpec", "best_per_batch", "run_sweep",
]
