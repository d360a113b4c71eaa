"""Adverse drug reaction signal detection on longitudinal patient databases."""
from .errors import AdrsigError, ConfigError, ConvergenceError, DatasetError, UndefinedValueError
from .ranking import ALGORITHMS, RankedSignalList, SignalEntry
from .store import EventDatabase, clean, load_clean, load_dataset, load_dataset_dir
from .pipeline import RunConfig, run, run_algorithm

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "AdrsigError", "ConfigError", "ConvergenceError", "DatasetError", "EventDatabase",
    "RankedSignalList", "RunConfig", "SignalEntry", "UndefinedValueError", "clean", "load_clean", "load_dataset",
    "load_dataset_dir", "run", "run_algorithm",
]
