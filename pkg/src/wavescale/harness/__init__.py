"""Distribution-shift benchmark harness and command line interface."""

from .errors import StageError
from .manifest import DatasetManifest, ManifestRecord, SplitRule, load_manifest
from .models import BlackBoxModel, load_model
from .resample import resample_gsd
from .runner import EvalReport, evaluate_split, paired_shift_run, run_benchmark

__all__ = [
    "BlackBoxModel",
    "DatasetManifest",
    "EvalReport",
    "ManifestRecord",
    "SplitRule",
    "StageError",
    "evaluate_split",
    "load_manifest",
    "load_model",
    "paired_shift_run",
    "resample_gsd",
    "run_benchmark",
]
