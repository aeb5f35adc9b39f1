"""Filesystem-handshake DPO trainer for pref/v1 preference files."""

from .jobs import NoSignalError, StackError, TrainJob, read_status, run_dpo_job, write_status
from .pref import ValidationReport, load_pref_records, validate_pref_file
from .tiny_model import init_tiny_model

__version__ = "0.1.0"
