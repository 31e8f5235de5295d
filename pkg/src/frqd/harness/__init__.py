from .config import ConfigError, ExperimentConfig, load_config
from .experiment import RunFailure, RunResult, run_experiment
from .report import write_artifacts
