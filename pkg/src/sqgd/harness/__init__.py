from .config import DEFAULTS, EXPERIMENTS, ConfigError, ExperimentConfig
from .experiments import COMMANDS, cmd_attack, cmd_bias_demo, cmd_gd_rates, cmd_reduce, cmd_simulate, cmd_verify, run_experiment
from .results import ResultTable

__all__ = [
    "COMMANDS",
    "ConfigError",
    "DEFAULTS",
    "EXPERIMENTS",
    "ExperimentConfig",
    "ResultTable",
    "cmd_attack",
    "cmd_bias_demo",
    "cmd_gd_rates",
    "cmd_reduce",
    "cmd_simulate",
    "cmd_verify",
    "run_experiment",
]
