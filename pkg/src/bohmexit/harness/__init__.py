"""Configuration, orchestration and the command-line entry point."""

from .config import ExperimentConfig, dump_config, from_dict, load_config, loads_config, save_config
from .runner import ConvergenceTable, RunResult, build_state, run, run_born, sweep_R

__all__ = ["ExperimentConfig", "ConvergenceTable", "RunResult", "build_state", "dump_config", "from_dict",
           "load_config", "loads_config", "run", "run_born", "save_config", "sweep_R"]
