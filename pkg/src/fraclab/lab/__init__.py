"""Experiment runner: configs, drivers, reports, and the CLI."""

from .config import ExperimentConfig, config_from_sources, read_config_file
from .experiments import (
    DensityTrace,
    run_barrier,
    run_density,
    run_energy_growth,
    run_gmt_suite,
    run_iterate,
    run_kernel_cache,
    run_levelset_convergence,
    run_sobolev_suite,
)
from .iterate import IterationReport, check_iteration_lemma
from .report import Criterion, ExperimentReport

__all__ = [
    "Criterion",
    "DensityTrace",
    "ExperimentConfig",
    "ExperimentReport",
    "IterationReport",
    "check_iteration_lemma",
    "config_from_sources",
    "read_config_file",
    "run_barrier",
    "run_density",
    "run_energy_growth",
    "run_gmt_suite",
    "run_iterate",
    "run_kernel_cache",
    "run_levelset_convergence",
    "run_sobolev_suite",
]
