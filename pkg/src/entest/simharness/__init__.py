"""Synthetic data and desk-scale replication experiments."""

from .designs import GaussianDesign, RegressionDesign
from .experiments import (
    ExperimentTable,
    run_experiment,
    run_path,
    run_power,
    run_type1,
    run_variability,
    write_score_file,
)
from .genotypes import GenotypeSpec, Genotypes, beta_weights, gen_genotypes
from .spec import DesignSpec, EffectSpec, ExperimentSpec, GridSpec, effect_vector, load_spec

__all__ = [
    "DesignSpec", "EffectSpec", "ExperimentSpec", "ExperimentTable", "GaussianDesign",
    "GenotypeSpec", "Genotypes", "GridSpec", "RegressionDesign", "beta_weights",
    "effect_vector", "gen_genotypes", "load_spec", "run_experiment", "run_path",
    "run_power", "run_type1", "run_variability", "write_score_file",
]
