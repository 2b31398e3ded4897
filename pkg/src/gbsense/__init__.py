"""Bayesian Ramsey frequency estimation with whitebox and graybox likelihoods."""
from __future__ import annotations

__version__ = "0.1.0"

from .bayes import (
    MeasurementBatch,
    PosteriorGrid,
    count_likelihood,
    mean_estimate,
    run_estimation,
    squared_error,
    uniform_prior,
    update,
    variance,
)
from .graybox import GrayboxProvider, load_checkpoint, make_graybox, save_checkpoint, train
from .quantum import PulseSettings, QubitState, ReadoutCalibration, click_probability, u_ramsey
from .simulator import AnalyticProvider, DatasetPlan, NoiseConfig, generate_dataset, mc_expectation_z, simulate_batch
from .whitebox import WhiteboxConfig, WhiteboxProvider

__all__ = [
    "AnalyticProvider", "DatasetPlan", "GrayboxProvider", "MeasurementBatch", "NoiseConfig", "PosteriorGrid",
    "PulseSettings", "QubitState", "ReadoutCalibration", "WhiteboxConfig", "WhiteboxProvider", "click_probability",
    "count_likelihood", "generate_dataset", "load_checkpoint", "make_graybox", "mc_expectation_z", "mean_estimate",
    "run_estimation", "save_checkpoint", "simulate_batch", "squared_error", "train", "u_ramsey", "uniform_prior",
    "update", "variance",
]
