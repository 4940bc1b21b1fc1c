"""Laplace approximations with LULA units for tuning predictive uncertainty."""

from ._core import (
    Augmentation,
    LulaError,
    Network,
    Posterior,
    augment,
    auroc,
    brier,
    fit_laplace,
    linearized_variance,
    mmc,
    penultimate_counts,
    predictive,
    probit_predict_binary,
    reference_config,
    run_command,
    toy_regression,
    train_lula,
    train_map,
    two_moons,
    uniform_noise,
    verify_structure,
)

__all__ = [
    "Augmentation",
    "LulaError",
    "Network",
    "Posterior",
    "augment",
    "auroc",
    "brier",
    "fit_laplace",
    "linearized_variance",
    "mmc",
    "penultimate_counts",
    "predictive",
    "probit_predict_binary",
    "reference_config",
    "run_command",
    "toy_regression",
    "train_lula",
    "train_map",
    "two_moons",
    "uniform_noise",
    "verify_structure",
]
