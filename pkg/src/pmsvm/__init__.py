"""Differentially private multi-class linear SVMs.

Joint (all-in-one) training releases one model for a single privacy budget,
either by perturbing the solved weights with analytically calibrated
Gaussian noise or by noisy clipped-gradient descent with subsampled-Gaussian
accounting. One-vs-rest baselines split the same budget across per-class
classifiers for comparison.
"""

from .numerics import RandomSource, poisson_subsample, sample_gaussian, std_normal_cdf
from .data import (
    Dataset,
    MinMaxScaler,
    apply_minmax,
    fit_minmax,
    load_csv,
    load_libsvm,
    project_unit_ball,
    save_libsvm,
    stratified_split,
    synth_blobs,
)
from .model import (
    LinearModel,
    LossParams,
    binary_hinge_grad,
    binary_hinge_loss,
    binary_smoothed_grad_example,
    binary_smoothed_loss,
    ce_grad_example,
    ce_loss,
    cs_hinge_loss,
    cs_subgrad,
    load_model,
    margins,
    predict,
    predict_batch,
    save_model,
    smoothed_grad_example,
    smoothed_loss,
)
from .privacy import (
    ClassEncoding,
    PrivacyBudget,
    RdpLedger,
    SensitivityBound,
    calibrate_analytic_gaussian,
    compose_budgets,
    gram_matrix,
    lambda_max,
    lambda_max_preset,
    perturb_weights,
    sigma_for_budget,
    split_budget_ovr,
    weight_sensitivity,
)
from .trainers import (
    GpConfig,
    TrainReport,
    WpConfig,
    linear_ce_gp,
    ovr_gp,
    ovr_wp,
    pmsvm_agp,
    pmsvm_gp,
    pmsvm_wp,
    schedule_step,
    solve_allinone,
)

__all__ = [
    "RandomSource",
    "poisson_subsample",
    "sample_gaussian",
    "std_normal_cdf",
    "Dataset",
    "MinMaxScaler",
    "apply_minmax",
    "fit_minmax",
    "load_csv",
    "load_libsvm",
    "project_unit_ball",
    "save_libsvm",
    "stratified_split",
    "synth_blobs",
    "LinearModel",
    "LossParams",
    "binary_hinge_grad",
    "binary_hinge_loss",
    "binary_smoothed_grad_example",
    "binary_smoothed_loss",
    "ce_grad_example",
    "ce_loss",
    "cs_hinge_loss",
    "cs_subgrad",
    "load_model",
    "margins",
    "predict",
    "predict_batch",
    "save_model",
    "smoothed_grad_example",
    "smoothed_loss",
    "ClassEncoding",
    "PrivacyBudget",
    "RdpLedger",
    "SensitivityBound",
    "calibrate_analytic_gaussian",
    "compose_budgets",
    "gram_matrix",
    "lambda_max",
    "lambda_max_preset",
    "perturb_weights",
    "sigma_for_budget",
    "split_budget_ovr",
    "weight_sensitivity",
    "GpConfig",
    "TrainReport",
    "WpConfig",
    "linear_ce_gp",
    "ovr_gp",
    "ovr_wp",
    "pmsvm_agp",
    "pmsvm_gp",
    "pmsvm_wp",
    "schedule_step",
    "solve_allinone",
    "__version__",
]

__version__ = "0.1.0"
