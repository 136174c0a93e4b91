"""Counterfactual explanations for predict-then-optimize pipelines."""

from .errors import (
    CapacityError,
    CfoptError,
    InputError,
    NumericError,
    TrainingError,
    UndefinedMetricError,
)
from .explain import (
    ExplanationResult,
    ExplanationTask,
    MdmmConfig,
    cf_opt_feature,
    cf_opt_latent,
    energy,
    grad_h,
    h_value,
    verify_explanation,
)
from .nn import AdamState, DenseNet, Layer, adam_step
from .optlayers import GridGraph, KnapsackInstance, Solution
from .pipeline import Dataset, Pipeline, pipeline_decide, spo_plus_loss, train_spo
from .plausibility import (
    AnnulusRegion,
    RegularizerSpec,
    chi_mean,
    omega,
    prior_mass,
    region_objective,
    verify_optimal_region,
)
from .vae import Vae, cost_aware_elbo, kl_closed_form, train_vae

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AnnulusRegion", "CapacityError", "CfoptError", "Dataset", "DenseNet",
    "ExplanationResult", "ExplanationTask", "GridGraph", "InputError", "KnapsackInstance",
    "Layer", "MdmmConfig", "NumericError", "Pipeline", "RegularizerSpec", "Solution",
    "TrainingError", "UndefinedMetricError", "Vae", "adam_step", "cf_opt_feature",
    "cf_opt_latent", "chi_mean", "cost_aware_elbo", "energy", "grad_h", "h_value",
    "kl_closed_form", "omega", "pipeline_decide", "prior_mass", "region_objective",
    "spo_plus_loss", "train_spo", "train_vae", "verify_explanation", "verify_optimal_region",
]
