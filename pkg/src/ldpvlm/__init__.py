"""Local differential privacy through a learned Laplace mechanism."""

from .analysis import (BoundQuery, accuracy_upper_bound, bound_simulation_oracle,
                       private_grid_search, private_validation)
from .classifier import (NoiseAwareClassifier, PrivatizedDataset, noise_aware_loss, predict,
                         split_budget, train_joined, train_on_private)
from .mechanisms import (FlipMechanismSpec, LaplaceMechanismSpec, PerFeaturePrivatizer,
                         PiecewiseMechanismSpec, debias_accuracy, flip_label,
                         flip_transition_matrix, laplace_mechanism, per_feature_privatize,
                         piecewise_mechanism, randomized_response_bit)
from .rng import RandomnessSource
from .vlm import (LaplaceVLM, privatize_to_features, privatize_to_latent, required_cdp_component,
                  train_stage_one, train_stage_two_dp)

__all__ = [
    "BoundQuery",
    "accuracy_upper_bound",
    "bound_simulation_oracle",
    "private_grid_search",
    "private_validation",
    "NoiseAwareClassifier",
    "PrivatizedDataset",
    "noise_aware_loss",
    "predict",
    "split_budget",
    "train_joined",
    "train_on_private",
    "FlipMechanismSpec",
    "LaplaceMechanismSpec",
    "PerFeaturePrivatizer",
    "PiecewiseMechanismSpec",
    "debias_accuracy",
    "flip_label",
    "flip_transition_matrix",
    "laplace_mechanism",
    "per_feature_privatize",
    "piecewise_mechanism",
    "randomized_response_bit",
    "RandomnessSource",
    "LaplaceVLM",
    "privatize_to_features",
    "privatize_to_latent",
    "required_cdp_component",
    "train_stage_one",
    "train_stage_two_dp",
]

__version__ = "0.1.0"
