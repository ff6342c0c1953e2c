"""Bernoulli variational autoencoders: closed-form bound, preinit, training."""
from .closedform import (CenteredData, ClosedFormSolution, center_targets, elbo_lower_bound,
                         fit_closed_form, optimal_mu_z, optimal_sigma_z, optimal_W, sample_cov_S,
                         sample_mean_b, select_latent_dim)
from .datagen import BinaryDataset, GenConfig, generate_dataset
from .vae import TrainConfig, VaeArchitecture, apply_preinit, build_model, fit, split_train_test

__version__ = "0.1.0"
