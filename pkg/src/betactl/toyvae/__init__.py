"""A small numpy VAE trained under the KL-weight controller."""
from .data import FactorDataset, make_factor_dataset
from .metrics import dimwise_kl_trace, mig_score
from .model import ToyVae, elbo_terms
from .train import ControlConfig, TrainLog, VaeConfig, plain_vae_kl, train_with_controller
