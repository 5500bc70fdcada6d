"""latent4d - latent-conditioned dynamic scene functions for stochastic video prediction."""

__version__ = "0.1.0"
