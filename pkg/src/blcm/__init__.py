"""Binary latent causal models: identifiability checks, population oracles,
simulation and penalized-EM estimation."""

__version__ = "0.1.0"
