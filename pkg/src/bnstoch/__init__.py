"""Bayesian network structure learning from incomplete data with an
evolutionary algorithm, Metropolis-Hastings chains and evolutionary MCMC."""

__version__ = "0.1.0"
