"""Bilateral pricing under funding-rate asymmetry and collateral, on a binomial lattice."""

__version__ = "0.1.0"
