"""Monte Carlo construction and verification of times of maximum of nonnegative local martingales."""

__version__ = "0.1.0"
