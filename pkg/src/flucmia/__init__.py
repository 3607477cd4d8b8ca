"""Membership-inference auditing lab for toy probabilistic generative models."""

__version__ = "0.1.0"
