"""Desk-scale adversarial training with cross-class feature attribution
metrics, a planted-feature data generator, and closed-form verification of
the underlying three-class analytic model."""

__version__ = "0.1.0"
