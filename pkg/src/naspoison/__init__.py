"""Data-poisoning audit toolkit for neural architecture search at desk scale."""

__version__ = "0.1.0"
