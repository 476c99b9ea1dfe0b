"""Perturbative flow equations, weighted tree classes and momentum bounds for massless phi^4."""

__version__ = "0.1.0"
