"""2D stochastic convective Brinkman-Forchheimer simulator and verification harness."""

__version__ = "0.1.0"
