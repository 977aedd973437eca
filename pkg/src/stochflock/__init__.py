"""Monte Carlo toolkit for the stochastic singular Cucker-Smale flocking model."""

__version__ = "0.1.0"
