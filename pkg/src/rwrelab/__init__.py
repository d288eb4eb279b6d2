"""Simulation and exact computation for random walks in perturbed random environments."""

__version__ = "0.1.0"
