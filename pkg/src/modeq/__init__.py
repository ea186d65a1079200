"""Simulation and verification toolkit for the stochastic gradient scheme and its modified equations."""
