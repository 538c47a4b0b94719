"""Randomized multilevel Monte Carlo for an elliptic Bayesian inverse problem."""
