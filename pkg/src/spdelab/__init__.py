"""Finite element and spectral simulation of semilinear stochastic heat
equations, with exact error formulas, Monte Carlo convergence studies and
discrete Malliavin calculus."""

__version__ = "0.1.0"
