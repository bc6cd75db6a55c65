"""Numerical verification of the boundary maximum principle for free boundary
minimal varieties: orthogonal foliations, barrier test fields, Q-form trace
bounds and discrete varifold first variations."""

__version__ = "0.1.0"
