"""Iterative learning predictive control with set-membership disturbance
learning and tube-based constraint tightening."""

__version__ = "0.1.0"
