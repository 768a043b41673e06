"""Brownian-loop numerics for thermal QED of non-relativistic charged fluids."""

__version__ = "0.1.0"
