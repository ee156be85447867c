"""Numerical laboratory for constant mean curvature graphs in E(kappa, tau)."""

__version__ = "0.1.0"
