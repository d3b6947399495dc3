"""Solvers and dispersion analysis for an epsilon-scaled DPG discretization
of the first-order Helmholtz system on uniform square meshes, with bilinear
FEM and first-order least-squares baselines."""

__version__ = "0.1.0"
