"""Phase-field tumor growth simulations on structured grids."""

from __future__ import annotations

__version__ = "0.1.0"

from .grid import NEUMANN, BoundaryCondition, Grid, GridError, dirichlet  # noqa: F401
