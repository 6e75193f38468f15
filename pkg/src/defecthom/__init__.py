"""Numerical homogenization toolkit for periodic media with local defects.

Modules
-------
field      grids, staggered fields, difference stencils, norms, I/O
coeff      periodic coefficients, defects, sampling and ellipticity checks
cell       periodic correctors, homogenized tensor, periodic invariant measure
defect     defect correctors, operator-norm sweeps, duality, the L^1 counterexample
nondiv     non-divergence solves, invariant measures, divergence-form rewrite
green      discrete Green functions and decay laws
twoscale   oscillatory solves and two-scale convergence studies
runner     configured experiments and reports (see also ``config`` and ``cli``)
"""

from .cell import homogenized_tensor, solve_periodic_corrector, solve_periodic_invariant_measure
from .coeff import CoefficientModel, DefectSpec, PeriodicSpec, TrigTerm
from .field import GridSpec, MatrixField, ScalarField, VectorField

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "PeriodicSpec",
    "DefectSpec",
    "TrigTerm",
    "CoefficientModel",
    "solve_periodic_corrector",
    "homogenized_tensor",
    "solve_periodic_invariant_measure",
]
