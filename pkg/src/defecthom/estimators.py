"""Estimator-style wrappers around the solvers.

These follow the scikit-learn conventions (constructor parameters only,
``fit`` returns ``self``, fitted attributes end in ``_``) so they compose with
``get_params``/``set_params`` and ``clone``.  The numerical work lives in the
solver modules.
"""

from __future__ import annotations

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cell import homogenized_tensor, solve_periodic_corrector, solve_periodic_invariant_measure
from .coeff import CoefficientModel, sample_periodic
from .field import GridSpec
from .operators import DivFormOperator

__all__ = ["CellHomogenizer", "DecayLawRegressor", "OperatorNormEstimator"]


class CellHomogenizer(TransformerMixin, BaseEstimator):
    """Homogenized tensor of a periodic coefficient.

    Parameters
    ----------
    n : int
        Nodes per cell side.
    invariant_measure : bool
        Also compute the periodic invariant measure.

    Attributes
    ----------
    a_star_ : ndarray of shape (d, d)
    correctors_ : list of CellSolution
    m_per_ : PeriodicInvariantMeasure or None

    Examples
    --------
    >>> from defecthom.coeff import CoefficientModel, PeriodicSpec
    >>> est = CellHomogenizer(n=16).fit(CoefficientModel(PeriodicSpec.identity(2)))
    >>> est.transform([[1.0, 2.0]]).round(12).tolist()
    [[1.0, 2.0]]
    """

    def __init__(self, n: int = 64, invariant_measure: bool = False):
        self.n = n
        self.invariant_measure = invariant_measure

    def fit(self, X: CoefficientModel, y=None):
        d = X.d
        cell = GridSpec(d, self.n, 1, "cell")
        op = DivFormOperator(sample_periodic(X, cell, "cell"))
        self.correctors_ = [solve_periodic_corrector(op, np.eye(d)[k]) for k in range(d)]
        self.a_star_ = homogenized_tensor(op, self.correctors_).a_star
        self.m_per_ = (solve_periodic_invariant_measure(sample_periodic(X, cell, "node"))
                       if self.invariant_measure else None)
        return self

    def transform(self, X):
        """Homogenized fluxes ``a* p`` for gradients ``p`` (rows of ``X``)."""
        check_is_fitted(self, "a_star_")
        P = np.atleast_2d(np.asarray(X, dtype=float))
        return P @ self.a_star_.T


class DecayLawRegressor(RegressorMixin, BaseEstimator):
    """Power law ``value = C R^slope`` fitted in log-log coordinates.

    Attributes
    ----------
    slope_, intercept_, stderr_ : float
    """

    def fit(self, X, y):
        R = np.asarray(X, dtype=float).ravel()
        v = np.asarray(y, dtype=float).ravel()
        if R.size < 2 or np.any(R <= 0) or np.any(v <= 0):
            raise ValueError("need at least two positive (R, value) pairs")
        res = stats.linregress(np.log(R), np.log(v))
        self.slope_ = float(res.slope)
        self.intercept_ = float(res.intercept)
        self.stderr_ = float(res.stderr)
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        R = np.asarray(X, dtype=float).ravel()
        return np.exp(self.intercept_ + self.slope_ * np.log(R))


class OperatorNormEstimator(BaseEstimator):
    """Empirical ``L^q`` gradient-to-data ratios along ``a_per + t a_tilde``.

    Attributes
    ----------
    estimates_ : list of OperatorNormEstimate
    max_ratio_ : dict mapping q to the largest ratio over ``t``
    """

    def __init__(self, n: int = 16, L: int = 4, t_grid=(0.0, 0.25, 0.5, 0.75, 1.0),
                 q_list=(1.5, 2.0, 3.0), probe_count: int = 20, seed: int = 0):
        self.n = n
        self.L = L
        self.t_grid = t_grid
        self.q_list = q_list
        self.probe_count = probe_count
        self.seed = seed

    def fit(self, X: CoefficientModel, y=None):
        from .defect import operator_norm_sweep

        box = GridSpec(X.d, self.n, self.L, "box")
        self.estimates_ = operator_norm_sweep(X, box, self.t_grid, self.q_list,
                                              probe_count=self.probe_count, seed=self.seed)
        self.max_ratio_ = {float(q): max(e.max_ratio for e in self.estimates_ if e.q == float(q))
                           for q in self.q_list}
        return self
