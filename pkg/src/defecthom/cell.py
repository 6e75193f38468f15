"""Periodic cell problems.

* the corrector ``-div(a_per (p + grad w)) = 0`` with zero mean,
* the homogenized tensor ``a*_ij = <e_i . a_per (e_j + grad w_j)>``,
* the invariant measure (kernel of the transposed non-divergence operator),
* the skew potential ``B_per`` with ``Div B_per = Div(m_per a_per)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .field import GridSpec, MatrixField, ScalarField, VectorField, grad_array, div_array
from .operators import (ConvergenceError, DivFormOperator, NonDivOperator, matrix_divergence,
                        skew_potential, solve_general)

__all__ = [
    "CellSolution",
    "HomogenizedTensor",
    "PeriodicInvariantMeasure",
    "KernelError",
    "PositivityError",
    "solve_periodic_corrector",
    "homogenized_tensor",
    "solve_periodic_invariant_measure",
    "periodic_vector_potential",
    "vector_to_skew",
    "skew_to_vector",
]


class KernelError(RuntimeError):
    """The discrete adjoint kernel is not numerically one dimensional."""


class PositivityError(RuntimeError):
    """A computed invariant measure has non-positive entries."""

    def __init__(self, msg, node=None, value=None):
        super().__init__(msg)
        self.node = node
        self.value = value


@dataclass
class CellSolution:
    """Periodic corrector for one direction ``p``."""

    p: np.ndarray
    w_per: ScalarField
    grad_w_per: VectorField
    flux: VectorField
    residual: float
    a_star_column: np.ndarray

    @property
    def grad_sup(self) -> float:
        return float(np.max(np.abs(self.grad_w_per.values)))

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "residual": self.residual,
            "a_star_column": self.a_star_column.tolist(),
            "grad_w_sup": self.grad_sup,
            "w_mean": float(self.w_per.values.mean()),
        }


@dataclass
class HomogenizedTensor:
    a_star: np.ndarray
    mu_min: float
    mu_max: float

    def to_dict(self) -> dict:
        return {"a_star": self.a_star.tolist(), "mu_min": self.mu_min, "mu_max": self.mu_max}


@dataclass
class PeriodicInvariantMeasure:
    m_per: ScalarField
    mean: float
    min: float
    residual: float
    kernel_gap: float = float("nan")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "min": self.min, "residual": self.residual,
                "kernel_gap": self.kernel_gap}


def _as_operator(a_per) -> DivFormOperator:
    if isinstance(a_per, DivFormOperator):
        return a_per
    if a_per.grid.kind != "cell":
        raise ValueError("cell problems need a cell grid")
    return DivFormOperator(a_per)


def solve_periodic_corrector(a_per, p, method: str = "auto", rtol: float = 1e-11) -> CellSolution:
    """Mean-zero solution of ``-div(a_per (p + grad w)) = 0`` on the unit cell.

    Parameters
    ----------
    a_per : MatrixField or DivFormOperator
        Periodic coefficient on a cell grid (an operator may be passed to
        reuse its factorisation across directions).
    p : array_like
        Direction vector.

    Returns
    -------
    CellSolution
        With the relative residual ``||div(F(p + grad w))|| / ||div(F p)||``
        and the column ``<F(p + grad w)>`` of the homogenized tensor.

    Raises
    ------
    ConvergenceError
        If the linear solve fails.
    """
    op = _as_operator(a_per)
    grid = op.grid
    p = np.asarray(p, dtype=float).reshape(grid.d)
    pf = np.broadcast_to(p.reshape((grid.d,) + (1,) * grid.d), (grid.d,) + grid.shape)
    Fp = op.flux(np.array(pf))
    rhs = div_array(Fp, grid.h)
    w = op.solve(rhs, method=method, rtol=rtol)
    g = grad_array(w, grid.h)
    flux = op.flux(pf + g)
    scale = float(np.linalg.norm(rhs))
    res_abs = float(np.linalg.norm(div_array(flux, grid.h)))
    residual = res_abs / scale if scale > 0 else res_abs
    col = flux.reshape(grid.d, -1).mean(axis=1)
    return CellSolution(p, ScalarField(grid, w), VectorField(grid, g), VectorField(grid, flux),
                        residual, col)


def homogenized_tensor(a_per, solutions: Sequence[CellSolution] | None = None,
                       method: str = "auto") -> HomogenizedTensor:
    """Cell averages of the corrected fluxes, one column per canonical direction.

    If ``solutions`` is omitted the correctors are computed here.

    Raises
    ------
    ValueError
        If a canonical direction is missing from ``solutions``.
    """
    op = _as_operator(a_per)
    d = op.d
    if solutions is None:
        solutions = [solve_periodic_corrector(op, np.eye(d)[j], method=method) for j in range(d)]
    cols = {}
    for s in solutions:
        for j in range(d):
            if np.array_equal(s.p, np.eye(d)[j]):
                cols[j] = s.a_star_column
    missing = [j for j in range(d) if j not in cols]
    if missing:
        raise ValueError(f"missing corrector for direction(s) e_{missing}")
    A = np.stack([cols[j] for j in range(d)], axis=1)
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return HomogenizedTensor(A, float(ev[0]), float(ev[-1]))


def _kernel_gap(R, iters: int = 30) -> float:
    """Smallest singular value of ``R`` by inverse iteration on ``R^T R``."""
    lu = spla.splu(R.tocsc(), permc_spec="COLAMD")
    rng = np.random.default_rng(0)
    x = rng.standard_normal(R.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = lu.solve(lu.solve(x, trans="T"))
        lam_new = float(np.linalg.norm(y))
        x = y / lam_new
        if abs(lam_new - lam) <= 1e-6 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return 1.0 / np.sqrt(lam)


def solve_periodic_invariant_measure(a_per: MatrixField, method: str = "auto",
                                     kernel_tol: float = 1e-10,
                                     check_gap: bool = True) -> PeriodicInvariantMeasure:
    """Kernel of the transposed discrete non-divergence operator, mean one.

    The value at node 0 is pinned and the remaining rows and columns of
    ``N^T`` are solved directly (or by GMRES on large grids).  The smallest
    singular value of the reduced matrix is reported as the kernel gap.

    Raises
    ------
    KernelError
        If the reduced matrix is numerically singular (kernel of dimension > 1).
    PositivityError
        If some node value is not positive.
    """
    grid = a_per.grid
    if grid.kind != "cell":
        raise ValueError("the periodic invariant measure lives on a cell grid")
    if a_per.location != "node":
        raise ValueError("non-divergence coefficients are sampled at nodes")
    op = NonDivOperator(a_per)
    K = op.matrix()
    KT = K.T.tocsr()
    if method == "auto":
        method = "direct" if grid.size <= 300_000 else "gmres"
    gap = float("nan")
    if method == "direct":
        R = KT[1:, 1:].tocsc()
        b = -np.asarray(KT[1:, 0].todense()).ravel()
        if check_gap:
            gap = _kernel_gap(R)
            scale = float(abs(R).sum(axis=1).max())
            if gap <= kernel_tol * scale:
                raise KernelError(f"adjoint kernel not simple: reduced smallest singular value "
                                  f"{gap:.3e} (scale {scale:.3e})")
        m = np.empty(grid.size)
        m[0] = 1.0
        m[1:] = spla.splu(R, permc_spec="COLAMD").solve(b)
    elif method == "gmres":
        ones = np.ones(grid.size)
        rhs = -(KT @ ones)
        pre = op._preconditioner()
        mu, _ = solve_general(lambda v: KT @ v, rhs, precond=pre, rtol=1e-13)
        m = ones + mu
    else:
        raise ValueError(f"unknown method {method!r}")
    m = m.reshape(grid.shape)
    m = m / m.mean()
    residual = float(np.linalg.norm(KT @ m.ravel()) / np.linalg.norm(K.diagonal()))
    mmin = float(m.min())
    if mmin <= 0:
        node = tuple(int(i) for i in np.unravel_index(int(np.argmin(m)), grid.shape))
        raise PositivityError(f"invariant measure is {mmin:.3e} at node {node}", node, mmin)
    return PeriodicInvariantMeasure(ScalarField(grid, m), float(m.mean()), mmin, residual, gap)


def periodic_vector_potential(a_per: MatrixField, m_per, tol: float = 1e-8) -> MatrixField:
    """Skew ``B_per`` with ``Div B_per = Div(m_per a_per)`` on the cell.

    Fourier diagonalisation with the zero mode pinned; the output is skew by
    construction.

    Raises
    ------
    ValueError
        If ``Div(m_per a_per)`` has a non-zero mean or backward divergence
        beyond ``tol`` (relative), i.e. ``m_per`` is not an invariant measure.
    """
    grid = a_per.grid
    m = m_per.m_per.values if isinstance(m_per, PeriodicInvariantMeasure) else \
        getattr(m_per, "values", m_per)
    X = m * a_per.values
    v = matrix_divergence(X, grid.h)
    scale = max(float(np.abs(v).max()), float(np.abs(X).max()) / grid.h, 1e-300)
    compat = max(float(np.abs(v.reshape(grid.d, -1).mean(axis=1)).max()),
                 float(np.abs(div_array(v, grid.h)).max()) * grid.h)
    if compat > tol * scale:
        raise ValueError(f"Div(m a) is not divergence free (relative {compat / scale:.3e})")
    B = skew_potential(v, grid.h)
    return MatrixField(grid, B, "node")


def vector_to_skew(Bv: np.ndarray) -> np.ndarray:
    """3-D vector field ``B`` to ``[[0,-B3,B2],[B3,0,-B1],[-B2,B1,0]]``."""
    if Bv.shape[0] != 3:
        raise ValueError("vector-to-skew mapping is three dimensional")
    z = np.zeros_like(Bv[0])
    return np.array([[z, -Bv[2], Bv[1]], [Bv[2], z, -Bv[0]], [-Bv[1], Bv[0], z]])


def skew_to_vector(B: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vector_to_skew` (uses the lower-triangular entries)."""
    if B.shape[:2] != (3, 3):
        raise ValueError("skew-to-vector mapping is three dimensional")
    return np.array([B[2, 1], B[0, 2], B[1, 0]])
