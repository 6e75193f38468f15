"""Non-divergence operators, invariant measures and the divergence-form rewrite.

Conventions
-----------
``N u = -sum_ij a_ij D_ij u`` with nodal, symmetric ``a``.  Matrix
divergences are taken column-wise, ``(Div X)_j = sum_i d_i X_ij``, and are
discretised by :func:`~defecthom.operators.matrix_divergence`, whose
backward divergence is ``sum_ij D_ij X_ij``.  Hence ``m`` with
``N^T m = 0`` makes ``Div(m a)`` exactly divergence free, and the skew
potential ``B`` with ``Div B = Div(m a)`` yields ``Div(m a - B) = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cell import (PeriodicInvariantMeasure, PositivityError, periodic_vector_potential,
                   solve_periodic_invariant_measure)
from .coeff import (CoefficientModel, ellipticity_check, sample_coefficient, sample_defect,
                    sample_periodic)
from .field import (Annulus, GridSpec, MatrixField, ScalarField, VectorField, annulus_mask,
                    div_array, lq_norm, pin_boundary, second_diff_array)
from .operators import DivFormOperator, NonDivOperator, matrix_divergence, skew_potential

__all__ = [
    "NonDivSolution",
    "InvariantMeasure",
    "DivergenceRewrite",
    "solve_nondiv",
    "solve_adjoint_double_div",
    "double_divergence",
    "solve_defect_invariant_measure",
    "build_vector_potential",
    "to_divergence_form",
    "rewrite_consistency",
    "periodic_rewrite",
    "homogenize_nondiv_pipeline",
]

log = logging.getLogger(__name__)


@dataclass
class NonDivSolution:
    u: ScalarField
    hessian: np.ndarray
    norms: dict
    residual: float


@dataclass
class InvariantMeasure:
    """``m = m_per + m_tilde`` on a box."""

    m_per: ScalarField
    m_tilde: ScalarField
    min: float
    norms: dict
    residual_periodic: float
    residual_defect: float
    annulus_sup: list = field(default_factory=list)
    far_field_ok: bool = True

    @property
    def m(self) -> np.ndarray:
        return _tile(self.m_per.values, self.m_tilde.grid) + self.m_tilde.values

    def to_dict(self) -> dict:
        return {"min": self.min, "norms": {str(q): v for q, v in self.norms.items()},
                "residual_periodic": self.residual_periodic,
                "residual_defect": self.residual_defect,
                "annulus_sup": [list(r) for r in self.annulus_sup],
                "far_field_ok": self.far_field_ok}


@dataclass
class DivergenceRewrite:
    a_bar: MatrixField
    b_bar: VectorField
    B: MatrixField
    A: MatrixField
    residual: float
    skew_defect: float
    sym_bounds: tuple

    def to_dict(self) -> dict:
        return {"residual": self.residual, "skew_defect": self.skew_defect,
                "sym_min": self.sym_bounds[0], "sym_max": self.sym_bounds[1]}


def _tile(values: np.ndarray, box: GridSpec) -> np.ndarray:
    n = values.shape[-1]
    reps = box.nodes_per_axis // n
    if reps * n != box.nodes_per_axis:
        raise ValueError("cell field does not tile the box")
    lead = values.ndim - box.d
    return np.tile(values, (1,) * lead + (reps,) * box.d)


def _hessian(u: np.ndarray, h: float) -> np.ndarray:
    d = u.ndim
    H = np.empty((d, d) + u.shape)
    for i in range(d):
        for j in range(i, d):
            H[i, j] = second_diff_array(u, i, j, h)
            H[j, i] = H[i, j]
    return H


def solve_nondiv(a: MatrixField, f: ScalarField, q_list: Sequence[float] = (2.0,),
                 method: str = "auto") -> NonDivSolution:
    """Solve ``-a_ij D_ij u = f`` with zero Dirichlet data.

    ``a`` is symmetrised.  Returns the full second-difference tensor and its
    ``L^q`` norms (Frobenius norm per node).

    Raises
    ------
    ConvergenceError
        If the solve fails.
    """
    op = a if isinstance(a, NonDivOperator) else NonDivOperator(a)
    grid = op.grid
    if grid.boundary != "dirichlet":
        raise ValueError("solve_nondiv is posed with Dirichlet data")
    rhs = pin_boundary(f.values, grid)
    if not np.any(rhs):
        u = np.zeros(grid.shape)
        res = 0.0
    else:
        u = op.solve(rhs, method=method)
        res = float(np.linalg.norm(op.apply(u) - rhs) / np.linalg.norm(rhs))
    H = _hessian(pin_boundary(u, grid), grid.h)
    Hf = MatrixField(grid, H)
    norms = {float(q): lq_norm(Hf, q) for q in q_list}
    return NonDivSolution(ScalarField(grid, u), H, norms, res)


def double_divergence(F: np.ndarray, h: float) -> np.ndarray:
    """``sum_ij D_ij F_ij`` (compact diagonal, centred cross differences)."""
    d = F.shape[0]
    out = np.zeros(F.shape[2:])
    for i in range(d):
        for j in range(d):
            out += second_diff_array(F[i, j], i, j, h)
    return out


def solve_adjoint_double_div(a: MatrixField, F: MatrixField,
                             q_list: Sequence[float] = (2.0,)) -> tuple[ScalarField, dict]:
    """Solve ``-D_ij(a_ij u) = D_ij F_ij`` with the exact transpose of ``N``.

    Returns the solution and its ``L^q`` norms.
    """
    op = a if isinstance(a, NonDivOperator) else NonDivOperator(a)
    grid = op.grid
    rhs = pin_boundary(double_divergence(F.values, grid.h), grid)
    if not np.any(rhs):
        u = np.zeros(grid.shape)
    else:
        u = op.solve(rhs, transpose=True)
    us = ScalarField(grid, u)
    return us, {float(q): lq_norm(us, q) for q in q_list}


def solve_defect_invariant_measure(model: CoefficientModel, box: GridSpec,
                                   m_per: PeriodicInvariantMeasure | None = None,
                                   q_list: Sequence[float] = (2.0,), radii=None,
                                   far_radius: float | None = None) -> InvariantMeasure:
    """Defect part of the invariant measure on a box.

    Solves ``-D_ij(a_ij m_tilde) = D_ij(a_tilde_ij m_per)`` with
    ``a = a_per + a_tilde`` and checks ``m = m_per + m_tilde > 0``.

    Raises
    ------
    PositivityError
        If ``m`` is not positive at some node.
    """
    d = box.d
    if m_per is None:
        cell = GridSpec(d, box.n, 1, "cell")
        m_per = solve_periodic_invariant_measure(sample_periodic(model, cell, "node"))
    mp = _tile(m_per.m_per.values, box)
    a = sample_coefficient(model, box, "node")
    op = NonDivOperator(a)
    if model.has_defect:
        at = sample_defect(model, box, "node")
        F = MatrixField(box, at.values * mp)
        mt, norms = solve_adjoint_double_div(op, F, q_list)
        rhs = pin_boundary(double_divergence(F.values, box.h), box)
        res = float(np.linalg.norm(op.apply_transpose(mt.values) - rhs) /
                    max(np.linalg.norm(rhs), 1e-300))
    else:
        mt = ScalarField(box, np.zeros(box.shape))
        norms = {float(q): 0.0 for q in q_list}
        res = 0.0
    m = mp + mt.values
    mmin = float(m.min())
    if mmin <= 0:
        node = tuple(int(i) for i in np.unravel_index(int(np.argmin(m)), box.shape))
        raise PositivityError(f"invariant measure is {mmin:.3e} at node {node}", node, mmin)
    if radii is None:
        radii = []
        R = 1.0
        while 2 * R <= box.L + 1e-12:
            radii.append(R)
            R *= 2
    sup = []
    for R in radii:
        mask = annulus_mask(box, Annulus(R))
        sup.append((float(R), float(np.abs(mt.values[mask]).max())))
    far = box.L / 2 if far_radius is None else far_radius
    r = np.sqrt(np.sum(box.coords() ** 2, axis=0))
    outside = r >= far
    far_ok = bool(np.all(m[outside] >= 0.5 * m_per.min)) if np.any(outside) else True
    return InvariantMeasure(m_per.m_per, mt, mmin, norms, m_per.residual, res, sup, far_ok)


def build_vector_potential(model: CoefficientModel, measure: InvariantMeasure, box: GridSpec,
                           pad: int = 2, tol: float = 1e-6) -> tuple[MatrixField, float]:
    """Skew ``B_tilde`` with ``Div B_tilde = Div(m_tilde a_per + m_per a_tilde + m_tilde a_tilde)``.

    The data are zero-padded to a periodic box ``pad`` times larger per axis,
    where the whole-space Laplace solves become Fourier divisions.

    Returns
    -------
    (MatrixField, float)
        The potential on the box and the relative residual of its divergence
        away from the truncation faces.

    Raises
    ------
    ValueError
        If ``pad < 2`` or the data fail the divergence-free precondition
        beyond ``tol`` (the invariant-measure solve was inaccurate).
    """
    if pad < 2:
        raise ValueError("pad factor must be at least 2")
    d = box.d
    mp = _tile(measure.m_per.values, box)
    mt = measure.m_tilde.values
    a_per = sample_coefficient(model.without_defect(), box, "node", check=False).values
    at = sample_defect(model, box, "node").values if model.has_defect else np.zeros_like(a_per)
    X = mt * a_per + mp * at + mt * at
    N = box.nodes_per_axis
    big = np.zeros((d, d) + (pad * N,) * d)
    off = (pad - 1) * N // 2
    sl = (slice(None), slice(None)) + (slice(off, off + N),) * d
    big[sl] = X
    v = matrix_divergence(big, box.h)
    # relative to the full field m a, so a near-zero X is not judged against itself
    full = np.abs((mp + mt) * (a_per + at)).max()
    scale = max(float(np.abs(v).max()), float(max(np.abs(X).max(), full)) / box.h, 1e-300)
    # the truncated equation holds away from the pinned box faces only
    inner = np.zeros((pad * N,) * d, dtype=bool)
    inner[(slice(off + 2, off + N - 2),) * d] = True
    dv = np.abs(div_array(v, box.h)) * box.h / scale
    incompat = float(dv[inner].max())
    if incompat > tol:
        raise ValueError(f"Div(X) is not divergence free (relative {incompat:.3e})")
    log.debug("truncation leakage of Div(X): %.3e", float(dv[~inner].max()))
    B = skew_potential(v, box.h)
    diff = np.abs(matrix_divergence(B, box.h) - v)
    res = float(max(diff[k][inner].max() for k in range(d))) / scale
    Bc = B[sl]
    return MatrixField(box, np.ascontiguousarray(Bc), "node"), res


def to_divergence_form(a: MatrixField, b: VectorField | None, m, B: MatrixField) -> DivergenceRewrite:
    """Assemble ``A = m a - B`` and the residual of ``Div B = b_bar + Div(m a)``.

    Raises
    ------
    ValueError
        If ``m`` is not positive everywhere.
    """
    grid = a.grid
    mv = getattr(m, "values", m)
    if np.min(mv) <= 0:
        raise ValueError("invariant measure must be positive")
    abar = mv * a.values
    bbar = np.zeros((grid.d,) + grid.shape) if b is None else mv * b.values
    A = abar - B.values
    lhs = matrix_divergence(B.values, grid.h)
    rhs = bbar + matrix_divergence(abar, grid.h)
    scale = max(float(np.abs(rhs).max()), float(np.abs(abar).max()) / grid.h, 1e-300)
    # in the interior only when the fields live on a truncated box
    diff = lhs - rhs
    if grid.boundary == "dirichlet":
        diff = diff[(slice(None),) + (slice(2, -2),) * grid.d]
    res = float(np.abs(diff).max()) / scale
    skew = float(np.abs(B.values + np.swapaxes(B.values, 0, 1)).max())
    symA = 0.5 * (A + np.swapaxes(A, 0, 1))
    bounds = ellipticity_check(MatrixField(grid, symA))
    return DivergenceRewrite(MatrixField(grid, abar), VectorField(grid, bbar), B,
                             MatrixField(grid, A), res, skew, bounds)


def periodic_rewrite(a_per: MatrixField) -> tuple[PeriodicInvariantMeasure, DivergenceRewrite]:
    """Invariant measure and ``A_per = m_per a_per - B_per`` on the cell.

    The rewrite's residual is the relative size of ``Div A_per``.
    """
    m = solve_periodic_invariant_measure(a_per)
    B = periodic_vector_potential(a_per, m)
    return m, to_divergence_form(a_per, None, m.m_per, B)


def rewrite_consistency(a: MatrixField, f: np.ndarray, m: np.ndarray, A: MatrixField,
                        method: str = "auto") -> dict:
    """Relative ``L^2`` gap between ``N u = f`` and ``-div(A grad u) = m f``.

    On periodic grids ``f`` is shifted by a constant so that ``<m, f> = 0``
    and both solutions are taken with zero mean.
    """
    grid = a.grid
    f = np.asarray(f, dtype=float)
    if grid.boundary == "periodic":
        f = f - float(np.mean(m * f)) / float(np.mean(m))
        nd_method = "gmres" if method == "auto" else method
    else:
        nd_method = method
    nop = NonDivOperator(a)
    u1 = nop.solve(f, method=nd_method)
    dop = DivFormOperator(A)
    dmethod = method
    if method == "auto":
        dmethod = "direct" if dop._use_direct() else "gmres"
    u2 = dop.solve(m * f, method=dmethod)
    gap = float(np.linalg.norm(u1 - u2) / np.linalg.norm(u1))
    return {"relative_l2_gap": gap, "u_direct": u1, "u_rewrite": u2}


def _sample_scaled(field_cell: np.ndarray, field_box: np.ndarray | None, box: GridSpec | None,
                   dom: GridSpec, eps: float, center) -> np.ndarray:
    """``F(x/eps)`` on the domain grid from cell (and optional box) samples."""
    d = dom.d
    n_cell = field_cell.shape[-1]
    N = dom.nodes_per_axis
    per = round(1.0 / eps)
    if per * n_cell != N:
        raise ValueError("domain grid must resolve eps with the cell resolution")
    lead = field_cell.ndim - d
    out = np.tile(field_cell, (1,) * lead + (per,) * d)
    if field_box is not None:
        # domain node index of the defect centre, box origin index
        c = np.asarray(center, dtype=float)
        ci = np.rint(c * N).astype(int)
        if np.any(np.abs(c * N - ci) > 1e-9):
            raise ValueError("defect centre must sit on a domain node")
        o = box.center_index[0]
        Nb = box.nodes_per_axis
        src, dst = [], []
        for k in range(d):
            lo = max(0, ci[k] - o)
            hi = min(N, ci[k] - o + Nb)
            dst.append(slice(lo, hi))
            src.append(slice(lo - (ci[k] - o), hi - (ci[k] - o)))
        out[(slice(None),) * lead + tuple(dst)] += field_box[(slice(None),) * lead + tuple(src)]
    return out


def homogenize_nondiv_pipeline(model: CoefficientModel, f: Callable[[np.ndarray], np.ndarray],
                               eps_list: Sequence[float], n_cell: int = 16, box_L: int = 4,
                               center=None) -> dict:
    """Non-divergence homogenization through the divergence-form rewrite.

    For each ``eps`` the coefficients ``a(x/eps)``, ``m(x/eps)`` and
    ``A(x/eps)`` are sampled on the unit square (defect at ``center``), the
    direct and rewritten problems are solved, and both are compared with the
    homogenized solution of ``-A*:D^2 u = f`` where ``A* = <m_per a_per>``.

    Returns
    -------
    dict
        Per-``eps`` rows with the direct/rewrite gap and ``L^2`` errors, plus
        the periodic quantities.
    """
    d = model.d
    cell = GridSpec(d, n_cell, 1, "cell")
    ap = sample_periodic(model, cell, "node")
    mper = solve_periodic_invariant_measure(ap)
    Bper = periodic_vector_potential(ap, mper)
    Aper = mper.m_per.values * ap.values - Bper.values
    div_Aper = float(np.abs(matrix_divergence(Aper, cell.h)).max())
    a_star = Aper.reshape(d, d, -1).mean(axis=2)
    a_star_sym = 0.5 * (a_star + a_star.T)
    box = None
    mt = Bt = None
    if model.has_defect:
        box = GridSpec(d, n_cell, box_L, "box")
        meas = solve_defect_invariant_measure(model, box, mper)
        Btil, _ = build_vector_potential(model, meas, box)
        mt = meas.m_tilde.values
        at = sample_defect(model, box, "node").values
        Bt = mt * sample_coefficient(model.without_defect(), box, "node").values + \
            (_tile(mper.m_per.values, box) + mt) * at - Btil.values
    if center is None:
        center = np.full(d, 0.5)
    rows = []
    from .fastsolve import AxisBasis, SeparableSolver

    for eps in eps_list:
        N = int(round(n_cell / eps))
        dom = GridSpec(d, N, 1, "domain")
        x = dom.coords()
        a_dom = _sample_scaled(ap.values, None if box is None else
                               sample_defect(model, box, "node").values, box, dom, eps, center)
        m_dom = _sample_scaled(mper.m_per.values, mt, box, dom, eps, center)
        A_dom = _sample_scaled(Aper, Bt, box, dom, eps, center)
        fx = f(x)
        aM = MatrixField(dom, a_dom)
        res = rewrite_consistency(aM, fx, m_dom, MatrixField(dom, A_dom))
        hs = SeparableSolver([AxisBasis("dirichlet", N)] * d, dom.h,
                             coef=np.diag(a_star_sym))
        if np.any(np.abs(a_star_sym - np.diag(np.diag(a_star_sym))) > 1e-12):
            u_star = NonDivOperator(MatrixField(dom, np.broadcast_to(
                a_star_sym.reshape((d, d) + (1,) * d), (d, d) + dom.shape).copy())).solve(fx)
        else:
            u_star = hs.solve(pin_boundary(fx, dom))
        l2 = lambda v: float(np.sqrt(np.sum(v**2) * dom.cell_volume))
        rows.append({
            "eps": float(eps),
            "gap": res["relative_l2_gap"],
            "err_direct_l2": l2(res["u_direct"] - u_star),
            "err_rewrite_l2": l2(res["u_rewrite"] - u_star),
        })
    return {"a_star": a_star.tolist(), "div_A_per": div_Aper, "m_per_min": mper.min, "rows": rows}
