"""Discrete divergence-form and non-divergence operators and their solvers.

Divergence form
---------------
The coefficient ``a`` is sampled at cell centres.  On each cell the ``2^d``
corner gradients are formed from the staggered edge differences (for corner
``s`` the ``k``-th component is the ``k``-edge through ``c + s`` with ``s_k``
dropped) and the discrete energy is

    E(u) = sum_cells 2^-d sum_s t_s(u)^T a_c t_s(u) h^d.

Its Hessian ``K = G^T F G`` (``G`` the edge gradient, ``F`` the edge flux
map) is symmetric positive definite for symmetric elliptic ``a``, reduces to
the five/seven point Laplacian for ``a = I`` and satisfies
``K(a^T) = K(a)^T`` exactly.

Non-divergence form
-------------------
``N u = -sum_ij a_ij D_ij u`` with nodal ``a``, compact ``D_ii`` and centred
cross differences ``D_ij``.
"""

from __future__ import annotations

import itertools
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fastsolve import AxisBasis, SeparableSolver
from .field import GridSpec, MatrixField, div_array, grad_array, pin_boundary

__all__ = [
    "ConvergenceError",
    "DivFormOperator",
    "NonDivOperator",
    "gradient_matrix",
    "second_diff_matrix",
    "solve_spd",
    "solve_general",
    "matrix_divergence",
    "skew_potential",
]

log = logging.getLogger(__name__)

#: direct sparse factorisation below this many unknowns (2-D) / (3-D)
DIRECT_LIMIT_2D = 400_000
DIRECT_LIMIT_3D = 60_000


class ConvergenceError(RuntimeError):
    """Iterative solve failed; ``history`` holds the residual norms."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


def _corners(d: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=d)), dtype=int)


def _shift_for(s: np.ndarray, k: int) -> tuple[int, ...]:
    s = s.copy()
    s[k] = 0
    return tuple(int(v) for v in s)


# ---------------------------------------------------------------------------
# sparse building blocks with periodic wrap


def _diff_1d(n: int, h: float, kind: str) -> sp.csr_matrix:
    eye = sp.identity(n, format="csr")
    fwd = sp.diags([np.ones(n - 1), [1.0]], [1, -(n - 1)], shape=(n, n), format="csr")
    bwd = fwd.T.tocsr()
    if kind == "forward":
        return ((fwd - eye) / h).tocsr()
    if kind == "backward":
        return ((eye - bwd) / h).tocsr()
    if kind == "centered":
        return ((fwd - bwd) / (2.0 * h)).tocsr()
    if kind == "second":
        return ((fwd - 2.0 * eye + bwd) / (h * h)).tocsr()
    raise ValueError(kind)


def _axis_op(shape, axis: int, op1d: sp.spmatrix) -> sp.csr_matrix:
    mats = [sp.identity(n, format="csr") for n in shape]
    mats[axis] = op1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out.tocsr()


def gradient_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Stacked forward differences, shape ``(d N, N)`` (component-major)."""
    n = grid.nodes_per_axis
    blocks = [_axis_op(grid.shape, k, _diff_1d(n, grid.h, "forward")) for k in range(grid.d)]
    return sp.vstack(blocks, format="csr")


def second_diff_matrix(grid: GridSpec, i: int, j: int) -> sp.csr_matrix:
    n = grid.nodes_per_axis
    if i == j:
        return _axis_op(grid.shape, i, _diff_1d(n, grid.h, "second"))
    ci = _axis_op(grid.shape, i, _diff_1d(n, grid.h, "centered"))
    cj = _axis_op(grid.shape, j, _diff_1d(n, grid.h, "centered"))
    return (ci @ cj).tocsr()


def interior_index(grid: GridSpec) -> np.ndarray:
    return np.flatnonzero(grid.interior_mask().ravel())


# ---------------------------------------------------------------------------


def solve_spd(apply, rhs: np.ndarray, precond=None, rtol: float = 1e-10, maxiter: int = 2000,
              x0=None) -> tuple[np.ndarray, list[float]]:
    """Preconditioned conjugate gradients on flattened vectors.

    Raises
    ------
    ConvergenceError
        If the relative residual does not reach ``rtol`` within ``maxiter``.
    """
    n = rhs.size
    A = spla.LinearOperator((n, n), matvec=apply, dtype=float)
    M = None if precond is None else spla.LinearOperator((n, n), matvec=precond, dtype=float)
    history: list[float] = []
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), [0.0]

    def cb(xk):
        history.append(float(np.linalg.norm(rhs - apply(xk)) / bnorm) if len(history) % 25 == 0
                       else np.nan)

    x, info = spla.cg(A, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    res = float(np.linalg.norm(rhs - apply(x)) / bnorm)
    history.append(res)
    if info != 0 and res > 10 * rtol:
        raise ConvergenceError(f"CG stopped after {len(history)} iterations with relative "
                               f"residual {res:.3e}", [h for h in history if h == h])
    return x, [h for h in history if h == h]


def solve_general(apply, rhs: np.ndarray, precond=None, rtol: float = 1e-10,
                  maxiter: int = 100, restart: int = 60,
                  floor: float = 1e-7) -> tuple[np.ndarray, list[float]]:
    """Right-preconditioned restarted GMRES for non-symmetric systems.

    Restart cycles stop at ``rtol`` or when a cycle no longer halves the true
    residual (rounding floor).  The result is accepted if the final relative
    residual is below ``max(100 rtol, floor)``.
    """
    n = rhs.size
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), [0.0]
    P = (lambda v: v) if precond is None else precond
    A = spla.LinearOperator((n, n), matvec=lambda v: apply(P(v)), dtype=float)
    y = np.zeros(n)
    history = [1.0]
    for _ in range(maxiter):
        y, _info = spla.gmres(A, rhs, x0=y, rtol=rtol, atol=0.0, restart=restart, maxiter=1)
        res = float(np.linalg.norm(rhs - A @ y) / bnorm)
        history.append(res)
        if res <= rtol or res > 0.5 * history[-2]:
            break
    x = P(y)
    res = float(np.linalg.norm(rhs - apply(x)) / bnorm)
    history.append(res)
    if res > max(100 * rtol, floor):
        raise ConvergenceError(f"GMRES stopped with relative residual {res:.3e}", history)
    return x, history


class DivFormOperator:
    """``u -> -div(a grad u)`` with the corner scheme.

    Parameters
    ----------
    a : MatrixField
        Coefficient; node-located fields are averaged to cell centres.
    """

    def __init__(self, a: MatrixField):
        if a.location != "cell":
            a = a.to_cells()
        self.a = a
        self.grid = a.grid
        self.d = a.grid.d
        v = a.values
        off = v.copy()
        for k in range(self.d):
            off[k, k] = 0.0
        self.is_diagonal = not np.any(off)
        self.is_symmetric = bool(np.array_equal(v, np.swapaxes(v, 0, 1)))
        self._edge_coef = None
        self._matrix = None
        self._factor = None

    # -- matrix-free pieces
    def edge_coefficients(self) -> np.ndarray:
        """Edge coefficients of a diagonal ``a`` (mean of ``a_kk`` over adjacent cells)."""
        if not self.is_diagonal:
            raise ValueError("edge coefficients only exist for diagonal coefficients")
        if self._edge_coef is None:
            d = self.d
            out = np.zeros((d,) + self.grid.shape)
            for k in range(d):
                for s in _corners(d):
                    if s[k]:
                        continue
                    out[k] += np.roll(self.a.values[k, k], shift=tuple(s), axis=tuple(range(d)))
                out[k] /= 2 ** (d - 1)
            self._edge_coef = out
        return self._edge_coef

    def flux(self, g: np.ndarray) -> np.ndarray:
        """Edge flux ``F g`` for an edge field ``g`` of shape ``(d,) + shape``."""
        d = self.d
        if self.is_diagonal:
            return self.edge_coefficients() * g
        axes = tuple(range(d))
        out = np.zeros_like(g)
        a = self.a.values
        w = 2.0 ** (-d)
        for s in _corners(d):
            t = np.stack([np.roll(g[k], tuple(-v for v in _shift_for(s, k)), axis=axes)
                          for k in range(d)])
            flux = np.einsum("kl...,l...->k...", a, t)
            for k in range(d):
                out[k] += w * np.roll(flux[k], _shift_for(s, k), axis=axes)
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``-div(F grad u)`` on the full array; Dirichlet rows are zeroed."""
        u = pin_boundary(u, self.grid)
        out = -div_array(self.flux(grad_array(u, self.grid.h)), self.grid.h)
        return pin_boundary(out, self.grid)

    def transpose(self) -> "DivFormOperator":
        return DivFormOperator(self.a.transpose())

    # -- assembled pieces
    def flux_matrix(self) -> sp.csr_matrix:
        d = self.d
        grid = self.grid
        N = grid.size
        idx = np.arange(N).reshape(grid.shape)
        rows, cols, vals = [], [], []
        w = 2.0 ** (-d)
        a = self.a.values
        for s in _corners(d):
            for k in range(d):
                rk = np.roll(idx, tuple(-v for v in _shift_for(s, k)), axis=tuple(range(d)))
                for l in range(d):
                    alk = a[k, l]
                    if not np.any(alk):
                        continue
                    cl = np.roll(idx, tuple(-v for v in _shift_for(s, l)), axis=tuple(range(d)))
                    rows.append((k * N + rk).ravel())
                    cols.append((l * N + cl).ravel())
                    vals.append(w * alk.ravel())
        F = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(d * N, d * N))
        return F.tocsr()

    def matrix(self) -> sp.csr_matrix:
        """Full periodic-wrap matrix ``G^T F G`` (before Dirichlet restriction)."""
        if self._matrix is None:
            G = gradient_matrix(self.grid)
            self._matrix = (G.T @ self.flux_matrix() @ G).tocsr()
        return self._matrix

    def reduced_matrix(self) -> tuple[sp.csc_matrix, np.ndarray]:
        """Matrix on the free unknowns and their flat indices.

        Dirichlet grids drop the pinned hyperplanes; periodic grids drop node 0
        (fixing the additive constant).
        """
        K = self.matrix()
        if self.grid.boundary == "dirichlet":
            free = interior_index(self.grid)
        else:
            free = np.arange(1, self.grid.size)
        return K[free][:, free].tocsc(), free

    # -- solves
    def _use_direct(self) -> bool:
        lim = DIRECT_LIMIT_2D if self.d == 2 else DIRECT_LIMIT_3D
        return self.grid.size <= lim

    def _preconditioner(self):
        """Constant-coefficient fast solver with per-axis mean coefficients."""
        grid = self.grid
        mean = [float(np.mean(self.a.values[k, k])) for k in range(self.d)]
        if grid.boundary == "dirichlet":
            solver = SeparableSolver([AxisBasis("dirichlet", grid.nodes_per_axis)] * self.d,
                                     grid.h, coef=mean)
            return lambda r: solver.solve(r.reshape(grid.shape)).ravel()
        from .fastsolve import periodic_poisson

        return lambda r: periodic_poisson(r.reshape(grid.shape), grid.h, mean).ravel()

    def solve(self, rhs: np.ndarray, rtol: float = 1e-11, method: str = "auto") -> np.ndarray:
        """Solve ``K u = rhs`` (full arrays).

        Periodic problems return the mean-zero solution (the mean of ``rhs`` is
        removed first); Dirichlet problems return zero on pinned nodes.
        """
        grid = self.grid
        rhs = np.asarray(rhs, dtype=float)
        if grid.boundary == "periodic":
            rhs = rhs - rhs.mean()
        else:
            rhs = pin_boundary(rhs, grid)
        if method == "auto":
            method = "direct" if self._use_direct() else "cg"
        if method == "direct":
            if self._factor is None:
                Kr, free = self.reduced_matrix()
                self._factor = (spla.splu(Kr, permc_spec="COLAMD"), free)
            lu, free = self._factor
            u = np.zeros(grid.size)
            u[free] = lu.solve(rhs.ravel()[free])
            u = u.reshape(grid.shape)
            res = np.linalg.norm(self.apply(u) - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if res > 1e-7:
                raise ConvergenceError(f"direct solve residual {res:.3e} too large", [res])
        elif method == "amg":
            u = self._amg_solve(rhs, rtol)
        elif method in ("cg", "gmres"):
            apply = lambda v: self.apply(v.reshape(grid.shape)).ravel()
            if method == "cg" and self.is_symmetric:
                x, _ = solve_spd(apply, rhs.ravel(), precond=self._preconditioner(), rtol=rtol)
            else:
                x, _ = solve_general(apply, rhs.ravel(), precond=self._preconditioner(), rtol=rtol)
            u = x.reshape(grid.shape)
        else:
            raise ValueError(f"unknown solve method {method!r}")
        if grid.boundary == "periodic":
            u = u - u.mean()
        else:
            u = pin_boundary(u, grid)
        return u

    def _amg_solve(self, rhs, rtol):
        import pyamg

        Kr, free = self.reduced_matrix()
        ml = pyamg.smoothed_aggregation_solver(Kr.tocsr(), symmetry="hermitian")
        res: list[float] = []
        x = ml.solve(rhs.ravel()[free], tol=rtol, accel="cg", maxiter=500, residuals=res)
        rel = res[-1] / max(res[0], 1e-300)
        if rel > 10 * rtol:
            raise ConvergenceError(f"AMG-CG stopped with relative residual {rel:.3e}", res)
        u = np.zeros(self.grid.size)
        u[free] = x
        return u.reshape(self.grid.shape)


class NonDivOperator:
    """``u -> -sum_ij a_ij D_ij u`` with nodal, symmetrised ``a``."""

    def __init__(self, a: MatrixField):
        if a.location != "node":
            raise ValueError("non-divergence coefficients are sampled at nodes")
        v = a.values
        if not np.array_equal(v, np.swapaxes(v, 0, 1)):
            v = 0.5 * (v + np.swapaxes(v, 0, 1))
        self.a = MatrixField(a.grid, v, "node", symmetric=True)
        self.grid = a.grid
        self.d = a.grid.d
        self._matrix = None
        self._lu = None
        self._luT = None

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            d = self.d
            K = sp.csr_matrix((self.grid.size, self.grid.size))
            for i in range(d):
                for j in range(d):
                    aij = self.a.values[i, j].ravel()
                    if not np.any(aij):
                        continue
                    K = K - sp.diags(aij) @ second_diff_matrix(self.grid, i, j)
            self._matrix = K.tocsr()
        return self._matrix

    def free_index(self) -> np.ndarray:
        if self.grid.boundary == "dirichlet":
            return interior_index(self.grid)
        return np.arange(self.grid.size)

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = pin_boundary(u, self.grid)
        return pin_boundary((self.matrix() @ u.ravel()).reshape(self.grid.shape), self.grid)

    def apply_transpose(self, u: np.ndarray) -> np.ndarray:
        u = pin_boundary(u, self.grid)
        return pin_boundary((self.matrix().T @ u.ravel()).reshape(self.grid.shape), self.grid)

    def _factorize(self, transpose: bool):
        free = self.free_index()
        if self.grid.boundary == "periodic":
            free = free[1:]
        K = self.matrix()
        if transpose:
            K = K.T
        Kr = K.tocsr()[free][:, free].tocsc()
        return spla.splu(Kr, permc_spec="COLAMD"), free

    def _preconditioner(self):
        grid = self.grid
        mean = [float(np.mean(self.a.values[k, k])) for k in range(self.d)]
        if grid.boundary == "dirichlet":
            solver = SeparableSolver([AxisBasis("dirichlet", grid.nodes_per_axis)] * self.d,
                                     grid.h, coef=mean)
            return lambda r: solver.solve(r.reshape(grid.shape)).ravel()
        from .fastsolve import periodic_poisson

        return lambda r: periodic_poisson(r.reshape(grid.shape), grid.h, mean).ravel()

    def solve(self, rhs: np.ndarray, transpose: bool = False, method: str = "auto",
              rtol: float = 1e-12) -> np.ndarray:
        """Solve ``N u = rhs`` (or ``N^T u = rhs``).

        Dirichlet grids keep pinned nodes at zero.  On periodic grids the
        problem is solvable when ``rhs`` is orthogonal to the kernel of the
        adjoint; the mean-zero solution is returned (for ``transpose=True``
        the kernel of ``N^T`` is not constant, so that case requires a
        Dirichlet grid).
        """
        grid = self.grid
        periodic = grid.boundary == "periodic"
        if periodic and transpose:
            raise ValueError("periodic adjoint solves are handled by the invariant-measure code")
        rhs = pin_boundary(np.asarray(rhs, dtype=float), grid)
        if method == "auto":
            lim = DIRECT_LIMIT_2D if self.d == 2 else DIRECT_LIMIT_3D
            method = "direct" if grid.size <= lim else "gmres"
        app = self.apply_transpose if transpose else self.apply
        if method == "direct":
            attr = "_luT" if transpose else "_lu"
            if getattr(self, attr) is None:
                setattr(self, attr, self._factorize(transpose))
            lu, free = getattr(self, attr)
            u = np.zeros(grid.size)
            u[free] = lu.solve(rhs.ravel()[free])
            u = u.reshape(grid.shape)
        elif method == "gmres":
            x, _ = solve_general(lambda v: app(v.reshape(grid.shape)).ravel(), rhs.ravel(),
                                 precond=self._preconditioner(), rtol=rtol)
            u = x.reshape(grid.shape)
        else:
            raise ValueError(f"unknown solve method {method!r}")
        if periodic:
            u = u - u.mean()
        res = np.linalg.norm(app(u) - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if res > 1e-7:
            raise ConvergenceError(f"non-divergence solve residual {res:.3e} too large", [res])
        return u


def matrix_divergence(X: np.ndarray, h: float) -> np.ndarray:
    """Column divergence of a nodal matrix field onto staggered edges.

    ``(Div X)_j = delta_j^+ X_jj + avg_j sum_{i != j} delta_i^c X_ij`` on
    ``j``-edges.  Its backward divergence equals ``sum_ij D_ij X_ij``, so for
    ``X = m a`` with ``m`` in the kernel of the transposed non-divergence
    operator the result is exactly divergence free.
    """
    d = X.shape[0]
    out = np.empty((d,) + X.shape[2:])
    for j in range(d):
        acc = np.zeros(X.shape[2:])
        for i in range(d):
            if i != j:
                acc += (np.roll(X[i, j], -1, axis=i) - np.roll(X[i, j], 1, axis=i)) / (2.0 * h)
        acc = 0.5 * (acc + np.roll(acc, -1, axis=j))
        out[j] = acc + (np.roll(X[j, j], -1, axis=j) - X[j, j]) / h
    return out


def skew_potential(v: np.ndarray, h: float) -> np.ndarray:
    """Skew nodal ``B`` with ``matrix_divergence(B) = v`` on a periodic grid.

    ``v`` must have zero mean and zero backward divergence.  Fourier modes at
    the Nyquist frequency of any axis (where the edge average vanishes) are
    dropped.
    """
    d = v.shape[0]
    shape = v.shape[1:]
    theta = np.meshgrid(*[2.0 * np.pi * np.fft.fftfreq(n) for n in shape], indexing="ij")
    Dm = [(1.0 - np.exp(-1j * t)) / h for t in theta]
    Av = [(1.0 + np.exp(1j * t)) / 2.0 for t in theta]
    s = sum(np.abs(D) ** 2 for D in Dm)
    s.flat[0] = 1.0
    Q = [np.conj(D) / s for D in Dm]
    vh = [np.fft.fftn(v[k]) for k in range(d)]
    B = np.zeros((d, d) + shape)
    for i in range(d):
        for j in range(i + 1, d):
            denom = Av[i] * Av[j]
            nyq = np.abs(denom) < 1e-12
            c = Q[i] * vh[j] - Q[j] * vh[i]
            c = np.where(nyq, 0.0, c / np.where(nyq, 1.0, denom))
            c.flat[0] = 0.0
            bij = np.fft.ifftn(c).real
            B[i, j] = bij
            B[j, i] = -bij
    return B
