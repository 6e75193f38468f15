"""Coefficient models ``a = a_per + a_tilde``.

The periodic background is a matrix of trigonometric polynomials in ``x``
(1-periodic), the defect is an amplitude matrix times a radial profile.
Smoothness holds by construction, so only ellipticity is checked on samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .field import GridSpec, MatrixField

__all__ = [
    "TrigTerm",
    "PeriodicSpec",
    "DefectSpec",
    "CoefficientModel",
    "EllipticityError",
    "DefectClassError",
    "sample_periodic",
    "sample_defect",
    "sample_coefficient",
    "sample_oscillatory",
    "ellipticity_check",
    "defect_annulus_masses",
    "defect_tail",
]

_PROFILES = ("none", "gaussian", "compact-bump", "algebraic")


class EllipticityError(ValueError):
    """Raised when a sampled coefficient leaves the declared ellipticity band."""

    def __init__(self, msg, node=None, value=None):
        super().__init__(msg)
        self.node = node
        self.value = value


class DefectClassError(ValueError):
    """Raised when a defect cannot belong to its declared L^r class."""


@dataclass(frozen=True)
class TrigTerm:
    """``amp * f(2 pi k . x)`` added to entry ``(i, j)``; ``f`` is sin or cos."""

    i: int
    j: int
    amp: float
    k: tuple[int, ...]
    kind: str = "sin"

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ValueError(f"trig term kind must be 'sin' or 'cos', got {self.kind!r}")


@dataclass(frozen=True)
class PeriodicSpec:
    """Constant matrix plus trigonometric terms."""

    constant: tuple[tuple[float, ...], ...]
    terms: tuple[TrigTerm, ...] = ()

    @property
    def d(self) -> int:
        return len(self.constant)

    @classmethod
    def identity(cls, d: int, scale: float = 1.0) -> "PeriodicSpec":
        return cls(tuple(tuple(scale * float(i == j) for j in range(d)) for i in range(d)))

    @classmethod
    def constant_matrix(cls, mat) -> "PeriodicSpec":
        mat = np.asarray(mat, dtype=float)
        return cls(tuple(map(tuple, mat)))

    @classmethod
    def laminate(cls, d: int, diag: Sequence[tuple[float, float]], axis: int = 0) -> "PeriodicSpec":
        """Diagonal laminate ``a_kk = c_k + s_k sin(2 pi x_axis)``.

        ``diag`` lists ``(c_k, s_k)`` for each diagonal entry.
        """
        if len(diag) != d:
            raise ValueError("need one (constant, amplitude) pair per axis")
        const = np.diag([c for c, _ in diag])
        kvec = tuple(int(a == axis) for a in range(d))
        terms = tuple(TrigTerm(k, k, s, kvec) for k, (_, s) in enumerate(diag) if s != 0.0)
        return cls(tuple(map(tuple, const)), terms)

    def transpose(self) -> "PeriodicSpec":
        const = tuple(zip(*self.constant))
        terms = tuple(replace(t, i=t.j, j=t.i) for t in self.terms)
        return PeriodicSpec(const, terms)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Values at points ``x`` of shape ``(d, ...)``; returns ``(d, d, ...)``."""
        d = self.d
        out = np.empty((d, d) + x.shape[1:])
        for i in range(d):
            for j in range(d):
                out[i, j] = self.constant[i][j]
        for t in self.terms:
            phase = 2.0 * np.pi * np.tensordot(np.asarray(t.k, dtype=float), x, axes=1)
            out[t.i, t.j] += t.amp * (np.sin(phase) if t.kind == "sin" else np.cos(phase))
        return out


@dataclass(frozen=True)
class DefectSpec:
    """Radial defect ``A * profile(|x - center|)``.

    ``amplitude`` is a scalar (multiplying the identity) or a ``d x d`` matrix.

    Profiles
    --------
    gaussian      ``exp(-|x|^2 / (2 width^2))``
    compact-bump  ``(1 - |x|^2/width^2)^3`` inside the ball of radius ``width`` (C^2)
    algebraic     ``(1 + |x|^2)^(-s/2)``
    """

    kind: str = "none"
    amplitude: float | tuple[tuple[float, ...], ...] = 0.0
    width: float = 1.0
    s: float = 0.0
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _PROFILES:
            raise ValueError(f"unknown defect kind {self.kind!r}; expected one of {_PROFILES}")
        if self.kind in ("gaussian", "compact-bump") and self.width <= 0:
            raise ValueError("defect width must be positive")
        if self.kind == "algebraic" and self.s <= 0:
            raise ValueError("algebraic defect needs a positive decay exponent")

    def amplitude_matrix(self, d: int) -> np.ndarray:
        amp = np.asarray(self.amplitude, dtype=float)
        if amp.ndim == 0:
            return float(amp) * np.eye(d)
        if amp.shape != (d, d):
            raise ValueError(f"defect amplitude must be scalar or {d}x{d}")
        return amp

    def profile(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "gaussian":
            return np.exp(-(r**2) / (2.0 * self.width**2))
        if self.kind == "compact-bump":
            z = np.clip(1.0 - (r / self.width) ** 2, 0.0, None)
            return z**3
        return (1.0 + r**2) ** (-0.5 * self.s)

    def transpose(self) -> "DefectSpec":
        amp = np.asarray(self.amplitude, dtype=float)
        if amp.ndim == 0:
            return self
        return replace(self, amplitude=tuple(map(tuple, amp.T)))


@dataclass(frozen=True)
class CoefficientModel:
    """Periodic background plus defect with ellipticity and integrability metadata.

    Parameters
    ----------
    periodic : PeriodicSpec
    defect : DefectSpec
    r : float
        Declared integrability exponent of the defect (``a_tilde`` in ``L^r``).
    alpha : float
        Hoelder smoothness tag (informational; smoothness holds by construction).
    mu_min, mu_max : float
        Declared ellipticity bounds.
    """

    periodic: PeriodicSpec
    defect: DefectSpec = field(default_factory=DefectSpec)
    r: float = 2.0
    alpha: float = 1.0
    mu_min: float = 1e-3
    mu_max: float = 1e3

    def __post_init__(self):
        if not (1.0 <= self.r < np.inf):
            raise DefectClassError(f"declared r must satisfy 1 <= r < inf, got {self.r}")
        if not (0 < self.mu_min <= self.mu_max):
            raise ValueError("need 0 < mu_min <= mu_max")
        if self.defect.kind == "algebraic" and self.r * self.defect.s <= self.d:
            raise DefectClassError(
                f"algebraic defect with s={self.defect.s} is not in L^{self.r} in dimension "
                f"{self.d} (need r*s > d)")

    @property
    def d(self) -> int:
        return self.periodic.d

    @property
    def has_defect(self) -> bool:
        return self.defect.kind != "none" and np.any(self.defect.amplitude_matrix(self.d) != 0)

    def transpose(self) -> "CoefficientModel":
        return replace(self, periodic=self.periodic.transpose(), defect=self.defect.transpose())

    def without_defect(self) -> "CoefficientModel":
        return replace(self, defect=DefectSpec())

    def scaled_defect(self, t: float) -> "CoefficientModel":
        """Continuation coefficient ``a_t = a_per + t a_tilde``."""
        amp = np.asarray(self.defect.amplitude, dtype=float) * t
        amp = float(amp) if amp.ndim == 0 else tuple(map(tuple, amp))
        return replace(self, defect=replace(self.defect, amplitude=amp))


def _positions(grid: GridSpec, location: str) -> np.ndarray:
    if location == "node":
        return grid.coords()
    if location == "cell":
        return grid.cell_center_coords()
    raise ValueError(f"unknown location {location!r}")


def _defect_values(model: CoefficientModel, x: np.ndarray, center=None) -> np.ndarray:
    d = model.d
    spec = model.defect
    if center is None:
        center = spec.center if spec.center is not None else np.zeros(d)
    c = np.asarray(center, dtype=float).reshape((d,) + (1,) * (x.ndim - 1))
    r = np.sqrt(np.sum((x - c) ** 2, axis=0))
    prof = spec.profile(r)
    amp = spec.amplitude_matrix(d)
    return np.einsum("ij,...->ij...", amp, prof)


def _checked(model, values, grid, location, check) -> MatrixField:
    sym = bool(np.array_equal(values, np.swapaxes(values, 0, 1)))
    mf = MatrixField(grid, values, location, symmetric=sym)
    if check:
        lo, hi = ellipticity_check(mf)
        if lo < model.mu_min * (1 - 1e-12) or hi > model.mu_max * (1 + 1e-12):
            _raise_worst(mf, model)
    return mf


def sample_periodic(model: CoefficientModel, grid: GridSpec, location: str = "node",
                    check: bool = True) -> MatrixField:
    """Sample ``a_per`` on a cell grid (or tiled on a box grid).

    Raises
    ------
    EllipticityError
        If any node leaves ``[mu_min, mu_max]``; the worst node is reported.
    """
    if grid.d != model.d:
        raise ValueError("grid and coefficient dimensions differ")
    vals = model.periodic.evaluate(_positions(grid, location))
    return _checked(model, vals, grid, location, check)


def sample_defect(model: CoefficientModel, grid: GridSpec, location: str = "node") -> MatrixField:
    """Sample ``a_tilde`` on a box grid."""
    if grid.kind != "box":
        raise ValueError("defects are sampled on box grids")
    if grid.d != model.d:
        raise ValueError("grid and coefficient dimensions differ")
    vals = _defect_values(model, _positions(grid, location))
    return MatrixField(grid, vals, location, symmetric=bool(np.array_equal(vals, np.swapaxes(vals, 0, 1))))


def sample_coefficient(model: CoefficientModel, grid: GridSpec, location: str = "node",
                       t: float = 1.0, check: bool = True) -> MatrixField:
    """Sample ``a_per + t a_tilde`` on a box grid (or ``a_per`` on a cell grid)."""
    per = model.periodic.evaluate(_positions(grid, location))
    if grid.kind == "box" and model.has_defect and t != 0.0:
        per = per + t * _defect_values(model, _positions(grid, location))
    return _checked(model, per, grid, location, check)


def sample_oscillatory(model: CoefficientModel, grid: GridSpec, eps: float, location: str = "node",
                       defect_center=None, with_defect: bool = True, check: bool = True) -> MatrixField:
    """Sample ``a(x/eps)`` on a domain grid.

    The defect sits at ``defect_center`` (domain coordinates, default the
    domain centre) and is scaled with the microstructure.
    """
    if grid.kind != "domain":
        raise ValueError("oscillatory coefficients are sampled on domain grids")
    x = _positions(grid, location)
    if defect_center is None:
        defect_center = np.full(grid.d, 0.5)
    y = x / eps
    vals = model.periodic.evaluate(y)
    if with_defect and model.has_defect:
        vals = vals + _defect_values(model, y, center=np.asarray(defect_center) / eps)
    return _checked(model, vals, grid, location, check)


def _eig_extremes(a: MatrixField):
    v = a.values
    sym = 0.5 * (v + np.swapaxes(v, 0, 1))
    mats = np.moveaxis(sym.reshape(a.grid.d, a.grid.d, -1), -1, 0)
    ev = np.linalg.eigvalsh(mats)
    return ev[:, 0], ev[:, -1]


def ellipticity_check(a: MatrixField) -> tuple[float, float]:
    """Observed extreme eigenvalues of ``sym(a)`` over all nodes.

    Non-symmetric input is symmetrized for the bound (the quadratic form only
    sees the symmetric part); :func:`ellipticity_report` also flags it.
    """
    lo, hi = _eig_extremes(a)
    return float(lo.min()), float(hi.max())


def ellipticity_report(a: MatrixField) -> dict:
    lo, hi = _eig_extremes(a)
    worst = int(np.argmin(lo))
    return {
        "mu_min_observed": float(lo.min()),
        "mu_max_observed": float(hi.max()),
        "worst_node": tuple(int(i) for i in np.unravel_index(worst, a.grid.shape)),
        "symmetrized": not np.array_equal(a.values, np.swapaxes(a.values, 0, 1)),
        "passed": bool(lo.min() > 0),
    }


def _raise_worst(a: MatrixField, model: CoefficientModel):
    lo, hi = _eig_extremes(a)
    if lo.min() < model.mu_min * (1 - 1e-12):
        idx = int(np.argmin(lo))
        val = float(lo[idx])
    else:
        idx = int(np.argmax(hi))
        val = float(hi[idx])
    node = tuple(int(i) for i in np.unravel_index(idx, a.grid.shape))
    raise EllipticityError(
        f"ellipticity violated at node {node}: eigenvalue {val:.6g} outside "
        f"[{model.mu_min}, {model.mu_max}]", node=node, value=val)


def defect_annulus_masses(model: CoefficientModel, grid: GridSpec, radii: Sequence[float],
                          r: float | None = None) -> list[tuple[float, float]]:
    """``||a_tilde||_{L^r(R <= |x| < 2R)}^r`` for each ``R`` (Frobenius norm per node)."""
    from .field import Annulus, annulus_mask

    r = model.r if r is None else r
    at = sample_defect(model, grid)
    mag = np.sqrt(np.sum(at.values**2, axis=(0, 1)))
    out = []
    for R in radii:
        mask = annulus_mask(grid, Annulus(R, model.defect.center))
        out.append((float(R), float(np.sum(mag[mask] ** r) * grid.cell_volume)))
    return out


def defect_tail(model: CoefficientModel, grid: GridSpec, r: float | None = None) -> float:
    """Relative ``L^r`` mass of the defect lost outside the truncated box.

    Computed from the radial profile outside the ball inscribed in the box,
    so it is an upper bound for the true tail.
    """
    from scipy import integrate

    r = model.r if r is None else r
    if not model.has_defect:
        return 0.0
    d = model.d
    R0 = float(grid.L)
    spec = model.defect

    def dens(rr):
        return spec.profile(np.asarray(rr)) ** r * rr ** (d - 1)

    total = integrate.quad(dens, 0, np.inf, limit=200)[0]
    tail = integrate.quad(dens, R0, np.inf, limit=200)[0]
    return float(tail / total) if total > 0 else 0.0
