"""Uniform grids, staggered finite differences and L^q norms.

Grids come in three kinds:

``cell``
    the periodic unit cell ``[0, 1)^d`` with ``n`` nodes per axis.
``box``
    the truncated whole space ``[-L, L)^d`` with ``2 L n`` nodes per axis.
``domain``
    the unit box ``[0, 1)^d`` used for oscillatory problems, ``n`` nodes per axis.

Box and domain grids carry homogeneous Dirichlet data.  They are stored
exactly like periodic grids whose index-0 hyperplanes are pinned to zero: the
node at ``x = L`` is the periodic image of the node at ``x = -L``.  This makes
one set of (periodic) stencils serve every kind of grid, and the Dirichlet
problem is obtained by restricting unknowns to the nodes with no zero index.

Vector fields live on staggered edges: component ``k`` at index ``i`` sits at
``x_i + h/2 e_k``.  Matrix fields live either at nodes or at cell centres
(``x_i + h/2 (1, ..., 1)``).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "Annulus",
    "GridMismatchError",
    "TruncationOverflowError",
    "gradient",
    "divergence",
    "second_diff",
    "inner",
    "lq_norm",
    "node_magnitude",
    "annulus_mask",
    "write_binary",
    "read_binary",
    "write_csv",
]

_KINDS = ("cell", "box", "domain")


class GridMismatchError(ValueError):
    """Raised when fields defined on different grids are combined."""


class TruncationOverflowError(ValueError):
    """Raised when a requested region does not fit inside the truncated box."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid description.

    Parameters
    ----------
    d : int
        Space dimension, 2 or 3.
    n : int
        Cells per period (``h = 1/n``).  For ``domain`` grids this is the
        number of cells across the unit box.
    L : float
        Box half-width in periods (``box`` grids only).
    kind : {"cell", "box", "domain"}
    """

    d: int
    n: int
    L: float = 1
    kind: str = "cell"

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.n < 8:
            raise ValueError(f"need at least 8 cells per period, got n={self.n}")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.kind == "box":
            if self.L < 1:
                raise ValueError(f"box half-width must be >= 1, got L={self.L}")
            if abs(2 * self.L * self.n - round(2 * self.L * self.n)) > 1e-9:
                raise ValueError("2*L*n must be an integer")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def nodes_per_axis(self) -> int:
        if self.kind == "box":
            return int(round(2 * self.L * self.n))
        return self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.d

    @property
    def size(self) -> int:
        return self.nodes_per_axis**self.d

    @property
    def origin(self) -> float:
        return -float(self.L) if self.kind == "box" else 0.0

    @property
    def length(self) -> float:
        return self.nodes_per_axis * self.h

    @property
    def boundary(self) -> str:
        return "periodic" if self.kind == "cell" else "dirichlet"

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def center_index(self) -> tuple[int, ...]:
        """Index of the node at ``x = 0`` (box) or at the cell/domain centre."""
        if self.kind == "box":
            return (int(round(self.L * self.n)),) * self.d
        return (self.nodes_per_axis // 2,) * self.d

    def axis_coords(self, offset: float = 0.0) -> np.ndarray:
        """1-D node coordinates, optionally shifted by ``offset * h``."""
        return self.origin + (np.arange(self.nodes_per_axis) + offset) * self.h

    def coords(self, offset=0.0) -> np.ndarray:
        """Node coordinates as an array of shape ``(d,) + shape``.

        ``offset`` may be a scalar or a length-``d`` sequence of offsets in
        units of ``h`` (0.5 along axis ``k`` gives the staggered positions of
        vector component ``k``).
        """
        offs = np.broadcast_to(np.asarray(offset, dtype=float), (self.d,))
        axes = [self.axis_coords(o) for o in offs]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def edge_coords(self, k: int) -> np.ndarray:
        off = np.zeros(self.d)
        off[k] = 0.5
        return self.coords(off)

    def cell_center_coords(self) -> np.ndarray:
        return self.coords(0.5)

    def interior_mask(self) -> np.ndarray:
        """Boolean mask of free nodes (all nodes for periodic grids)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.boundary == "dirichlet":
            for ax in range(self.d):
                sl = [slice(None)] * self.d
                sl[ax] = 0
                mask[tuple(sl)] = False
        return mask

    def doubled(self) -> "GridSpec":
        """Box grid with twice the half-width (truncation audits)."""
        if self.kind != "box":
            raise ValueError("only box grids can be doubled")
        return GridSpec(self.d, self.n, 2 * self.L, "box")


def _check_values(grid: GridSpec, values: np.ndarray, lead: tuple[int, ...]):
    values = np.asarray(values, dtype=float)
    expected = lead + grid.shape
    if values.shape != expected:
        raise GridMismatchError(f"values of shape {values.shape} do not match grid {expected}")
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    boundary: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, ()))
        if not self.boundary:
            object.__setattr__(self, "boundary", self.grid.boundary)

    @property
    def ncomp(self) -> int:
        return 1

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.boundary)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Staggered vector field; component ``k`` lives on ``k``-edges."""

    grid: GridSpec
    values: np.ndarray
    boundary: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, (self.grid.d,)))
        if not self.boundary:
            object.__setattr__(self, "boundary", self.grid.boundary)

    @property
    def ncomp(self) -> int:
        return self.grid.d

    def with_values(self, values) -> "VectorField":
        return VectorField(self.grid, values, self.boundary)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Matrix-valued field sampled at nodes or at cell centres."""

    grid: GridSpec
    values: np.ndarray
    location: str = "node"
    symmetric: bool = False
    boundary: str = ""

    def __post_init__(self):
        d = self.grid.d
        values = _check_values(self.grid, self.values, (d, d))
        if not np.all(np.isfinite(values)):
            raise ValueError("matrix field has non-finite entries")
        if self.location not in ("node", "cell"):
            raise ValueError(f"unknown location {self.location!r}")
        if self.symmetric and not np.array_equal(values, np.swapaxes(values, 0, 1)):
            raise ValueError("field flagged symmetric but entries differ from transpose")
        object.__setattr__(self, "values", values)
        if not self.boundary:
            object.__setattr__(self, "boundary", self.grid.boundary)

    @property
    def ncomp(self) -> int:
        return self.grid.d**2

    def transpose(self) -> "MatrixField":
        return MatrixField(self.grid, np.swapaxes(self.values, 0, 1).copy(), self.location,
                           self.symmetric, self.boundary)

    def sym(self) -> "MatrixField":
        v = 0.5 * (self.values + np.swapaxes(self.values, 0, 1))
        return MatrixField(self.grid, v, self.location, True, self.boundary)

    def to_cells(self) -> "MatrixField":
        """Average node values onto cell centres (the 2^d surrounding nodes)."""
        if self.location == "cell":
            return self
        v = self.values
        acc = np.zeros_like(v)
        d = self.grid.d
        corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        for s in corners:
            acc += np.roll(v, shift=tuple(-s), axis=tuple(range(2, 2 + d)))
        return MatrixField(self.grid, acc / len(corners), "cell", self.symmetric, self.boundary)


@dataclass(frozen=True)
class Annulus:
    """Region ``R <= |x - center| < outer`` (``outer`` defaults to ``2R``)."""

    R: float
    center: tuple[float, ...] | None = None
    outer: float | None = None

    @property
    def R_out(self) -> float:
        return 2.0 * self.R if self.outer is None else float(self.outer)


# ---------------------------------------------------------------------------
# stencils on raw arrays; the leading axes of ``u`` are component axes


def _spatial_axes(u: np.ndarray, d: int) -> tuple[int, ...]:
    return tuple(range(u.ndim - d, u.ndim))


def forward_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis=axis) - u) / h


def backward_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (u - np.roll(u, 1, axis=axis)) / h


def centered_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * h)


def grad_array(u: np.ndarray, h: float) -> np.ndarray:
    d = u.ndim
    return np.stack([forward_diff(u, ax, h) for ax in range(d)])


def div_array(v: np.ndarray, h: float) -> np.ndarray:
    d = v.shape[0]
    out = backward_diff(v[0], 0, h)
    for k in range(1, d):
        out += backward_diff(v[k], k, h)
    return out


def second_diff_array(u: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    ax = _spatial_axes(u, u.ndim)  # all axes are spatial here
    if i == j:
        a = ax[i]
        return (np.roll(u, -1, a) - 2.0 * u + np.roll(u, 1, a)) / (h * h)
    return centered_diff(centered_diff(u, ax[i], h), ax[j], h)


def pin_boundary(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Zero the Dirichlet hyperplanes of ``u`` (a copy is returned)."""
    if grid.boundary != "dirichlet":
        return u
    out = np.array(u, copy=True)
    d = grid.d
    lead = out.ndim - d
    for ax in range(d):
        sl = [slice(None)] * out.ndim
        sl[lead + ax] = 0
        out[tuple(sl)] = 0.0
    return out


# ---------------------------------------------------------------------------
# field-level operations


def gradient(u: ScalarField) -> VectorField:
    """Forward differences onto staggered edges.

    On Dirichlet grids the pinned nodes are treated as zero, so the edges
    touching the boundary carry one-sided differences against the boundary
    value.
    """
    if not isinstance(u, ScalarField):
        raise TypeError("gradient expects a ScalarField")
    vals = pin_boundary(u.values, u.grid)
    return VectorField(u.grid, grad_array(vals, u.grid.h), u.boundary)


def divergence(v: VectorField) -> ScalarField:
    """Backward-difference divergence, the exact negative adjoint of :func:`gradient`."""
    if not isinstance(v, VectorField):
        raise TypeError("divergence expects a VectorField")
    out = div_array(v.values, v.grid.h)
    return ScalarField(v.grid, pin_boundary(out, v.grid), v.boundary)


def second_diff(u: ScalarField, i: int, j: int) -> ScalarField:
    """Centred second difference ``D_ij u``; exact on quadratics."""
    vals = pin_boundary(u.values, u.grid)
    return ScalarField(u.grid, second_diff_array(vals, i, j, u.grid.h), u.boundary)


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid {a.grid} differs from {b.grid}")


def inner(a, b) -> float:
    """Discrete L^2 inner product ``sum(a*b) h^d`` with a fixed reduction order."""
    _same_grid(a, b)
    return float(np.sum(a.values * b.values) * a.grid.cell_volume)


def node_magnitude(f) -> np.ndarray:
    """Pointwise Euclidean magnitude collocated at nodes.

    Staggered components are squared and averaged over the two edges adjacent
    to each node, so that ``sum(|v|^2)`` over nodes equals the sum of squared
    edge values exactly.
    """
    if isinstance(f, ScalarField):
        return np.abs(f.values)
    if isinstance(f, VectorField):
        sq = np.zeros(f.grid.shape)
        for k in range(f.grid.d):
            vk2 = f.values[k] ** 2
            sq += 0.5 * (vk2 + np.roll(vk2, 1, axis=k))
        return np.sqrt(sq)
    if isinstance(f, MatrixField):
        return np.sqrt(np.sum(f.values**2, axis=(0, 1)))
    if isinstance(f, np.ndarray):
        return np.abs(f)
    raise TypeError(f"cannot take magnitude of {type(f).__name__}")


def _distance(grid: GridSpec, center) -> np.ndarray:
    x = grid.coords()
    if center is None:
        center = np.zeros(grid.d) if grid.kind == "box" else np.full(grid.d, 0.5 * grid.length)
    c = np.asarray(center, dtype=float).reshape((grid.d,) + (1,) * grid.d)
    return np.sqrt(np.sum((x - c) ** 2, axis=0))


def annulus_mask(grid: GridSpec, region: Annulus) -> np.ndarray:
    """Nodes with ``R <= |x - center| < outer`` (Euclidean distance)."""
    if grid.kind == "cell":
        raise TruncationOverflowError("annuli are only defined on box or domain grids")
    center = region.center
    if center is None:
        center = np.zeros(grid.d) if grid.kind == "box" else np.full(grid.d, 0.5 * grid.length)
    center = np.asarray(center, dtype=float)
    lo = grid.origin
    hi = grid.origin + grid.length
    if np.any(center - region.R_out < lo - 1e-12) or np.any(center + region.R_out > hi + 1e-12):
        raise TruncationOverflowError(
            f"annulus of outer radius {region.R_out} around {tuple(center)} exceeds the box "
            f"[{lo}, {hi}]^{grid.d}")
    r = _distance(grid, center)
    return (r >= region.R) & (r < region.R_out)


def lq_norm(f, q: float, region="all") -> float:
    """Discrete L^q norm ``(sum |f|^q h^d)^(1/q)``; ``q = inf`` gives the max.

    ``region`` is ``"all"`` (or ``"cell"``/``"box"``, synonyms for the whole
    grid), an :class:`Annulus`, or a boolean node mask.
    """
    q = float(q)
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    mag = node_magnitude(f)
    grid = f.grid
    if isinstance(region, Annulus):
        mask = annulus_mask(grid, region)
        mag = mag[mask]
    elif isinstance(region, np.ndarray):
        mag = mag[region]
    elif region not in ("all", "cell", "box", "domain"):
        raise ValueError(f"unknown region {region!r}")
    if mag.size == 0:
        return 0.0
    if np.isinf(q):
        return float(mag.max())
    if q == 1.0:
        return float(np.sum(mag) * grid.cell_volume)
    if q == 2.0:
        return float(np.sqrt(np.sum(mag * mag) * grid.cell_volume))
    return float((np.sum(mag**q) * grid.cell_volume) ** (1.0 / q))


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"DHFLD1\0\0"
_HEADER = struct.Struct("<8siidii")


def write_binary(f, path) -> Path:
    """Flat binary dump: header ``(magic, d, n, L, ncomp, kind)`` then float64 payload."""
    path = Path(path)
    kind = _KINDS.index(f.grid.kind)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, f.grid.d, f.grid.n, float(f.grid.L), f.ncomp, kind))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C"))
    return path


def read_binary(path):
    """Inverse of :func:`write_binary`; returns a field of the matching type."""
    raw = Path(path).read_bytes()
    magic, d, n, L, ncomp, kind = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not a field dump")
    grid = GridSpec(d, n, L, _KINDS[kind])
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).copy()
    if ncomp == 1:
        return ScalarField(grid, vals.reshape(grid.shape))
    if ncomp == d:
        return VectorField(grid, vals.reshape((d,) + grid.shape))
    if ncomp == d * d:
        return MatrixField(grid, vals.reshape((d, d) + grid.shape))
    raise ValueError(f"unsupported component count {ncomp}")


def write_csv(f, path, max_nodes: int = 1 << 16) -> Path:
    """CSV with one row per node: indices, coordinates, then components."""
    grid = f.grid
    if grid.size > max_nodes:
        raise ValueError(f"grid has {grid.size} nodes; CSV export is limited to {max_nodes}")
    path = Path(path)
    idx = np.indices(grid.shape).reshape(grid.d, -1).T
    x = grid.coords().reshape(grid.d, -1).T
    comps = f.values.reshape(f.ncomp, -1).T if f.ncomp > 1 else f.values.reshape(-1, 1)
    axes = "xyz"[: grid.d]
    header = [f"i{a}" for a in axes] + list(axes) + [f"c{c}" for c in range(f.ncomp)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, xx, cc in zip(idx, x, comps):
            w.writerow([*map(int, i), *(f"{v:.17g}" for v in xx), *(f"{v:.17g}" for v in cc)])
    return path
