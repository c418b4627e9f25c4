"""Grids, sampled fields, and the discrete calculus used everywhere else.

Conventions
-----------
* Grids are uniform tensor-product grids on an axis-aligned box in dimension
  2 or 3, node centered, with at least 9 nodes per axis so the one-sided
  boundary stencils have room.
* Field values are stored as complex128 and treated as immutable after
  construction (the backing array is marked read-only).  Vector components
  live on the trailing axis; symmetric tensors are packed row-major over the
  upper triangle, see ``SYM_PAIRS``.
* First derivatives: 2nd-order central differences in the interior and
  2nd-order one-sided differences at the boundary (this is exactly
  ``np.gradient`` with ``edge_order=2``).
* Pure second derivatives: compact 3-point stencil in the interior and the
  4-point one-sided stencil (2, -5, 4, -1)/h^2 at the boundary; both are
  exact on cubic polynomials.
* Mixed second derivatives: composition of the first-derivative operators
  along the two axes.  The two orders commute up to roundoff and are
  averaged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "SYM_PAIRS",
    "Grid",
    "ScalarField",
    "VectorField",
    "SymTensorField",
    "grad_values",
    "second_derivative_values",
    "hess_values",
    "gradient",
    "hessian",
    "divergence",
    "divergence_tensor",
    "sup_norm",
    "mollify",
    "save_field",
    "load_field",
    "export_csv",
]

# Packed index pairs for symmetric tensor components, per dimension.
SYM_PAIRS = {
    2: ((0, 0), (0, 1), (1, 1)),
    3: ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)),
}

MIN_NODES_PER_AXIS = 9


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid on an axis-aligned box.

    Parameters
    ----------
    shape : per-axis node counts, each at least 9.
    extent : per-axis (lo, hi) coordinate bounds, lo < hi.
    """

    shape: tuple[int, ...]
    extent: tuple[tuple[float, float], ...]

    def __post_init__(self):
        shape = tuple(int(m) for m in self.shape)
        extent = tuple((float(lo), float(hi)) for lo, hi in self.extent)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extent", extent)
        if len(shape) not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {len(shape)}")
        if len(extent) != len(shape):
            raise ValueError("extent and shape dimensions disagree")
        for m in shape:
            if m < MIN_NODES_PER_AXIS:
                raise ValueError(f"need at least {MIN_NODES_PER_AXIS} nodes per axis, got {m}")
        for lo, hi in extent:
            if not (hi > lo):
                raise ValueError(f"empty extent ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (m - 1) for (lo, hi), m in zip(self.extent, self.shape))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(lo, hi, m) for (lo, hi), m in zip(self.extent, self.shape)
        )

    @cached_property
    def meshes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(self.meshes, axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        mask.setflags(write=False)
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def boundary_flat(self) -> np.ndarray:
        """Flat (row-major) indices of the boundary nodes, ascending."""
        out = np.flatnonzero(self.boundary_mask.ravel())
        out.setflags(write=False)
        return out

    @cached_property
    def boundary_points(self) -> np.ndarray:
        """Coordinates of the boundary nodes, shape (k, dim), row-major order."""
        out = self.points.reshape(-1, self.dim)[self.boundary_flat]
        out.setflags(write=False)
        return out

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.extent)))

    def subgrid(self, window: tuple[slice, ...]) -> "Grid":
        """Grid restricted to a contiguous index window (unit-step slices)."""
        if len(window) != self.dim:
            raise ValueError("window rank mismatch")
        shape = []
        extent = []
        for k, sl in enumerate(window):
            start, stop, step = sl.indices(self.shape[k])
            if step != 1:
                raise ValueError("subgrid windows must have unit step")
            ax = self.axes[k]
            shape.append(stop - start)
            extent.append((float(ax[start]), float(ax[stop - 1])))
        return Grid(tuple(shape), tuple(extent))


class _Field:
    """Shared storage and checks for sampled fields."""

    kind = "abstract"

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=np.complex128, copy=True)
        expected = grid.shape + self._component_shape(grid.dim)
        if arr.shape != expected:
            raise ValueError(f"{self.kind} field on {grid.shape}: expected values of shape "
                             f"{expected}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{self.kind} field contains non-finite values")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @staticmethod
    def _component_shape(dim: int) -> tuple[int, ...]:
        raise NotImplementedError

    def crop(self, window: tuple[slice, ...]):
        sub = self.grid.subgrid(window)
        return type(self)(sub, self.values[window])

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.grid.shape})"


class ScalarField(_Field):
    kind = "scalar"

    @staticmethod
    def _component_shape(dim):
        return ()

    def _binop(self, other, op):
        if isinstance(other, ScalarField):
            other = other.values
        return ScalarField(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binop(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binop(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._binop(other, lambda a, b: a * b)

    def __truediv__(self, other):
        return self._binop(other, lambda a, b: a / b)

    __radd__ = __add__
    __rmul__ = __mul__


class VectorField(_Field):
    kind = "vector"

    @staticmethod
    def _component_shape(dim):
        return (dim,)


class SymTensorField(_Field):
    kind = "symtensor"

    @staticmethod
    def _component_shape(dim):
        return (dim * (dim + 1) // 2,)

    def as_matrix(self) -> np.ndarray:
        """Unpack to full (..., n, n) symmetric matrices."""
        n = self.grid.dim
        out = np.zeros(self.grid.shape + (n, n), dtype=np.complex128)
        for p, (i, j) in enumerate(SYM_PAIRS[n]):
            out[..., i, j] = self.values[..., p]
            if i != j:
                out[..., j, i] = self.values[..., p]
        return out

    @classmethod
    def from_matrix(cls, grid: Grid, mat) -> "SymTensorField":
        """Pack (..., n, n) matrices, symmetrizing against roundoff."""
        mat = np.asarray(mat, dtype=np.complex128)
        sym = 0.5 * (mat + np.swapaxes(mat, -1, -2))
        packed = np.stack([sym[..., i, j] for i, j in SYM_PAIRS[grid.dim]], axis=-1)
        return cls(grid, packed)


# ---------------------------------------------------------------------------
# Array-level stencils.  The engine uses these directly; the field wrappers
# below are the public face.
# ---------------------------------------------------------------------------

def grad_values(vals: np.ndarray, spacing) -> np.ndarray:
    """All first partials of a node array; result has a trailing axis."""
    comps = [np.gradient(vals, spacing[k], axis=k, edge_order=2)
             for k in range(len(spacing))]
    return np.stack(comps, axis=-1)


def second_derivative_values(vals: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Pure second derivative along one axis.

    Compact 3-point stencil inside, one-sided (2, -5, 4, -1)/h^2 at the two
    boundary slabs.  Exact on cubics.
    """
    v = np.moveaxis(vals, axis, 0)
    out = np.empty_like(v, dtype=np.complex128)
    h2 = h * h
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return np.moveaxis(out, 0, axis)


def hess_values(vals: np.ndarray, spacing) -> np.ndarray:
    """Packed second derivatives of a node array, trailing axis of length
    n(n+1)/2 ordered as in ``SYM_PAIRS``."""
    n = len(spacing)
    comps = []
    for i, j in SYM_PAIRS[n]:
        if i == j:
            comps.append(second_derivative_values(vals, spacing[i], i))
        else:
            di = np.gradient(vals, spacing[i], axis=i, edge_order=2)
            dij = np.gradient(di, spacing[j], axis=j, edge_order=2)
            dj = np.gradient(vals, spacing[j], axis=j, edge_order=2)
            dji = np.gradient(dj, spacing[i], axis=i, edge_order=2)
            comps.append(0.5 * (dij + dji))
    return np.stack(comps, axis=-1)


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, grad_values(f.values, f.grid.spacing))


def hessian(f: ScalarField) -> SymTensorField:
    return SymTensorField(f.grid, hess_values(f.values, f.grid.spacing))


def divergence(v: VectorField) -> ScalarField:
    """Sum of ∂_k v_k with the first-derivative stencil."""
    sp = v.grid.spacing
    out = np.zeros(v.grid.shape, dtype=np.complex128)
    for k in range(v.grid.dim):
        out += np.gradient(v.values[..., k], sp[k], axis=k, edge_order=2)
    return ScalarField(v.grid, out)


def divergence_tensor(a: SymTensorField) -> VectorField:
    """Row-wise divergence (div a)_i = sum_j ∂_j a_ij."""
    n = a.grid.dim
    sp = a.grid.spacing
    mat = a.as_matrix()
    out = np.zeros(a.grid.shape + (n,), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            out[..., i] += np.gradient(mat[..., i, j], sp[j], axis=j, edge_order=2)
    return VectorField(a.grid, out)


def sup_norm(f: _Field, order: int = 0) -> float:
    """Discrete surrogate for the C^m sup norm.

    Takes the max over nodes and components of the field itself together
    with all discrete partial derivatives up to ``order``.  Orders 0 and 1
    use the gradient stencil, order 2 adds the packed second-derivative
    stencils, order 3 adds first derivatives of those.
    """
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0..3")
    grid = f.grid
    comp = f.values
    if comp.ndim == grid.dim:
        comps = [comp]
    else:
        comps = [comp[..., k] for k in range(comp.shape[-1])]
    best = max(float(np.max(np.abs(c))) for c in comps)
    if order >= 1:
        for c in comps:
            best = max(best, float(np.max(np.abs(grad_values(c, grid.spacing)))))
    if order >= 2:
        hesses = [hess_values(c, grid.spacing) for c in comps]
        for hm in hesses:
            best = max(best, float(np.max(np.abs(hm))))
        if order >= 3:
            for hm in hesses:
                for p in range(hm.shape[-1]):
                    best = max(best, float(np.max(np.abs(grad_values(hm[..., p], grid.spacing)))))
    return best


def mollify(f: ScalarField, width: float) -> ScalarField:
    """Truncated Gaussian smoothing with boundary renormalization.

    ``width`` is the kernel standard deviation in units of the node spacing;
    the kernel is truncated at 4 sigma.  Near the boundary the filter output
    is divided by the filtered indicator function so that constants are
    reproduced exactly.  ``width = 0`` returns the field unchanged.
    """
    from scipy.ndimage import gaussian_filter

    if width < 0:
        raise ValueError("width must be nonnegative")
    if width == 0:
        return f
    kw = dict(sigma=width, mode="constant", cval=0.0, truncate=4.0)
    norm = gaussian_filter(np.ones(f.grid.shape), **kw)
    re = gaussian_filter(f.values.real, **kw)
    im = gaussian_filter(f.values.imag, **kw)
    return ScalarField(f.grid, (re + 1j * im) / norm)


# ---------------------------------------------------------------------------
# Archives
# ---------------------------------------------------------------------------

_KIND_TO_CLS = {"scalar": ScalarField, "vector": VectorField, "symtensor": SymTensorField}


def save_field(f: _Field, path) -> None:
    """Write a field as JSON: grid metadata, kind, and the values as a flat
    row-major list of [re, im] pairs (components fastest)."""
    flat = f.values.ravel(order="C")
    payload = {
        "grid": {
            "shape": list(f.grid.shape),
            "extent": [list(e) for e in f.grid.extent],
        },
        "kind": f.kind,
        "values": [[float(z.real), float(z.imag)] for z in flat],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_field(path) -> _Field:
    with open(path) as fh:
        payload = json.load(fh)
    grid = Grid(
        tuple(payload["grid"]["shape"]),
        tuple(tuple(e) for e in payload["grid"]["extent"]),
    )
    kind = payload["kind"]
    try:
        cls = _KIND_TO_CLS[kind]
    except KeyError:
        raise ValueError(f"unknown field kind {kind!r}") from None
    pairs = np.asarray(payload["values"], dtype=np.float64)
    flat = pairs[:, 0] + 1j * pairs[:, 1]
    shape = grid.shape + cls._component_shape(grid.dim)
    return cls(grid, flat.reshape(shape))


def _component_names(f: _Field) -> list[str]:
    n = f.grid.dim
    if isinstance(f, ScalarField):
        return ["f"]
    if isinstance(f, VectorField):
        return [f"f{k + 1}" for k in range(n)]
    return [f"f{i + 1}{j + 1}" for i, j in SYM_PAIRS[n]]


def export_csv(f: _Field, path) -> None:
    """Node table: coordinates then re/im columns per component, row-major."""
    names = _component_names(f)
    n = f.grid.dim
    header = [f"x{k + 1}" for k in range(n)]
    for nm in names:
        header += [f"re_{nm}", f"im_{nm}"]
    pts = f.grid.points.reshape(-1, n)
    vals = f.values.reshape(len(pts), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row_pt, row_val in zip(pts, vals):
            row = [repr(float(x)) for x in row_pt]
            for z in row_val:
                row += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(row)
