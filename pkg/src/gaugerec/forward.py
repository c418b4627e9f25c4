"""Direct solver for the second-order equation in non-divergence form.

The continuous model is

    a : D^2 u + (div a + b) . grad u + c u = 0   in X,
    u = f                                        on the boundary,

with complex symmetric a whose real part is uniformly elliptic.  The solver
takes div a as data (analytic when available, discrete otherwise) so that
coefficient sets built from closed-form presets are represented exactly.

Discretization: compact 3-point second differences per axis, centered cross
differences for the mixed terms, centered first differences for the drift,
all on the uniform grid; boundary nodes carry identity rows.  The linear
system is factored once per coefficient set (SuperLU), so synthesizing many
illuminations reuses the factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import EllipticityViolation, SingularSystem, VanishingGauge
from .fields import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    divergence_tensor,
    grad_values,
)

__all__ = [
    "CoefficientSet",
    "BoundaryTrace",
    "DirichletSystem",
    "solve_dirichlet",
    "gauge_transform",
    "synthesize",
]


@dataclass
class CoefficientSet:
    """The coefficient triple plus the divergence of the leading term.

    ``diva`` rides along so presets with closed-form derivatives stay exact;
    use :meth:`from_fields` to fill it with the discrete divergence.
    """

    a: SymTensorField
    b: VectorField
    c: ScalarField
    diva: VectorField

    def __post_init__(self):
        g = self.a.grid
        for f in (self.b, self.c, self.diva):
            if f.grid.shape != g.shape or f.grid.extent != g.extent:
                raise ValueError("coefficient fields live on different grids")

    @classmethod
    def from_fields(cls, a: SymTensorField, b: VectorField, c: ScalarField,
                    diva: VectorField | None = None) -> "CoefficientSet":
        if diva is None:
            diva = divergence_tensor(a)
        return cls(a, b, c, diva)

    @property
    def grid(self) -> Grid:
        return self.a.grid

    def real_part_eigenvalues(self) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise (min, max) eigenvalues of Re(a)."""
        n = self.grid.dim
        mat = self.a.as_matrix().real
        if n == 2:
            p = mat[..., 0, 0]
            q = mat[..., 1, 1]
            r = mat[..., 0, 1]
            mid = 0.5 * (p + q)
            rad = np.sqrt((0.5 * (p - q)) ** 2 + r ** 2)
            return mid - rad, mid + rad
        w = np.linalg.eigvalsh(mat)
        return w[..., 0], w[..., -1]

    def ellipticity_bounds(self) -> tuple[float, float]:
        lo, hi = self.real_part_eigenvalues()
        return float(lo.min()), float(hi.max())

    def validate(self, alpha0: float | None = None) -> None:
        """Raise EllipticityViolation where Re(a) leaves the admissible cone.

        With ``alpha0`` given, enforce alpha0 <= eig(Re a) <= 1/alpha0 at
        every node; otherwise only strict positivity.
        """
        lo, hi = self.real_part_eigenvalues()
        if alpha0 is None:
            bad = lo <= 0.0
        else:
            bad = (lo < alpha0) | (hi > 1.0 / alpha0)
        if bad.any():
            raise EllipticityViolation(
                "Re(a) violates the ellipticity bounds", nodes=np.argwhere(bad))


@dataclass
class BoundaryTrace:
    """Dirichlet datum sampled at the boundary nodes.

    ``values`` is a flat complex array over the boundary nodes in row-major
    grid order (matching ``grid.boundary_flat``).
    """

    grid: Grid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        k = self.grid.boundary_flat.size
        if vals.shape != (k,):
            raise ValueError(f"expected {k} boundary values, got shape {vals.shape}")
        self.values = vals

    @classmethod
    def from_function(cls, grid: Grid, fn, label: str = "") -> "BoundaryTrace":
        """Evaluate ``fn`` on the (k, dim) boundary coordinates."""
        vals = np.asarray(fn(grid.boundary_points), dtype=np.complex128)
        return cls(grid, vals.reshape(-1), label)

    @classmethod
    def from_node_values(cls, grid: Grid, full, label: str = "") -> "BoundaryTrace":
        """Restrict a full node array (or ScalarField) to the boundary."""
        if isinstance(full, ScalarField):
            full = full.values
        flat = np.asarray(full, dtype=np.complex128).reshape(-1)
        return cls(grid, flat[grid.boundary_flat], label)

    def to_full(self, fill: complex = 0.0) -> np.ndarray:
        out = np.full(self.grid.num_nodes, fill, dtype=np.complex128)
        out[self.grid.boundary_flat] = self.values
        return out.reshape(self.grid.shape)


def _flat_strides(shape: tuple[int, ...]) -> np.ndarray:
    strides = np.ones(len(shape), dtype=np.intp)
    for k in range(len(shape) - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    return strides


class DirichletSystem:
    """Assembled and factored Dirichlet problem for one coefficient set.

    Reusable across right-hand sides; ``synthesize`` relies on that to
    amortize the factorization over an illumination family.
    """

    def __init__(self, coeffs: CoefficientSet, rtol: float = 1e-10):
        coeffs.validate()
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.rtol = rtol
        self._assemble()
        try:
            self._lu = splu(self._A.tocsc())
        except RuntimeError as exc:
            raise SingularSystem(f"factorization failed: {exc}") from exc

    def _assemble(self) -> None:
        grid = self.grid
        n = grid.dim
        shape = grid.shape
        N = grid.num_nodes
        h = grid.spacing
        strides = _flat_strides(shape)

        interior = grid.interior_mask
        int_flat = np.flatnonzero(interior.ravel())
        amat = self.coeffs.a.as_matrix().reshape(-1, n, n)[int_flat]
        drift = (self.coeffs.diva.values + self.coeffs.b.values).reshape(-1, n)[int_flat]
        cvals = self.coeffs.c.values.reshape(-1)[int_flat]

        rows = []
        cols = []
        data = []

        def add(offset: np.ndarray, vals: np.ndarray) -> None:
            rows.append(int_flat)
            cols.append(int_flat + int(offset @ strides))
            data.append(vals)

        center = cvals.copy()
        for p in range(n):
            app = amat[:, p, p]
            dp = drift[:, p]
            center -= 2.0 * app / h[p] ** 2
            for s in (+1, -1):
                off = np.zeros(n, dtype=np.intp)
                off[p] = s
                add(off, app / h[p] ** 2 + s * dp / (2.0 * h[p]))
        add(np.zeros(n, dtype=np.intp), center)
        for p in range(n):
            for q in range(p + 1, n):
                apq = amat[:, p, q]
                for sp_ in (+1, -1):
                    for sq in (+1, -1):
                        off = np.zeros(n, dtype=np.intp)
                        off[p] = sp_
                        off[q] = sq
                        add(off, (sp_ * sq) * apq / (2.0 * h[p] * h[q]))

        bnd_flat = grid.boundary_flat
        rows.append(bnd_flat)
        cols.append(bnd_flat)
        data.append(np.ones(bnd_flat.size, dtype=np.complex128))

        self._A = sp.coo_matrix(
            (np.concatenate(data).astype(np.complex128),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(N, N),
        ).tocsr()
        self._int_flat = int_flat

    def solve(self, f: BoundaryTrace, source: ScalarField | None = None,
              trace_index: int | None = None) -> ScalarField:
        grid = self.grid
        rhs = np.zeros(grid.num_nodes, dtype=np.complex128)
        rhs[grid.boundary_flat] = f.values
        if source is not None:
            rhs[self._int_flat] = source.values.reshape(-1)[self._int_flat]
        u = self._lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SingularSystem("solution is not finite", trace_index=trace_index)
        resid = self._A @ u - rhs
        scale = max(float(np.abs(np.abs(self._A) @ np.abs(u)).max()),
                    float(np.abs(rhs).max()), 1e-300)
        rel = float(np.abs(resid).max()) / scale
        if rel > self.rtol:
            raise SingularSystem("direct solve residual above tolerance",
                                 residual=rel, trace_index=trace_index)
        return ScalarField(grid, u.reshape(grid.shape))


def solve_dirichlet(coeffs: CoefficientSet, f: BoundaryTrace,
                    source: ScalarField | None = None,
                    rtol: float = 1e-10) -> ScalarField:
    """One-shot Dirichlet solve; see :class:`DirichletSystem`."""
    return DirichletSystem(coeffs, rtol=rtol).solve(f, source=source)


def gauge_transform(coeffs: CoefficientSet, tau: ScalarField,
                    floor: float = 1e-10) -> CoefficientSet:
    """Push a coefficient set along the gauge orbit.

    (a, b, c) goes to (tau a, tau b - a grad tau, tau c); div(tau a) is
    recomputed with the discrete stencil rather than expanded analytically.
    """
    grid = coeffs.grid
    t = tau.values
    if float(np.abs(t).min()) < floor:
        raise VanishingGauge(f"|tau| dips below the floor {floor:g}")
    a_new = SymTensorField(grid, coeffs.a.values * t[..., None])
    gt = grad_values(t, grid.spacing)
    b_new = VectorField(
        grid,
        coeffs.b.values * t[..., None]
        - np.einsum("...ij,...j->...i", coeffs.a.as_matrix(), gt),
    )
    c_new = ScalarField(grid, coeffs.c.values * t)
    return CoefficientSet(a_new, b_new, c_new, divergence_tensor(a_new))


def synthesize(coeffs: CoefficientSet, traces, rtol: float = 1e-10) -> list[ScalarField]:
    """Solve the Dirichlet problem for every trace in an illumination set.

    ``traces`` is an iterable of BoundaryTrace (an IlluminationSet works).
    On failure the raised SingularSystem carries the failing trace index.
    """
    system = DirichletSystem(coeffs, rtol=rtol)
    out = []
    for j, tr in enumerate(traces):
        out.append(system.solve(tr, trace_index=j))
    return out
