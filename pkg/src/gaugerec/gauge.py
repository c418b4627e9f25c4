"""Splitting and fixing the multiplicative gauge.

A reconstructed representative determines the coefficient triple only up to
(a, b, c) -> (tau a, tau b - a grad tau, tau c).  This module provides

* canonical splits of the leading tensor into scalar x unit-normalized parts
  (determinant and pairing conventions), and
* three ways to pin tau itself when extra structure is known: b identically
  zero (transport/potential route), b = a grad(phi) with known phi (Poisson
  route), and real coefficients with divergence-free b (adjoint PDE route).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    BranchAmbiguity,
    ComplexCoefficients,
    DegenerateTensor,
    NonIntegrableField,
    VanishingDeterminant,
    VanishingGauge,
)
from .fields import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    divergence,
    grad_values,
    second_derivative_values,
)
from .forward import BoundaryTrace, CoefficientSet, DirichletSystem
from .recon import ClassRepresentative, _continuity_signs

__all__ = [
    "GaugeSplit",
    "split_det",
    "split_pairing",
    "curl_residual",
    "integrate_gradient",
    "integrate_gradient_lines",
    "recover_tau_b_zero",
    "recover_tau_known_phi",
    "recover_tau_divfree_b",
]


@dataclass
class GaugeSplit:
    """Scalar factor and unit-normalized tensor with a = tau * unit.

    convention "det": det(unit) = 1, tau = det(a)^(1/n) on the continuous
    branch that is principal at the domain corner node.
    convention "pairing": Tr(unit unit) = 1 (bilinear), sign fixed by
    continuity and Re Tr > 0 at the center node.
    """

    tau: ScalarField
    unit: SymTensorField
    convention: str


def _continuous_angle(z: np.ndarray) -> tuple[np.ndarray, float]:
    """Unwrap the phase of a nonvanishing complex field by neighbor
    continuity, anchored at the principal value of the first node.

    Returns the angle field and the largest single neighbor step; steps
    close to pi mean the branch tracking cannot be trusted.
    """
    shape = z.shape
    ang = np.empty(shape, dtype=np.float64)

    def step(cur, prev):
        return np.angle(cur / prev)

    worst = 0.0
    if len(shape) == 2:
        ang[0, 0] = np.angle(z[0, 0])
        d0 = step(z[1:, 0], z[:-1, 0])
        ang[1:, 0] = ang[0, 0] + np.cumsum(d0)
        d1 = step(z[:, 1:], z[:, :-1])
        ang[:, 1:] = ang[:, :1] + np.cumsum(d1, axis=1)
        for d in (d0, d1):
            if d.size:
                worst = max(worst, float(np.abs(d).max()))
    else:
        ang[0, 0, 0] = np.angle(z[0, 0, 0])
        d0 = step(z[1:, 0, 0], z[:-1, 0, 0])
        ang[1:, 0, 0] = ang[0, 0, 0] + np.cumsum(d0)
        d1 = step(z[:, 1:, 0], z[:, :-1, 0])
        ang[:, 1:, 0] = ang[:, :1, 0] + np.cumsum(d1, axis=1)
        d2 = step(z[:, :, 1:], z[:, :, :-1])
        ang[:, :, 1:] = ang[:, :, :1] + np.cumsum(d2, axis=2)
        for d in (d0, d1, d2):
            if d.size:
                worst = max(worst, float(np.abs(d).max()))
    return ang, worst


def split_det(a: SymTensorField, floor: float = 1e-12) -> GaugeSplit:
    """tau = det(a)^(1/n) with branch continuity, unit = a / tau.

    ``floor`` is relative to the largest |det| on the grid; nodes below it
    raise VanishingDeterminant.  A neighbor phase jump above pi/2 raises
    BranchAmbiguity since continuation can no longer be trusted.
    """
    grid = a.grid
    n = grid.dim
    d = np.linalg.det(a.as_matrix())
    absd = np.abs(d)
    ref = float(absd.max())
    if ref <= 0:
        raise VanishingDeterminant("det(a) vanishes identically")
    bad = absd < floor * ref
    if bad.any():
        raise VanishingDeterminant("det(a) below the relative floor",
                                   nodes=np.argwhere(bad))
    ang, worst = _continuous_angle(d)
    if worst > 0.5 * np.pi:
        raise BranchAmbiguity(
            f"determinant phase jumps by {worst:.3f} rad between neighbors")
    tau = np.exp((np.log(absd) + 1j * ang) / n)
    unit = a.values / tau[..., None]
    return GaugeSplit(ScalarField(grid, tau),
                      SymTensorField(grid, unit), "det")


def split_pairing(a: SymTensorField) -> GaugeSplit:
    """tau = sqrt(Tr(a a)) with sign continuity, unit = a / tau."""
    grid = a.grid
    mat = a.as_matrix()
    s2 = np.einsum("...ij,...ji->...", mat, mat)
    if (np.abs(s2) < 1e-28).any():
        raise VanishingGauge("Tr(a a) vanishes; pairing split undefined")
    s = np.sqrt(s2)
    unit = mat / s[..., None, None]
    sgn = _continuity_signs(unit)
    anchor = tuple(m // 2 for m in grid.shape)
    tr = np.trace(unit[anchor]) * sgn[anchor]
    flip = -1.0 if (tr.real < 0 or (tr.real == 0 and tr.imag < 0)) else 1.0
    scale = s * sgn * flip
    return GaugeSplit(ScalarField(grid, scale),
                      SymTensorField.from_matrix(grid, mat / scale[..., None, None]),
                      "pairing")


# ---------------------------------------------------------------------------
# Discrete potential recovery
# ---------------------------------------------------------------------------

def _diff_matrix_1d(m: int, h: float) -> sp.csr_matrix:
    """First-derivative matrix matching the gradient stencil contract."""
    main = np.zeros(m)
    main[0] = -1.5
    main[-1] = 1.5
    lower = np.full(m - 1, -0.5)
    upper = np.full(m - 1, 0.5)
    D = sp.diags([lower, main, upper], [-1, 0, 1], format="lil")
    D[0, 1] = 2.0
    D[0, 2] = -0.5
    D[-1, -2] = -2.0
    D[-1, -3] = 0.5
    return (D / h).tocsr()


def _gradient_operator(grid: Grid) -> sp.csr_matrix:
    """Sparse (n N, N) matrix applying all n first derivatives."""
    blocks = []
    for k in range(grid.dim):
        op = None
        for ax in range(grid.dim):
            m = grid.shape[ax]
            piece = _diff_matrix_1d(m, grid.spacing[ax]) if ax == k else sp.identity(m, format="csr")
            op = piece if op is None else sp.kron(op, piece, format="csr")
        blocks.append(op)
    return sp.vstack(blocks, format="csr")


def curl_residual(g: VectorField) -> float:
    """Relative size of the antisymmetric part of the Jacobian of g."""
    grid = g.grid
    n = grid.dim
    parts = [grad_values(g.values[..., k], grid.spacing) for k in range(n)]
    scale = max(float(np.abs(p).max()) for p in parts)
    worst = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            r = parts[j][..., i] - parts[i][..., j]
            worst = max(worst, float(np.abs(r).max()))
    return worst / max(scale, 1e-300)


def integrate_gradient(g: VectorField) -> ScalarField:
    """Least-squares potential: minimize ||grad(phi) - g|| over the grid.

    Normal equations with the discrete gradient operator; the constant mode
    is pinned at the first node (the system is consistent, so pinning does
    not distort the solution).
    """
    grid = g.grid
    G = _gradient_operator(grid)
    A = (G.T @ G).tolil()
    rhs = G.T @ np.moveaxis(g.values, -1, 0).reshape(-1)
    A[0, :] = 0.0
    A[0, 0] = 1.0
    rhs[0] = 0.0
    phi = splu(A.tocsc().astype(np.complex128)).solve(rhs.astype(np.complex128))
    return ScalarField(grid, phi.reshape(grid.shape))


def integrate_gradient_lines(g: VectorField) -> ScalarField:
    """Axis-scan trapezoidal integration of g, used as a cross-check.

    Integrates along axis 0 on the first hyperplane column, then fills the
    remaining axes plane by plane.  Exact for fields whose components are
    linear along the integration direction.
    """
    grid = g.grid
    h = grid.spacing
    phi = np.zeros(grid.shape, dtype=np.complex128)

    def cum(comp, axis):
        avg = 0.5 * (np.take(comp, range(1, comp.shape[axis]), axis=axis)
                     + np.take(comp, range(0, comp.shape[axis] - 1), axis=axis))
        return np.cumsum(avg, axis=axis) * h[axis]

    if grid.dim == 2:
        c0 = cum(g.values[:, :1, 0], 0)
        phi[1:, 0] = c0[:, 0]
        phi[:, 1:] = phi[:, :1] + cum(g.values[:, :, 1], 1)
    else:
        phi[1:, 0, 0] = cum(g.values[:, :1, :1, 0], 0)[:, 0, 0]
        phi[:, 1:, 0] = phi[:, :1, 0] + cum(g.values[:, :, :1, 1], 1)[:, :, 0]
        phi[:, :, 1:] = phi[:, :, :1] + cum(g.values[:, :, :, 2], 2)
    return ScalarField(grid, phi)


def _transport_target(rep: ClassRepresentative) -> VectorField:
    """g = a^-1 b from the representative, the candidate for grad(ln tau)."""
    amat = rep.a.as_matrix()
    try:
        g = np.linalg.solve(amat, rep.b.values[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DegenerateTensor("representative tensor is singular") from exc
    return VectorField(rep.grid, g)


def _calibrate(tau_raw: np.ndarray, grid: Grid, anchor) -> np.ndarray:
    """Match the free multiplicative constant to the anchor.

    A BoundaryTrace anchor is fit in the least-squares sense over all
    boundary nodes; a bare complex value pins the corner node.
    """
    if isinstance(anchor, BoundaryTrace):
        tb = tau_raw.reshape(-1)[grid.boundary_flat]
        denom = np.sum(np.abs(tb) ** 2)
        if denom <= 0:
            raise VanishingGauge("recovered tau vanishes on the boundary")
        s = np.sum(anchor.values * np.conj(tb)) / denom
    else:
        corner = tau_raw.reshape(-1)[0]
        if corner == 0:
            raise VanishingGauge("recovered tau vanishes at the anchor node")
        s = complex(anchor) / corner
    return tau_raw * s


def _effective_collar(grid: Grid, collar: int) -> int:
    return max(0, min(collar, (min(grid.shape) - 9) // 2))


def _interior_curl(g: VectorField, collar: int) -> float:
    """Curl residual away from the boundary collar.

    Differentiating a reconstructed tensor mixes one-sided and central
    stencils in a thin collar, which inflates the pointwise curl there by
    1/h without signalling genuine non-integrability, so the check crops it.
    """
    if collar <= 0:
        return curl_residual(g)
    grid = g.grid
    window = tuple(slice(collar, s - collar) for s in grid.shape)
    return curl_residual(VectorField(grid.subgrid(window), g.values[window]))


def _identity_poisson(grid: Grid, source: np.ndarray,
                      w_boundary: BoundaryTrace) -> np.ndarray:
    eye = np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim))
    zeros_v = VectorField(grid, np.zeros(grid.shape + (grid.dim,)))
    coeffs = CoefficientSet(
        SymTensorField.from_matrix(grid, eye), zeros_v,
        ScalarField(grid, np.zeros(grid.shape)), zeros_v)
    w = DirichletSystem(coeffs).solve(w_boundary,
                                      source=ScalarField(grid, source))
    return w.values


def recover_tau_b_zero(rep: ClassRepresentative, anchor,
                       curl_tol: float = 0.1, collar: int = 3,
                       diagnostics: dict | None = None) -> ScalarField:
    """Recover tau for a class whose true drift vanishes.

    With b = 0 in the class, the representative satisfies
    a^-1 b = grad(ln tau).  A relative curl residual above ``curl_tol``
    (measured beyond the stencil collar, see ``_interior_curl``) raises
    NonIntegrableField.

    With a BoundaryTrace anchor, ln(tau) is solved from the Poisson problem
    lap(w) = div(g) with Dirichlet data log(anchor); the source inside the
    collar is filled from the nearest interior nodes, since that band of g
    carries the stencil-transition artifact rather than usable data.  With
    a bare complex anchor the potential comes from least squares over the
    whole grid and the constant is pinned at the corner node.
    """
    grid = rep.grid
    g = _transport_target(rep)
    c = _effective_collar(grid, collar)
    res = _interior_curl(g, c)
    if diagnostics is not None:
        diagnostics["curl_residual"] = res
    if res > curl_tol:
        raise NonIntegrableField("a^-1 b is not a discrete gradient", residual=res)
    if isinstance(anchor, BoundaryTrace):
        if (np.abs(anchor.values) == 0).any():
            raise VanishingGauge("anchor trace vanishes somewhere on the boundary")
        r = divergence(g).values
        if c > 0:
            window = tuple(slice(c, s - c) for s in grid.shape)
            r = np.pad(r[window], c, mode="edge")
        w_b = BoundaryTrace(grid, np.log(anchor.values))
        tau = np.exp(_identity_poisson(grid, r, w_b))
    else:
        phi = integrate_gradient(g)
        tau = _calibrate(np.exp(phi.values), grid, anchor)
    if diagnostics is not None and isinstance(anchor, BoundaryTrace):
        tb = tau.reshape(-1)[grid.boundary_flat]
        diagnostics["anchor_mismatch"] = float(
            np.abs(tb - anchor.values).max() / max(np.abs(anchor.values).max(), 1e-300))
    return ScalarField(grid, tau)


def _laplacian_values(vals: np.ndarray, spacing) -> np.ndarray:
    out = np.zeros_like(vals, dtype=np.complex128)
    for k in range(len(spacing)):
        out += second_derivative_values(vals, spacing[k], k)
    return out


def recover_tau_known_phi(rep: ClassRepresentative, phi: ScalarField,
                          boundary_tau: BoundaryTrace) -> ScalarField:
    """Recover tau when the true drift is b = a grad(phi) with known phi.

    Then a^-1 b from the representative equals grad(phi + ln tau), so
    ln(tau) solves a Poisson problem with source div(g) - lap(phi) and
    Dirichlet data log(boundary_tau).  The boundary values use the
    principal logarithm; keep them away from the negative real axis.
    """
    grid = rep.grid
    g = _transport_target(rep)
    rhs = divergence(g).values - _laplacian_values(phi.values, grid.spacing)
    if (np.abs(boundary_tau.values) == 0).any():
        raise VanishingGauge("boundary tau datum vanishes")
    w_b = BoundaryTrace(grid, np.log(boundary_tau.values))
    return ScalarField(grid, np.exp(_identity_poisson(grid, rhs, w_b)))


def recover_tau_divfree_b(rep: ClassRepresentative,
                          boundary_tau: BoundaryTrace,
                          imag_tol: float = 1e-10) -> ScalarField:
    """Recover tau for real coefficient classes with divergence-free drift.

    tau solves the adjoint-type equation div(a grad tau) - div(tau b) = 0
    with Dirichlet data; in non-divergence form that is the coefficient set
    (a, -b, -div b).  Complex input beyond ``imag_tol`` (relative) raises
    ComplexCoefficients.
    """
    grid = rep.grid
    amat = rep.a.values
    bvec = rep.b.values
    scale = max(float(np.abs(amat).max()), float(np.abs(bvec).max()), 1e-300)
    worst = max(float(np.abs(amat.imag).max()), float(np.abs(bvec.imag).max()))
    if worst > imag_tol * scale:
        raise ComplexCoefficients(
            f"divergence-free drift route needs real coefficients "
            f"(relative imaginary part {worst / scale:.2e})")

    a_real = SymTensorField(grid, amat.real.astype(np.complex128))
    b_field = VectorField(grid, bvec.real.astype(np.complex128))
    minus_div_b = ScalarField(grid, -divergence(b_field).values)
    coeffs = CoefficientSet.from_fields(
        a_real,
        VectorField(grid, -b_field.values),
        minus_div_b,
    )
    tau = DirichletSystem(coeffs).solve(boundary_tau)
    return ScalarField(grid, tau.values)
