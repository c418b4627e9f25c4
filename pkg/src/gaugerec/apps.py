"""End-to-end pipelines for the two measurement models.

Photoacoustic (absorption-weighted) data: H_j = sigma u_j where the u_j
solve div(gamma grad u) = sigma u with known Dirichlet traces.  The ratio
fields H_j/H_1 = u_j/u_1 feed the class engine directly (prepending the
constant 1 stands in for the missing u_1), the multiplicative scale is
recovered by transport, and the remaining factor of u_1 is removed by one
conservative flux solve for w = 1/u_1.

Elastic amplitude data: the solutions themselves are observed, so the class
engine output only needs its scale pinned from the boundary values of the
stiffness tensor; the zeroth-order coefficient divided by omega^2 gives the
density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NonPositiveH1, SingularSystem
from .fields import SYM_PAIRS, Grid, ScalarField, SymTensorField
from .forward import BoundaryTrace, _flat_strides
from .gauge import recover_tau_b_zero
from .recon import EngineConfig, reconstruct_global

__all__ = [
    "QpatData",
    "ElastoData",
    "divergence_form_matrix",
    "qpat_reconstruct",
    "elasto_reconstruct",
    "qpat_model_residual",
    "elasto_model_residual",
]


@dataclass
class QpatData:
    """Absorption-weighted interior data plus boundary knowledge.

    ``H`` are the interior functionals (H_1 first; it must be positive),
    ``f1`` the Dirichlet trace of the first illumination, and the boundary
    restrictions of the stiffness tensor and absorption close the scale.
    ``gamma_boundary``/``sigma_boundary`` accept full fields (only their
    boundary nodes are read) or flat boundary arrays.
    """

    H: list[ScalarField]
    f1: BoundaryTrace
    gamma_boundary: object
    sigma_boundary: object


@dataclass
class ElastoData:
    """Observed interior amplitudes, the working frequency, and the
    boundary restriction of the stiffness tensor."""

    H: list[ScalarField]
    omega: float
    gamma_boundary: object


def _boundary_tensor(grid: Grid, obj) -> np.ndarray:
    """Packed (k, n(n+1)/2) boundary samples of a symmetric tensor."""
    if isinstance(obj, SymTensorField):
        return obj.values.reshape(grid.num_nodes, -1)[grid.boundary_flat]
    arr = np.asarray(obj, dtype=np.complex128)
    k = grid.boundary_flat.size
    npack = grid.dim * (grid.dim + 1) // 2
    if arr.shape != (k, npack):
        raise ValueError(f"expected boundary tensor of shape {(k, npack)}, got {arr.shape}")
    return arr


def _boundary_scalar(grid: Grid, obj) -> np.ndarray:
    if isinstance(obj, ScalarField):
        return obj.values.reshape(-1)[grid.boundary_flat]
    if isinstance(obj, BoundaryTrace):
        return obj.values
    arr = np.asarray(obj, dtype=np.complex128).reshape(-1)
    if arr.size != grid.boundary_flat.size:
        raise ValueError("boundary scalar has the wrong number of samples")
    return arr


# ---------------------------------------------------------------------------
# Conservative discretization of w -> -div(D grad w)
# ---------------------------------------------------------------------------

def divergence_form_matrix(D: SymTensorField) -> sp.csr_matrix:
    """Sparse operator: -div(D grad w) at interior rows, identity at the
    boundary.

    Diagonal blocks use half-node averages of D (flux conservative); mixed
    blocks use centered differencing of the cross flux on full nodes.  All
    neighbor offsets of interior nodes stay on the grid.
    """
    grid = D.grid
    n = grid.dim
    shape = grid.shape
    N = grid.num_nodes
    h = grid.spacing
    strides = _flat_strides(shape)

    interior = grid.interior_mask
    int_idx = np.argwhere(interior)
    int_flat = np.flatnonzero(interior.ravel())
    Dmat = D.as_matrix()

    entries: dict[tuple[int, ...], np.ndarray] = {}

    def add(offset: tuple[int, ...], vals: np.ndarray) -> None:
        if offset in entries:
            entries[offset] = entries[offset] + vals
        else:
            entries[offset] = vals.astype(np.complex128)

    def shifted(comp_i: int, comp_j: int, shift: np.ndarray) -> np.ndarray:
        pos = int_idx + shift
        return Dmat[tuple(pos.T) + (comp_i, comp_j)]

    zero = np.zeros(n, dtype=np.intp)
    for p in range(n):
        ep = zero.copy()
        ep[p] = 1
        d_here = shifted(p, p, zero)
        d_plus = 0.5 * (d_here + shifted(p, p, ep))
        d_minus = 0.5 * (d_here + shifted(p, p, -ep))
        add(tuple(ep), d_plus / h[p] ** 2)
        add(tuple(-ep), d_minus / h[p] ** 2)
        add(tuple(zero), -(d_plus + d_minus) / h[p] ** 2)
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            ep = zero.copy()
            ep[p] = 1
            eq = zero.copy()
            eq[q] = 1
            dpq_plus = shifted(p, q, ep)
            dpq_minus = shifted(p, q, -ep)
            scale = 1.0 / (4.0 * h[p] * h[q])
            add(tuple(ep + eq), dpq_plus * scale)
            add(tuple(ep - eq), -dpq_plus * scale)
            add(tuple(-ep + eq), -dpq_minus * scale)
            add(tuple(-ep - eq), dpq_minus * scale)

    rows = []
    cols = []
    data = []
    for offset, vals in entries.items():
        rows.append(int_flat)
        cols.append(int_flat + int(np.asarray(offset, dtype=np.intp) @ strides))
        data.append(-vals)
    bnd = grid.boundary_flat
    rows.append(bnd)
    cols.append(bnd)
    data.append(np.ones(bnd.size, dtype=np.complex128))
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N)).tocsr()


def _flux_solve(D: SymTensorField, rhs_interior: np.ndarray,
                boundary_values: np.ndarray) -> np.ndarray:
    grid = D.grid
    A = divergence_form_matrix(D)
    rhs = np.zeros(grid.num_nodes, dtype=np.complex128)
    rhs[grid.boundary_flat] = boundary_values
    int_flat = np.flatnonzero(grid.interior_mask.ravel())
    rhs[int_flat] = rhs_interior.reshape(-1)[int_flat]
    try:
        w = splu(A.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SingularSystem(f"flux solve failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SingularSystem("flux solve produced non-finite values")
    return w.reshape(grid.shape)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def qpat_reconstruct(data: QpatData, config: EngineConfig | None = None
                     ) -> tuple[SymTensorField, ScalarField, dict]:
    """Recover (gamma, sigma) from absorption-weighted interior data.

    Steps: positivity screen on H_1; class engine on (1, H_j/H_1); transport
    recovery of the scale, anchored by gamma f_1^2 on the boundary; one
    conservative flux solve for w = 1/u_1 with the source calibrated by the
    boundary consistency factor mean(H_1 / (sigma f_1)); then
    gamma = D w^2 and sigma = H_1 w.
    """
    if len(data.H) < 2:
        raise ValueError("need at least two interior functionals")
    grid = data.H[0].grid
    H1 = data.H[0]
    bad = H1.values.real <= 0.0
    if bad.any():
        raise NonPositiveH1("H_1 must be strictly positive",
                            nodes=np.argwhere(bad))

    ones = ScalarField(grid, np.ones(grid.shape))
    fields = [ones] + [ScalarField(grid, Hj.values / H1.values) for Hj in data.H[1:]]
    rep, patch_map = reconstruct_global(fields, config)

    gb = _boundary_tensor(grid, data.gamma_boundary)
    ab = rep.a.values.reshape(grid.num_nodes, -1)[grid.boundary_flat]
    weights = np.array([1.0 if i == j else 2.0 for i, j in SYM_PAIRS[grid.dim]])
    num = np.sum(weights * np.conj(ab) * gb, axis=1) * data.f1.values ** 2
    den = np.sum(weights * np.abs(ab) ** 2, axis=1)
    anchor = BoundaryTrace(grid, num / den, label="tau anchor")

    diag: dict = {}
    tau = recover_tau_b_zero(rep, anchor, diagnostics=diag)
    D = SymTensorField(grid, rep.a.values * tau.values[..., None])

    sb = _boundary_scalar(grid, data.sigma_boundary)
    lam = np.mean(H1.values.reshape(-1)[grid.boundary_flat] / (sb * data.f1.values))
    w = _flux_solve(D, H1.values / lam, 1.0 / data.f1.values)

    gamma = SymTensorField(grid, D.values * (w * w)[..., None])
    sigma = ScalarField(grid, H1.values * w)
    report = {
        "gauge": rep.gauge,
        "curl_residual": diag.get("curl_residual"),
        "anchor_mismatch": diag.get("anchor_mismatch"),
        "source_calibration": complex(lam),
        "admissible_patches": int(sum(patch_map.admissible)),
        "total_patches": len(patch_map.admissible),
    }
    return gamma, sigma, report


def elasto_reconstruct(data: ElastoData, config: EngineConfig | None = None
                       ) -> tuple[SymTensorField, ScalarField, dict]:
    """Recover (gamma, rho) from interior amplitudes at frequency omega.

    The amplitudes solve div(gamma grad u) + omega^2 rho u = 0, so the class
    engine applies verbatim; the boundary stiffness pins the scale and the
    zeroth-order coefficient divided by omega^2 is the density.
    """
    if data.omega <= 0:
        raise ValueError("omega must be positive")
    grid = data.H[0].grid
    rep, patch_map = reconstruct_global(list(data.H), config)

    gb = _boundary_tensor(grid, data.gamma_boundary)
    ab = rep.a.values.reshape(grid.num_nodes, -1)[grid.boundary_flat]
    weights = np.array([1.0 if i == j else 2.0 for i, j in SYM_PAIRS[grid.dim]])
    num = np.sum(weights * np.conj(ab) * gb, axis=1)
    den = np.sum(weights * np.abs(ab) ** 2, axis=1)
    anchor = BoundaryTrace(grid, num / den, label="tau anchor")

    diag: dict = {}
    tau = recover_tau_b_zero(rep, anchor, diagnostics=diag)
    gamma = SymTensorField(grid, rep.a.values * tau.values[..., None])
    rho = ScalarField(grid, tau.values * rep.c.values / data.omega ** 2)
    report = {
        "gauge": rep.gauge,
        "curl_residual": diag.get("curl_residual"),
        "anchor_mismatch": diag.get("anchor_mismatch"),
        "admissible_patches": int(sum(patch_map.admissible)),
        "total_patches": len(patch_map.admissible),
    }
    return gamma, rho, report


def qpat_model_residual(gamma: SymTensorField, sigma: ScalarField,
                        H: list[ScalarField]) -> float:
    """Relative interior residual of -div(gamma grad(H_j/sigma)) + H_j."""
    grid = gamma.grid
    A = divergence_form_matrix(gamma)
    int_flat = np.flatnonzero(grid.interior_mask.ravel())
    worst = 0.0
    for Hj in H:
        u = (Hj.values / sigma.values).reshape(-1)
        r = (A @ u)[int_flat] + Hj.values.reshape(-1)[int_flat]
        scale = max(float(np.abs(Hj.values).max()), 1e-300) / min(grid.spacing) ** 2
        worst = max(worst, float(np.abs(r).max()) / scale)
    return worst


def elasto_model_residual(gamma: SymTensorField, rho: ScalarField,
                          omega: float, H: list[ScalarField]) -> float:
    """Relative interior residual of div(gamma grad u_j) + omega^2 rho u_j."""
    grid = gamma.grid
    A = divergence_form_matrix(gamma)
    int_flat = np.flatnonzero(grid.interior_mask.ravel())
    worst = 0.0
    for Hj in H:
        u = Hj.values.reshape(-1)
        r = -(A @ u)[int_flat] + (omega ** 2 * rho.values * Hj.values).reshape(-1)[int_flat]
        scale = max(float(np.abs(Hj.values).max()), 1e-300) / min(grid.spacing) ** 2
        worst = max(worst, float(np.abs(r).max()) / scale)
    return worst
