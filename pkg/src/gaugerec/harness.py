"""Experiment harness: presets, configuration, noise, sweeps, reports.

Everything the CLI can do lives here so it is scriptable from Python too.
A config selects a mode (synthesize / reconstruct / roundtrip / qpat /
elasto / stability), a preset or input files, a grid ladder, noise levels,
and engine thresholds; ``run`` executes it deterministically for a given
seed and returns a ReconstructionReport.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from ._version import __version__ as _pkg_version
from .apps import ElastoData, QpatData, elasto_reconstruct, qpat_reconstruct
from .errors import ConfigError
from .fields import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    divergence_tensor,
    load_field,
    mollify,
    save_field,
)
from .forward import CoefficientSet, synthesize
from .illum import (
    IlluminationSet,
    cgo_family,
    constant_tensor_family,
    harmonic_family,
    plane_wave_family,
    save_illumination,
)
from .recon import EngineConfig, reconstruct_global, unit_gauge_triple

__all__ = [
    "Preset",
    "PRESETS",
    "ExperimentConfig",
    "ReconstructionReport",
    "add_noise",
    "noise_realization",
    "unit_truth",
    "triple_errors",
    "run",
    "square_grid",
    "write_manifest",
]

MODES = ("synthesize", "reconstruct", "roundtrip", "qpat", "elasto", "stability")


def square_grid(size: int, dim: int = 2, extent=None) -> Grid:
    if extent is None:
        extent = ((0.0, 1.0),) * dim
    return Grid((size,) * dim, tuple(tuple(e) for e in extent))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _bump_values(grid: Grid) -> np.ndarray:
    out = np.ones(grid.shape)
    for k, mesh in enumerate(grid.meshes):
        lo, hi = grid.extent[k]
        out = out * np.sin(np.pi * (mesh - lo) / (hi - lo))
    return out


def _grad_bump_values(grid: Grid) -> np.ndarray:
    """Analytic gradient of the product-of-sines bump."""
    n = grid.dim
    sines = []
    cosines = []
    for k, mesh in enumerate(grid.meshes):
        lo, hi = grid.extent[k]
        t = np.pi * (mesh - lo) / (hi - lo)
        sines.append(np.sin(t))
        cosines.append(np.cos(t) * np.pi / (hi - lo))
    out = np.empty(grid.shape + (n,))
    for i in range(n):
        g = np.ones(grid.shape)
        for k in range(n):
            g = g * (cosines[k] if k == i else sines[k])
        out[..., i] = g
    return out


def _const_matrix_coeffs(grid: Grid, a0: np.ndarray) -> CoefficientSet:
    n = grid.dim
    a = SymTensorField.from_matrix(grid, np.broadcast_to(a0, grid.shape + (n, n)))
    zero_v = VectorField(grid, np.zeros(grid.shape + (n,)))
    zero_s = ScalarField(grid, np.zeros(grid.shape))
    return CoefficientSet(a, zero_v, zero_s, zero_v)


def _perturbed_tensor_coeffs(grid: Grid, S_re: np.ndarray, S_im: np.ndarray,
                             b_coef: np.ndarray, c_fn) -> CoefficientSet:
    """Id + bump * (S_re + i S_im) with analytic divergence, plus a bump
    drift and a zeroth-order term from ``c_fn(bump)``."""
    n = grid.dim
    bump = _bump_values(grid)
    gbump = _grad_bump_values(grid)
    S = S_re + 1j * S_im
    amat = np.broadcast_to(np.eye(n), grid.shape + (n, n)).astype(np.complex128) \
        + bump[..., None, None] * S
    diva = np.einsum("ij,...j->...i", S, gbump)
    b = bump[..., None] * b_coef
    c = c_fn(bump)
    return CoefficientSet(
        SymTensorField.from_matrix(grid, amat),
        VectorField(grid, b),
        ScalarField(grid, c),
        VectorField(grid, diva),
    )


def _isotropic_gamma(grid: Grid, amp: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    bump = _bump_values(grid)
    return 1.0 + amp * bump, amp * _grad_bump_values(grid)


@dataclass(frozen=True)
class Preset:
    """Named experiment regime: coefficients plus a default illumination."""

    name: str
    dim: int
    kind: str
    coefficients: object
    illumination: object
    extras: dict = dc_field(default_factory=dict)


def _p_identity(grid: Grid) -> CoefficientSet:
    return _const_matrix_coeffs(grid, np.eye(grid.dim, dtype=np.complex128))


_SR = np.array([[0.6, 0.3], [0.3, -0.4]])
_SI = np.array([[0.5, -0.2], [-0.2, 0.3]])


def _p_smooth_complex(grid: Grid) -> CoefficientSet:
    b_coef = np.array([0.08 + 0.02j, -0.08 + 0.04j])
    return _perturbed_tensor_coeffs(grid, 0.1 * _SR, 0.06 * _SI, b_coef,
                                    lambda bump: (0.08 + 0.06j) * bump)


def _p_bzero(grid: Grid) -> CoefficientSet:
    return _perturbed_tensor_coeffs(grid, 0.2 * _SR, 0.1 * _SI,
                                    np.zeros(2, dtype=np.complex128),
                                    lambda bump: (0.2 + 0.1j) * bump)


def _p_real(grid: Grid) -> CoefficientSet:
    b_coef = np.array([0.08, -0.08], dtype=np.complex128)
    return _perturbed_tensor_coeffs(grid, 0.2 * _SR, np.zeros((2, 2)), b_coef,
                                    lambda bump: 0.1 * bump.astype(np.complex128))


_A0_2D = np.array([[1.0, 0.0], [0.0, 2.0]]) + 0.1j * np.array([[1.0, 1.0], [1.0, 1.0]])
_A0_3D = np.diag([1.0, 1.5, 2.0]) + 0.1j * np.array(
    [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]])


def _p_isotropic_c(grid: Grid) -> CoefficientSet:
    """gamma(x) Id with a complex zeroth-order term.

    c vanishes on the boundary so the CGO traces stay second-order
    compatible at the domain corners; constant offsets there would force a
    corner singularity no consistent stencil can resolve.
    """
    n = grid.dim
    gamma, ggrad = _isotropic_gamma(grid)
    amat = gamma[..., None, None] * np.eye(n)
    bump = _bump_values(grid)
    x1 = grid.meshes[0]
    c = ((0.25 + 0.15j) + (0.1 - 0.1j) * x1) * bump
    return CoefficientSet(
        SymTensorField.from_matrix(grid, amat),
        VectorField(grid, np.zeros(grid.shape + (n,))),
        ScalarField(grid, c),
        VectorField(grid, ggrad.astype(np.complex128)),
    )


_SQ = np.array([[1.0, 0.4], [0.4, 0.7]])
_SE = np.array([[0.8, 0.3], [0.3, -0.5]])


def _p_qpat_gamma(grid: Grid) -> CoefficientSet:
    return _perturbed_tensor_coeffs(grid, 0.2 * _SQ, np.zeros((2, 2)),
                                    np.zeros(2, dtype=np.complex128),
                                    lambda bump: 0.0 * bump)


def _qpat_sigma(grid: Grid) -> ScalarField:
    return ScalarField(grid, 1.0 + 0.5 * _bump_values(grid))


def _p_elasto_gamma(grid: Grid) -> CoefficientSet:
    return _perturbed_tensor_coeffs(grid, 0.2 * _SE, np.zeros((2, 2)),
                                    np.zeros(2, dtype=np.complex128),
                                    lambda bump: 0.0 * bump)


_ELASTO_RHO = 1.0 + 0.3j
_ELASTO_OMEGA = 1.0


def _ill_harmonic(grid: Grid) -> IlluminationSet:
    return harmonic_family(grid)


def _ill_cgo_isotropic(grid: Grid) -> IlluminationSet:
    gamma, _ = _isotropic_gamma(grid)
    return cgo_family(grid, gamma=ScalarField(grid, gamma))


def _ill_qpat(grid: Grid) -> IlluminationSet:
    # lap(f) = f matches sigma = 1 on the boundary: corner-compatible and
    # strictly positive, as the first trace must be.
    return plane_wave_family(grid, kappa_sq=1.0)


def _ill_elasto(grid: Grid) -> IlluminationSet:
    # lap(f) = -omega^2 rho f at the boundary, where gamma = Id.
    return plane_wave_family(grid, kappa_sq=-(_ELASTO_OMEGA ** 2) * _ELASTO_RHO)


PRESETS: dict[str, Preset] = {
    "identity-2d": Preset("identity-2d", 2, "pde", _p_identity, _ill_harmonic),
    "smooth-complex-2d": Preset("smooth-complex-2d", 2, "pde",
                                _p_smooth_complex, _ill_harmonic),
    "bzero-2d": Preset("bzero-2d", 2, "pde", _p_bzero, _ill_harmonic),
    "real-2d": Preset("real-2d", 2, "pde", _p_real, _ill_harmonic),
    "constant-tensor-2d": Preset(
        "constant-tensor-2d", 2, "pde",
        lambda grid: _const_matrix_coeffs(grid, _A0_2D),
        lambda grid: constant_tensor_family(grid, _A0_2D),
        extras={"a0": _A0_2D}),
    "constant-tensor-3d": Preset(
        "constant-tensor-3d", 3, "pde",
        lambda grid: _const_matrix_coeffs(grid, _A0_3D),
        lambda grid: constant_tensor_family(grid, _A0_3D),
        extras={"a0": _A0_3D}),
    "isotropic-c": Preset("isotropic-c", 2, "pde", _p_isotropic_c,
                          _ill_cgo_isotropic),
    "qpat-demo": Preset("qpat-demo", 2, "qpat", _p_qpat_gamma, _ill_qpat,
                        extras={"sigma": _qpat_sigma}),
    "elasto-demo": Preset("elasto-demo", 2, "elasto", _p_elasto_gamma,
                          _ill_elasto,
                          extras={"rho": _ELASTO_RHO, "omega": _ELASTO_OMEGA}),
}


# ---------------------------------------------------------------------------
# Config and report
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    mode: str
    preset: str | None = None
    grids: list[int] = dc_field(default_factory=lambda: [33])
    extent: list | None = None
    noise: list[float] = dc_field(default_factory=lambda: [0.0])
    mollify_width: float = 0.0
    real_noise: bool = False
    seed: int = 0
    engine: EngineConfig = dc_field(default_factory=EngineConfig)
    inputs: list[str] = dc_field(default_factory=list)
    illumination: dict = dc_field(default_factory=dict)
    threads: int | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        mode = raw.get("mode")
        if mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
        eng_raw = raw.get("engine", {})
        if not isinstance(eng_raw, dict):
            raise ConfigError("engine", "must be an object")
        known = {f for f in EngineConfig.__dataclass_fields__}
        for k in eng_raw:
            if k not in known:
                raise ConfigError(f"engine.{k}", "unknown engine option")
        engine = EngineConfig(**eng_raw)
        cfg = cls(
            mode=mode,
            preset=raw.get("preset"),
            grids=list(raw.get("grids", [33])),
            extent=raw.get("extent"),
            noise=[float(d) for d in raw.get("noise", [0.0])],
            mollify_width=float(raw.get("mollify_width", 0.0)),
            real_noise=bool(raw.get("real_noise", False)),
            seed=int(raw.get("seed", 0)),
            engine=engine,
            inputs=list(raw.get("inputs", [])),
            illumination=dict(raw.get("illumination", {})),
            threads=raw.get("threads"),
        )
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if self.mode == "reconstruct":
            if not self.inputs:
                raise ConfigError("inputs", "reconstruct mode needs field archives")
        elif self.preset is not None and self.preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {self.preset!r} "
                                        f"(known: {sorted(PRESETS)})")
        elif self.preset is None:
            raise ConfigError("preset", f"{self.mode} mode needs a preset")
        for i, g in enumerate(self.grids):
            if int(g) < 9:
                raise ConfigError(f"grids[{i}]", "grids need at least 9 nodes per axis")
        if self.mode == "roundtrip" and len(self.grids) > 1:
            for a, b in zip(self.grids, self.grids[1:]):
                if b != 2 * a - 1:
                    raise ConfigError("grids", "convergence ladders must be "
                                               "dyadically nested (m -> 2m-1)")
        for i, d in enumerate(self.noise):
            if d < 0:
                raise ConfigError(f"noise[{i}]", "noise levels must be nonnegative")
        if self.mollify_width < 0:
            raise ConfigError("mollify_width", "must be nonnegative")
        self.engine.validate()
        return self


@dataclass
class ReconstructionReport:
    mode: str
    preset: str | None
    gauge: str
    seed: int
    entries: list[dict]
    orders: dict
    stability: dict | None
    timings: dict
    config_echo: dict

    def to_dict(self) -> dict:
        return _jsonify({
            "mode": self.mode,
            "preset": self.preset,
            "gauge": self.gauge,
            "seed": self.seed,
            "package_version": _pkg_version,
            "entries": self.entries,
            "orders": self.orders,
            "stability": self.stability,
            "timings": self.timings,
            "config": self.config_echo,
        })

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.complexfloating, complex)):
        z = complex(obj)
        return [z.real, z.imag]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def noise_realization(f: ScalarField, seed: int, real: bool = False) -> np.ndarray:
    """Unit Gaussian draw matching f's shape (E|g|^2 = 1), reproducible."""
    rng = np.random.default_rng(seed)
    if real:
        return rng.standard_normal(f.grid.shape).astype(np.complex128)
    return (rng.standard_normal(f.grid.shape)
            + 1j * rng.standard_normal(f.grid.shape)) / np.sqrt(2.0)


def add_noise(f: ScalarField, delta: float, seed: int,
              real: bool = False) -> ScalarField:
    """f + delta * sup|f| * g with a seeded standard Gaussian g."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0:
        return f
    g = noise_realization(f, seed, real=real)
    scale = float(np.abs(f.values).max())
    return ScalarField(f.grid, f.values + delta * scale * g)


# ---------------------------------------------------------------------------
# Truth projection and error metrics
# ---------------------------------------------------------------------------

def unit_truth(coeffs: CoefficientSet):
    """Project an exact coefficient set onto the unit-Frobenius gauge.

    Returns (a_matrix, b_plus_diva, c, scale); the representative of the
    class that ``reconstruct_global`` targets.
    """
    amat = coeffs.a.as_matrix()
    bpda = coeffs.b.values + coeffs.diva.values
    return unit_gauge_triple(amat, bpda, coeffs.c.values)


def triple_errors(rep, truth) -> dict:
    """Relative sup errors of the representative against the unit truth.

    All components are normalized by the largest sup norm in the truth
    triple, so near-zero components do not blow up the ratio.  The drift
    alone is compared against the truth's b + div a minus the discrete
    divergence of the truth's unit tensor, matching how the engine forms it.
    """
    a_t, bpda_t, c_t, _ = truth
    grid = rep.grid
    scale = max(float(np.abs(a_t).max()), float(np.abs(bpda_t).max()),
                float(np.abs(c_t).max()), 1e-300)
    err_a = float(np.abs(rep.a.as_matrix() - a_t).max()) / scale
    err_bpda = float(np.abs(rep.b_plus_diva.values - bpda_t).max()) / scale
    err_c = float(np.abs(rep.c.values - c_t).max()) / scale
    b_ref = bpda_t - divergence_tensor(SymTensorField.from_matrix(grid, a_t)).values
    err_b = float(np.abs(rep.b.values - b_ref).max()) / scale
    return {
        "a": err_a,
        "b_plus_diva": err_bpda,
        "c": err_c,
        "triple": max(err_a, err_bpda, err_c),
        "b": err_b,
        "gauge": rep.gauge,
    }


def observed_orders(entries: list[dict], key: str = "triple") -> list[float]:
    """Convergence orders between consecutive ladder entries."""
    out = []
    for prev, cur in zip(entries, entries[1:]):
        e0, e1 = prev["errors"][key], cur["errors"][key]
        h0, h1 = prev["h"], cur["h"]
        if e0 <= 0 or e1 <= 0:
            out.append(float("nan"))
        else:
            out.append(float(np.log(e0 / e1) / np.log(h0 / h1)))
    return out


# ---------------------------------------------------------------------------
# Mode pipelines
# ---------------------------------------------------------------------------

def _build_grid(cfg: ExperimentConfig, size: int, dim: int) -> Grid:
    return square_grid(int(size), dim, cfg.extent)


def _build_illumination(cfg: ExperimentConfig, preset: Preset, grid: Grid) -> IlluminationSet:
    fam = cfg.illumination.get("family")
    params = dict(cfg.illumination.get("params", {}))
    if fam is None:
        return preset.illumination(grid)
    if fam == "harmonic":
        return harmonic_family(grid)
    if fam == "constant-tensor":
        a0 = params.get("a0", preset.extras.get("a0"))
        if a0 is None:
            raise ConfigError("illumination.params.a0", "constant-tensor family needs a0")
        return constant_tensor_family(grid, np.asarray(a0, dtype=np.complex128))
    if fam == "cgo":
        return cgo_family(grid, k=params.get("k"), eps=params.get("eps", 0.5))
    raise ConfigError("illumination.family", f"unknown family {fam!r}")


def _synthesize_data(cfg: ExperimentConfig, preset: Preset, grid: Grid
                     ) -> tuple[CoefficientSet, IlluminationSet, list[ScalarField]]:
    coeffs = preset.coefficients(grid)
    ill = _build_illumination(cfg, preset, grid)
    data = synthesize(coeffs, ill)
    return coeffs, ill, data


def _degrade(data: list[ScalarField], delta: float, cfg: ExperimentConfig
             ) -> list[ScalarField]:
    out = []
    for j, f in enumerate(data):
        g = add_noise(f, delta, cfg.seed + j, real=cfg.real_noise)
        if cfg.mollify_width > 0:
            g = mollify(g, cfg.mollify_width)
        out.append(g)
    return out


def _run_roundtrip(cfg: ExperimentConfig, out_dir: Path | None) -> ReconstructionReport:
    preset = PRESETS[cfg.preset]
    entries = []
    timings = {}
    t_total = time.perf_counter()
    for size in cfg.grids:
        grid = _build_grid(cfg, size, preset.dim)
        t0 = time.perf_counter()
        coeffs, ill, data = _synthesize_data(cfg, preset, grid)
        t_syn = time.perf_counter() - t0
        truth = unit_truth(coeffs)
        for delta in cfg.noise:
            degraded = _degrade(data, delta, cfg)
            t1 = time.perf_counter()
            rep, patch_map = reconstruct_global(degraded, cfg.engine)
            t_rec = time.perf_counter() - t1
            errors = triple_errors(rep, truth)
            entries.append({
                "shape": list(grid.shape),
                "h": max(grid.spacing),
                "delta": delta,
                "errors": errors,
                "admissible_patches": int(sum(patch_map.admissible)),
                "total_patches": len(patch_map.admissible),
                "timings": {"synthesize": t_syn, "reconstruct": t_rec},
            })
            if out_dir is not None and size == cfg.grids[-1]:
                tag = f"{size}_d{delta:g}"
                save_field(rep.a, out_dir / f"rep_a_{tag}.json")
                save_field(rep.b_plus_diva, out_dir / f"rep_bpda_{tag}.json")
                save_field(rep.c, out_dir / f"rep_c_{tag}.json")
    orders = {}
    for delta in cfg.noise:
        ladder = [e for e in entries if e["delta"] == delta]
        if len(ladder) > 1:
            orders[f"delta={delta:g}"] = {
                key: observed_orders(ladder, key)
                for key in ("a", "b_plus_diva", "c", "triple", "b")
            }
    timings["total"] = time.perf_counter() - t_total
    return ReconstructionReport(cfg.mode, cfg.preset, "unit-frobenius", cfg.seed,
                                entries, orders, None, timings, _echo(cfg))


def _run_synthesize(cfg: ExperimentConfig, out_dir: Path | None) -> ReconstructionReport:
    preset = PRESETS[cfg.preset]
    grid = _build_grid(cfg, cfg.grids[0], preset.dim)
    t0 = time.perf_counter()
    coeffs, ill, data = _synthesize_data(cfg, preset, grid)
    entries = [{"shape": list(grid.shape), "h": max(grid.spacing),
                "fields": len(data)}]
    outputs = []
    if out_dir is not None:
        for j, f in enumerate(data):
            p = out_dir / f"solution_{j}.json"
            save_field(f, p)
            outputs.append(str(p))
        save_illumination(ill, out_dir / "illumination.json")
        entries[0]["outputs"] = outputs
    timings = {"total": time.perf_counter() - t0}
    return ReconstructionReport(cfg.mode, cfg.preset, "n/a", cfg.seed,
                                entries, {}, None, timings, _echo(cfg))


def _run_reconstruct(cfg: ExperimentConfig, out_dir: Path | None) -> ReconstructionReport:
    data = [load_field(p) for p in cfg.inputs]
    for f in data:
        if not isinstance(f, ScalarField):
            raise ConfigError("inputs", "reconstruct mode expects scalar field archives")
    t0 = time.perf_counter()
    rep, patch_map = reconstruct_global(data, cfg.engine)
    timings = {"total": time.perf_counter() - t0}
    entries = [{
        "shape": list(rep.grid.shape),
        "h": max(rep.grid.spacing),
        "admissible_patches": int(sum(patch_map.admissible)),
        "total_patches": len(patch_map.admissible),
        "gauge": rep.gauge,
    }]
    if out_dir is not None:
        save_field(rep.a, out_dir / "rep_a.json")
        save_field(rep.b_plus_diva, out_dir / "rep_bpda.json")
        save_field(rep.c, out_dir / "rep_c.json")
        save_field(rep.b, out_dir / "rep_b.json")
    return ReconstructionReport(cfg.mode, cfg.preset, "unit-frobenius", cfg.seed,
                                entries, {}, None, timings, _echo(cfg))


def _qpat_data(cfg: ExperimentConfig, preset: Preset, grid: Grid) -> tuple[QpatData, dict]:
    gamma_set = preset.coefficients(grid)
    sigma = preset.extras["sigma"](grid)
    model = CoefficientSet(gamma_set.a, gamma_set.b,
                           ScalarField(grid, -sigma.values), gamma_set.diva)
    ill = _build_illumination(cfg, preset, grid)
    u = synthesize(model, ill)
    H = [ScalarField(grid, sigma.values * uj.values) for uj in u]
    data = QpatData(H=H, f1=ill.traces[0], gamma_boundary=gamma_set.a,
                    sigma_boundary=sigma)
    return data, {"gamma": gamma_set.a, "sigma": sigma}


def _run_qpat(cfg: ExperimentConfig, out_dir: Path | None) -> ReconstructionReport:
    preset = PRESETS[cfg.preset]
    if preset.kind != "qpat":
        raise ConfigError("preset", "qpat mode needs a qpat preset")
    entries = []
    t_total = time.perf_counter()
    for size in cfg.grids:
        grid = _build_grid(cfg, size, preset.dim)
        data, truth = _qpat_data(cfg, preset, grid)
        delta = cfg.noise[0]
        if delta > 0 or cfg.mollify_width > 0:
            data = QpatData(H=_degrade(data.H, delta, cfg), f1=data.f1,
                            gamma_boundary=data.gamma_boundary,
                            sigma_boundary=data.sigma_boundary)
        t0 = time.perf_counter()
        gamma, sigma, rep_report = qpat_reconstruct(data, cfg.engine)
        dt = time.perf_counter() - t0
        g_scale = float(np.abs(truth["gamma"].values).max())
        s_scale = float(np.abs(truth["sigma"].values).max())
        entries.append({
            "shape": list(grid.shape),
            "h": max(grid.spacing),
            "errors": {
                "gamma": float(np.abs(gamma.values - truth["gamma"].values).max()) / g_scale,
                "sigma": float(np.abs(sigma.values - truth["sigma"].values).max()) / s_scale,
                "gauge": "anchored",
            },
            "pipeline": rep_report,
            "timings": {"reconstruct": dt},
        })
        if out_dir is not None and size == cfg.grids[-1]:
            save_field(gamma, out_dir / f"qpat_gamma_{size}.json")
            save_field(sigma, out_dir / f"qpat_sigma_{size}.json")
    timings = {"total": time.perf_counter() - t_total}
    return ReconstructionReport(cfg.mode, cfg.preset, "anchored", cfg.seed,
                                entries, {}, None, timings, _echo(cfg))


def _elasto_data(cfg: ExperimentConfig, preset: Preset, grid: Grid
                 ) -> tuple[ElastoData, dict]:
    gamma_set = preset.coefficients(grid)
    rho = preset.extras["rho"]
    omega = preset.extras["omega"]
    c = ScalarField(grid, np.full(grid.shape, omega ** 2 * rho, dtype=np.complex128))
    model = CoefficientSet(gamma_set.a, gamma_set.b, c, gamma_set.diva)
    ill = _build_illumination(cfg, preset, grid)
    u = synthesize(model, ill)
    data = ElastoData(H=u, omega=omega, gamma_boundary=gamma_set.a)
    return data, {"gamma": gamma_set.a, "rho": rho, "omega": omega}


def _run_elasto(cfg: ExperimentConfig, out_dir: Path | None) -> ReconstructionReport:
    preset = PRESETS[cfg.preset]
    if preset.kind != "elasto":
        raise ConfigError("preset", "elasto mode needs an elasto preset")
    entries = []
    t_total = time.perf_counter()
    for size in cfg.grids:
        grid = _build_grid(cfg, size, preset.dim)
        data, truth = _elasto_data(cfg, preset, grid)
        t0 = time.perf_counter()
        gamma, rho, rep_report = elasto_reconstruct(data, cfg.engine)
        dt = time.perf_counter() - t0
        g_scale = float(np.abs(truth["gamma"].values).max())
        rho_true = complex(truth["rho"])
        entries.append({
            "shape": list(grid.shape),
            "h": max(grid.spacing),
            "errors": {
                "gamma": float(np.abs(gamma.values - truth["gamma"].values).max()) / g_scale,
                "rho": float(np.abs(rho.values - rho_true).max()) / abs(rho_true),
                "rho_imag": float(np.abs(rho.values.imag - rho_true.imag).max())
                / max(abs(rho_true.imag), 1e-300),
                "gauge": "anchored",
            },
            "pipeline": rep_report,
            "timings": {"reconstruct": dt},
        })
        if out_dir is not None and size == cfg.grids[-1]:
            save_field(gamma, out_dir / f"elasto_gamma_{size}.json")
            save_field(rho, out_dir / f"elasto_rho_{size}.json")
    timings = {"total": time.perf_counter() - t_total}
    return ReconstructionReport(cfg.mode, cfg.preset, "anchored", cfg.seed,
                                entries, {}, None, timings, _echo(cfg))


def _run_stability(cfg: ExperimentConfig, out_dir: Path | None) -> ReconstructionReport:
    """Perturbation response: reconstruct from data + delta * noise and
    compare against the delta = 0 reconstruction.

    The same seeded realization is reused across deltas (scaled linearly)
    so the sweep isolates the response to one perturbation direction
    instead of resampling noise at every level.
    """
    preset = PRESETS[cfg.preset]
    deltas = [d for d in cfg.noise if d > 0]
    if not deltas:
        raise ConfigError("noise", "stability mode needs positive noise levels")
    grid = _build_grid(cfg, cfg.grids[-1], preset.dim)
    t_total = time.perf_counter()
    coeffs, ill, data = _synthesize_data(cfg, preset, grid)
    base = [mollify(f, cfg.mollify_width) if cfg.mollify_width > 0 else f
            for f in data]
    rep0, _ = reconstruct_global(base, cfg.engine)
    a0_, bp0, c0 = rep0.triple_arrays()
    scale0 = max(float(np.abs(a0_).max()), float(np.abs(bp0).max()),
                 float(np.abs(c0).max()))
    draws = [noise_realization(f, cfg.seed + j, real=cfg.real_noise)
             for j, f in enumerate(data)]
    amps = [float(np.abs(f.values).max()) for f in data]

    entries = []
    for delta in sorted(deltas):
        noisy = [ScalarField(grid, f.values + delta * amp * g)
                 for f, amp, g in zip(data, amps, draws)]
        if cfg.mollify_width > 0:
            noisy = [mollify(f, cfg.mollify_width) for f in noisy]
        rep, _ = reconstruct_global(noisy, cfg.engine)
        a_, bp, c = rep.triple_arrays()
        err = max(float(np.abs(a_ - a0_).max()), float(np.abs(bp - bp0).max()),
                  float(np.abs(c - c0).max())) / scale0
        entries.append({"shape": list(grid.shape), "h": max(grid.spacing),
                        "delta": delta, "errors": {"vs_reference": err,
                                                   "gauge": rep.gauge}})
    logs = np.log([e["delta"] for e in entries])
    errs = np.log([e["errors"]["vs_reference"] for e in entries])
    slope = float(np.polyfit(logs, errs, 1)[0]) if len(entries) > 1 else float("nan")
    stability = {"slope": slope,
                 "deltas": [e["delta"] for e in entries],
                 "errors": [e["errors"]["vs_reference"] for e in entries],
                 "reference": "delta=0 reconstruction, shared realization"}
    timings = {"total": time.perf_counter() - t_total}
    return ReconstructionReport(cfg.mode, cfg.preset, "unit-frobenius", cfg.seed,
                                entries, {}, stability, timings, _echo(cfg))


def _echo(cfg: ExperimentConfig) -> dict:
    eng = {k: getattr(cfg.engine, k) for k in EngineConfig.__dataclass_fields__}
    return _jsonify({
        "mode": cfg.mode, "preset": cfg.preset, "grids": cfg.grids,
        "extent": cfg.extent, "noise": cfg.noise,
        "mollify_width": cfg.mollify_width, "real_noise": cfg.real_noise,
        "seed": cfg.seed, "engine": eng, "inputs": cfg.inputs,
        "illumination": cfg.illumination,
    })


_RUNNERS = {
    "synthesize": _run_synthesize,
    "reconstruct": _run_reconstruct,
    "roundtrip": _run_roundtrip,
    "qpat": _run_qpat,
    "elasto": _run_elasto,
    "stability": _run_stability,
}


def run(config: ExperimentConfig, out_dir=None) -> ReconstructionReport:
    """Execute one experiment; deterministic given (config, seed)."""
    config.validate()
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    report = _RUNNERS[config.mode](config, out_path)
    if out_path is not None:
        report.save(out_path / "report.json")
    return report


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config_echo: dict, inputs: list[str],
                   outputs: list[str]) -> str:
    """Record config, package/tool versions, and input hashes next to the
    outputs of a CLI run."""
    import scipy

    out_dir = Path(out_dir)
    manifest = {
        "config": _jsonify(config_echo),
        "package_version": _pkg_version,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "inputs": {p: _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": sorted(str(p.relative_to(out_dir))
                          for p in out_dir.rglob("*") if p.is_file()),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return str(path)
