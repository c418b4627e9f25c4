"""Experiment harness: configs, noise, reports, manifests, CLI."""

import json

import numpy as np
import pytest

from gaugerec import (
    ConfigError,
    ExperimentConfig,
    PRESETS,
    ScalarField,
    add_noise,
    noise_realization,
    run,
    square_grid,
    triple_errors,
    unit_truth,
    write_manifest,
)
from gaugerec.cli import main as cli_main
from gaugerec.harness import MODES, observed_orders
from gaugerec.recon import ClassRepresentative
from gaugerec.fields import SymTensorField, VectorField


# ---------------------------------------------------------------------------
# Configuration validation
# ---------------------------------------------------------------------------

def test_config_rejects_bad_fields_with_located_messages():
    with pytest.raises(ConfigError, match="^mode"):
        ExperimentConfig.from_dict({"mode": "explode"})
    with pytest.raises(ConfigError, match="^preset"):
        ExperimentConfig.from_dict({"mode": "roundtrip", "preset": "nope"})
    with pytest.raises(ConfigError, match=r"grids\[0\]"):
        ExperimentConfig.from_dict(
            {"mode": "roundtrip", "preset": "identity-2d", "grids": [5]})
    with pytest.raises(ConfigError, match="dyadically"):
        ExperimentConfig.from_dict(
            {"mode": "roundtrip", "preset": "identity-2d", "grids": [33, 66]})
    with pytest.raises(ConfigError, match=r"noise\[1\]"):
        ExperimentConfig.from_dict(
            {"mode": "roundtrip", "preset": "identity-2d", "noise": [0.0, -1.0]})
    with pytest.raises(ConfigError, match="engine.warp"):
        ExperimentConfig.from_dict(
            {"mode": "roundtrip", "preset": "identity-2d", "engine": {"warp": 9}})
    with pytest.raises(ConfigError, match="inputs"):
        ExperimentConfig.from_dict({"mode": "reconstruct"})


def test_stability_mode_requires_positive_noise():
    cfg = ExperimentConfig(mode="stability", preset="identity-2d",
                           grids=[17], noise=[0.0])
    with pytest.raises(ConfigError, match="noise"):
        run(cfg)


def test_presets_are_complete():
    expected = {"identity-2d", "smooth-complex-2d", "bzero-2d", "real-2d",
                "constant-tensor-2d", "constant-tensor-3d", "isotropic-c",
                "qpat-demo", "elasto-demo"}
    assert expected <= set(PRESETS)
    for name, preset in PRESETS.items():
        assert preset.name == name
        assert preset.dim in (2, 3)
        assert preset.kind in ("pde", "qpat", "elasto")


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------

def test_add_noise_contract():
    grid = square_grid(33)
    f = ScalarField(grid, (1 + grid.meshes[0]).astype(complex))
    assert add_noise(f, 0.0, seed=1) is f
    g1 = add_noise(f, 1e-3, seed=42)
    g2 = add_noise(f, 1e-3, seed=42)
    assert np.array_equal(g1.values, g2.values)
    g3 = add_noise(f, 1e-3, seed=43)
    assert not np.array_equal(g1.values, g3.values)


def test_add_noise_amplitude_is_relative_to_the_sup():
    grid = square_grid(33)
    f = ScalarField(grid, np.full(grid.shape, 3.0, dtype=complex))
    delta = 1e-2
    sups = []
    for seed in range(100):
        g = add_noise(f, delta, seed=seed)
        sups.append(np.abs(g.values - f.values).max() / (delta * 3.0))
    assert 0.5 < min(sups) and max(sups) < 6.0


def test_real_noise_stays_real():
    grid = square_grid(17)
    f = ScalarField(grid, np.ones(grid.shape, dtype=complex))
    g = add_noise(f, 1e-2, seed=0, real=True)
    assert np.abs(g.values.imag).max() == 0.0
    draw = noise_realization(f, seed=5, real=True)
    assert np.abs(draw.imag).max() == 0.0


# ---------------------------------------------------------------------------
# Truth projection and error accounting
# ---------------------------------------------------------------------------

def test_unit_truth_is_unit_normalized():
    grid = square_grid(17)
    coeffs = PRESETS["smooth-complex-2d"].coefficients(grid)
    a_t, bpda_t, c_t, tau = unit_truth(coeffs)
    pair = np.einsum("...ij,...ij->...", a_t, a_t)
    assert np.abs(pair - 1.0).max() < 1e-12
    assert np.abs(tau[..., None, None] * a_t - coeffs.a.as_matrix()).max() < 1e-12


def test_triple_errors_sees_a_known_perturbation():
    grid = square_grid(17)
    coeffs = PRESETS["identity-2d"].coefficients(grid)
    a_t, bpda_t, c_t, _ = unit_truth(coeffs)
    a_f = SymTensorField.from_matrix(grid, a_t)
    rep = ClassRepresentative(
        grid=grid, a=a_f,
        b_plus_diva=VectorField(grid, bpda_t.copy()),
        c=ScalarField(grid, c_t + 0.01),
        b=VectorField(grid, bpda_t.copy()),
        gauge="unit-frobenius", diagnostics={})
    errs = triple_errors(rep, (a_t, bpda_t, c_t, None))
    scale = np.abs(a_t).max()
    assert errs["a"] == 0.0
    assert errs["c"] == pytest.approx(0.01 / scale)
    assert errs["triple"] == errs["c"]


def test_observed_orders_arithmetic():
    entries = [{"h": 1 / 16, "errors": {"triple": 4e-2}},
               {"h": 1 / 32, "errors": {"triple": 1e-2}},
               {"h": 1 / 64, "errors": {"triple": 2.5e-3}}]
    assert observed_orders(entries) == pytest.approx([2.0, 2.0])


# ---------------------------------------------------------------------------
# Mode runners
# ---------------------------------------------------------------------------

def test_roundtrip_on_the_trivial_preset_hits_roundoff():
    cfg = ExperimentConfig(mode="roundtrip", preset="identity-2d", grids=[17])
    report = run(cfg)
    entry = report.entries[0]
    assert entry["errors"]["triple"] < 1e-8
    assert entry["admissible_patches"] == entry["total_patches"]
    assert report.mode == "roundtrip"


def test_stability_runs_are_deterministic():
    cfg = dict(mode="stability", preset="identity-2d", grids=[17],
               noise=[1e-4, 1e-3], seed=11)
    r1 = run(ExperimentConfig(**cfg))
    r2 = run(ExperimentConfig(**cfg))
    assert r1.stability["errors"] == r2.stability["errors"]
    assert r1.stability["deltas"] == [1e-4, 1e-3]
    assert len(r1.stability["errors"]) == 2


def test_report_serialization(tmp_path):
    cfg = ExperimentConfig(mode="roundtrip", preset="identity-2d", grids=[17],
                           seed=2)
    report = run(cfg)
    path = tmp_path / "report.json"
    report.save(path)
    doc = json.loads(path.read_text())
    assert doc["mode"] == "roundtrip"
    assert doc["seed"] == 2
    assert doc["config"]["preset"] == "identity-2d"
    assert isinstance(doc["entries"][0]["errors"]["triple"], float)
    # round-trips through JSON at full double precision
    assert doc["entries"][0]["errors"]["triple"] == \
        report.entries[0]["errors"]["triple"]


def test_manifest_hashes_inputs(tmp_path):
    f1 = tmp_path / "in.json"
    f1.write_text('{"x": 1}')
    out = tmp_path / "res.json"
    out.write_text("{}")
    path = write_manifest(tmp_path, {"mode": "synthesize"}, [str(f1)], [str(out)])
    doc = json.loads(open(path).read())
    assert doc["config"]["mode"] == "synthesize"
    assert doc["package_version"]
    assert doc["numpy_version"]
    first = doc["inputs"][str(f1)]
    assert len(first) == 64  # sha256 hex digest
    f1.write_text('{"x": 2}')
    path = write_manifest(tmp_path, {"mode": "synthesize"}, [str(f1)], [str(out)])
    doc2 = json.loads(open(path).read())
    assert doc2["inputs"][str(f1)] != first
    assert doc2["outputs"] == sorted(doc2["outputs"])


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def write_config(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_synthesize_then_reconstruct(tmp_path):
    syn_dir = tmp_path / "syn"
    cfg1 = write_config(tmp_path, "syn.json",
                        {"mode": "synthesize", "preset": "identity-2d",
                         "grids": [17]})
    assert cli_main(["synthesize", "--config", cfg1, "--out", str(syn_dir)]) == 0
    solutions = sorted(str(p) for p in syn_dir.glob("solution_*.json"))
    assert len(solutions) == 5
    assert (syn_dir / "manifest.json").exists()

    rec_dir = tmp_path / "rec"
    cfg2 = write_config(tmp_path, "rec.json",
                        {"mode": "reconstruct", "inputs": solutions})
    assert cli_main(["reconstruct", "--config", cfg2, "--out", str(rec_dir)]) == 0
    report = json.loads((rec_dir / "report.json").read_text())
    assert report["mode"] == "reconstruct"
    entry = report["entries"][0]
    assert entry["shape"] == [17, 17]
    assert entry["admissible_patches"] == entry["total_patches"]
    assert (rec_dir / "rep_a.json").exists()
    manifest = json.loads((rec_dir / "manifest.json").read_text())
    assert sorted(manifest["inputs"]) == solutions


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = write_config(tmp_path, "bad.json",
                       {"mode": "roundtrip", "preset": "missing-preset"})
    assert cli_main(["roundtrip", "--config", bad]) == 1
    err = capsys.readouterr().err
    assert "preset" in err


def test_cli_coverage_failure_writes_partials(tmp_path):
    # data whose first field vanishes on a strip, no redundancy available
    from gaugerec import save_field
    grid = square_grid(33)
    x1, x2 = grid.meshes
    w = (x1 + 1j * x2) - (0.5 - 0.3j)
    vals = [np.ones(grid.shape), x1, x2, x1 * x2, np.real(w**3) / 6]
    inputs = []
    for j, v in enumerate(vals):
        p = tmp_path / f"u{j}.json"
        save_field(ScalarField(grid, v.astype(complex)), p)
        inputs.append(str(p))
    cfg = write_config(tmp_path, "rec.json",
                       {"mode": "reconstruct", "inputs": inputs})
    out = tmp_path / "out"
    assert cli_main(["reconstruct", "--config", cfg, "--out", str(out)]) == 2
    failure = json.loads((out / "coverage_failure.json").read_text())
    assert failure["uncovered_nodes"] > 0
    assert (out / "partial_a.json").exists()


def test_cli_mode_subcommands_cover_all_modes():
    for mode in MODES:
        assert cli_main([mode, "--config", "/nonexistent.json"]) == 1
