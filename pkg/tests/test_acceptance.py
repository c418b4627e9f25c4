"""Acceptance gate: eleven end-to-end checks with pinned tolerances.

Each test drives the library through public entry points, asserts the
numerical targets together with its wall-clock budget, and records the
measured values for the terminal summary (one line per criterion).
"""

import time

import numpy as np
import pytest

from gaugerec import (
    BoundaryTrace,
    CoverageFailure,
    ElastoData,
    EngineConfig,
    QpatData,
    ScalarField,
    build_M,
    build_frame,
    build_ratios,
    cgo_family,
    complement_basis,
    constant_tensor_family,
    gauge_transform,
    gradient,
    harmonic_family,
    qpat_reconstruct,
    elasto_reconstruct,
    reconstruct_class,
    reconstruct_global,
    recover_tau_b_zero,
    square_grid,
    synthesize,
    noise_realization,
)
from gaugerec.harness import (
    PRESETS,
    ExperimentConfig,
    _elasto_data,
    _qpat_data,
    run,
    triple_errors,
    unit_truth,
)


def strip_fields(grid, redundant):
    x1, x2 = grid.meshes
    w = (x1 + 1j * x2) - (0.5 - 0.3j)
    vals = [np.ones(grid.shape), x1, x2, x1 * x2, np.real(w**3) / 6]
    if redundant:
        vals += [(x1**2 - x2**2) / 2, np.imag(w**3) / 6]
    return [ScalarField(grid, v.astype(complex)) for v in vals]


def test_criterion_01_constant_class_identities(detail):
    t0 = time.perf_counter()
    grid = square_grid(65)
    x1, x2 = grid.meshes
    rb = build_ratios(harmonic_family(grid).fields())
    fr = build_frame(rb)
    mb = build_M(rb, fr)
    worst = 0.0

    def track(err):
        nonlocal worst
        worst = max(worst, float(err))
        return err

    # transport coefficients of the product ratio against the frame
    assert track(np.abs(mb.theta[0][..., 0] - (-x2)).max()) <= 1e-8
    assert track(np.abs(mb.theta[0][..., 1] - (-x1)).max()) <= 1e-8
    off = np.array([[0.0, 1.0], [1.0, 0.0]])
    diag = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert track(np.abs(mb.M[0] - off).max()) <= 1e-8
    assert track(np.abs(mb.M[1] - diag).max()) <= 1e-8
    assert track(np.abs(mb.M0 - np.eye(2) / np.sqrt(2)).max()) <= 1e-8
    rep = reconstruct_class(rb, fr, mb)
    assert track(np.abs(rep.a.as_matrix() - np.eye(2) / np.sqrt(2)).max()) <= 1e-8
    assert track(np.abs(rep.b_plus_diva.values).max()) <= 1e-8
    assert track(np.abs(rep.c.values).max()) <= 1e-8
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    detail(1, f"worst identity error {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_roundtrip_convergence(detail, smooth_ladder):
    report, elapsed = smooth_ladder
    finest = report.entries[-1]
    orders = report.orders["delta=0"]
    triple = finest["errors"]["triple"]
    assert triple <= 0.05
    assert all(o >= 1.5 for o in orders["triple"])
    # the drift alone converges one order slower
    assert all(o >= 0.5 for o in orders["b"])
    gaps = [t - b for t, b in zip(orders["triple"], orders["b"])]
    assert all(0.4 <= g <= 1.6 for g in gaps)
    assert elapsed < 120.0
    detail(2, f"triple {triple:.2e} at 129^2, orders {orders['triple'][-1]:.2f}"
              f"/{orders['b'][-1]:.2f} (full/drift), {elapsed:.1f}s")


def test_criterion_03_gauge_invariance(detail, smooth_ladder):
    report, _ = smooth_ladder
    bound = 10.0 * report.entries[-1]["errors"]["triple"]
    t0 = time.perf_counter()
    grid = square_grid(129)
    coeffs = PRESETS["smooth-complex-2d"].coefficients(grid)
    x1 = grid.meshes[0]
    tau = ScalarField(grid, 1 + 0.4 * np.sin(np.pi * x1) + 0j)
    moved = gauge_transform(coeffs, tau)
    ill = harmonic_family(grid)
    rep_a, _ = reconstruct_global(synthesize(coeffs, ill))
    rep_b, _ = reconstruct_global(synthesize(moved, ill))
    a_t, bpda_t, c_t, _ = unit_truth(coeffs)
    scale = max(np.abs(a_t).max(), np.abs(bpda_t).max(), np.abs(c_t).max())
    agreement = max(
        np.abs(rep_a.a.values - rep_b.a.values).max(),
        np.abs(rep_a.b_plus_diva.values - rep_b.b_plus_diva.values).max(),
        np.abs(rep_a.c.values - rep_b.c.values).max()) / scale
    elapsed = time.perf_counter() - t0
    assert agreement <= bound
    assert elapsed < 120.0
    detail(3, f"representatives agree to {agreement:.2e} "
              f"(bound {bound:.2e}), {elapsed:.1f}s")


def test_criterion_04_transport_gauge_recovery(detail):
    t0 = time.perf_counter()
    grid = square_grid(129)
    preset = PRESETS["bzero-2d"]
    coeffs = preset.coefficients(grid)
    data = synthesize(coeffs, preset.illumination(grid))
    rep, _ = reconstruct_global(data)
    a_t, _, _, tau_t = unit_truth(coeffs)
    m0_err = np.abs(rep.a.as_matrix() - a_t).max() / np.abs(a_t).max()
    tau = recover_tau_b_zero(
        rep, BoundaryTrace.from_node_values(grid, tau_t))
    dtau = gradient(tau).values - gradient(ScalarField(grid, tau_t)).values
    w1 = (np.abs(tau.values - tau_t).max() + np.abs(dtau).max()) \
        / (np.abs(tau_t).max()
           + np.abs(gradient(ScalarField(grid, tau_t)).values).max())
    elapsed = time.perf_counter() - t0
    # the factor carries one more derivative than the leading tensor, so
    # both errors are reported; the gate is on the W^{1,inf} figure
    assert w1 <= 0.02
    assert elapsed < 60.0
    detail(4, f"tau W1 error {w1:.2e}, leading tensor error {m0_err:.2e}, "
              f"{elapsed:.1f}s")


def test_criterion_05_constant_tensor_illuminations(detail):
    t0 = time.perf_counter()
    a0 = np.diag([1.0, 2.0]) + 0.1j * np.ones((2, 2))
    Q = complement_basis(a0)
    ortho = max(abs(np.sum(a0 * Qm)) for Qm in Q)
    assert ortho <= 1e-12
    grid = square_grid(65)
    fam = constant_tensor_family(grid, a0)
    rb = build_ratios(fam.fields())
    fr = build_frame(rb)
    mb = build_M(rb, fr)
    h = grid.spacing[0]
    match = max(float(np.abs(mb.M[m] - Q[m]).max()) for m in range(len(Q)))
    assert match <= 10 * h * h
    rep, pm = reconstruct_global(fam.fields())
    assert pm.coverage.all()
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    detail(5, f"orthogonality {ortho:.1e}, curvature match {match:.1e} "
              f"(bound {10 * h * h:.1e}), full coverage, {elapsed:.1f}s")


def test_criterion_06_oscillatory_illuminations(detail):
    t0 = time.perf_counter()
    grid = square_grid(129)
    preset = PRESETS["isotropic-c"]
    coeffs = preset.coefficients(grid)
    truth = unit_truth(coeffs)
    gamma = ScalarField(grid, coeffs.a.as_matrix()[..., 0, 0])

    def attempt(fam):
        data = synthesize(coeffs, fam)
        rb = build_ratios(data)
        fr = build_frame(rb)
        mb = build_M(rb, fr)
        rep, pm = reconstruct_global(data)
        err = triple_errors(rep, truth)["triple"]
        return float(fr.cond.max()), float(mb.indep.min()), err, pm

    default_fam = preset.illumination(grid)
    chosen = f"defaults k={default_fam.params['k']:.2f} eps={default_fam.params['eps']}"
    try:
        cond, indep, err, pm = attempt(default_fam)
        ok = cond <= 1e6 and indep >= 1e-8 and err <= 0.08 and pm.coverage.all()
    except Exception:
        ok = False
    if not ok:
        # fall back to a 3x3 parameter scan and report what passed
        k0 = default_fam.params["k"]
        for k in (0.5 * k0, k0, 2 * k0):
            for eps in (0.25, 0.5, 1.0):
                try:
                    cond, indep, err, pm = attempt(
                        cgo_family(grid, gamma=gamma, k=k, eps=eps))
                except Exception:
                    continue
                if cond <= 1e6 and indep >= 1e-8 and err <= 0.08 \
                        and pm.coverage.all():
                    ok = True
                    chosen = f"scan hit k={k:.2f} eps={eps}"
                    break
            if ok:
                break
    elapsed = time.perf_counter() - t0
    assert ok, "no admissible oscillatory parameter choice found"
    assert cond <= 1e6
    assert indep >= 1e-8
    assert err <= 0.08
    assert pm.coverage.all()
    assert elapsed < 300.0
    detail(6, f"{chosen}: cond {cond:.1f}, indep {indep:.2f}, "
              f"triple {err:.2e}, {elapsed:.1f}s")


def test_criterion_07_photoacoustic_pipeline(detail):
    t0 = time.perf_counter()
    grid = square_grid(129)
    cfg = ExperimentConfig(mode="qpat", preset="qpat-demo", grids=[129])
    data, truth = _qpat_data(cfg, PRESETS["qpat-demo"], grid)
    gamma, sigma, _ = qpat_reconstruct(data)
    g_err = np.abs(gamma.values - truth["gamma"].values).max() \
        / np.abs(truth["gamma"].values).max()
    s_err = np.abs(sigma.values - truth["sigma"].values).max() \
        / np.abs(truth["sigma"].values).max()
    assert g_err <= 0.08
    assert s_err <= 0.08

    # scaling every functional by lambda moves sigma linearly and leaves
    # gamma untouched
    small = square_grid(65)
    cfg_s = ExperimentConfig(mode="qpat", preset="qpat-demo", grids=[65])
    d1, _ = _qpat_data(cfg_s, PRESETS["qpat-demo"], small)
    lam = 2.0
    d2 = QpatData(H=[ScalarField(small, lam * Hj.values) for Hj in d1.H],
                  f1=d1.f1, gamma_boundary=d1.gamma_boundary,
                  sigma_boundary=d1.sigma_boundary)
    g1, s1, _ = qpat_reconstruct(d1)
    g2, s2, _ = qpat_reconstruct(d2)
    ident = max(np.abs(g2.values - g1.values).max(),
                np.abs(s2.values - lam * s1.values).max())
    assert ident <= 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    detail(7, f"gamma {g_err:.2e}, sigma {s_err:.2e}, "
              f"scaling identity {ident:.1e}, {elapsed:.1f}s")


def test_criterion_08_elastography_pipeline(detail):
    t0 = time.perf_counter()
    grid = square_grid(129)
    cfg = ExperimentConfig(mode="elasto", preset="elasto-demo", grids=[129])
    data, truth = _elasto_data(cfg, PRESETS["elasto-demo"], grid)
    gamma, rho, _ = elasto_reconstruct(data)
    g_err = np.abs(gamma.values - truth["gamma"].values).max() \
        / np.abs(truth["gamma"].values).max()
    im_err = np.abs(rho.values.imag - truth["rho"].imag).max() \
        / abs(truth["rho"].imag)
    assert g_err <= 0.08
    assert im_err <= 0.08

    small = square_grid(65)
    cfg_s = ExperimentConfig(mode="elasto", preset="elasto-demo", grids=[65])
    d1, _ = _elasto_data(cfg_s, PRESETS["elasto-demo"], small)
    d2 = ElastoData(H=d1.H, omega=2 * d1.omega, gamma_boundary=d1.gamma_boundary)
    _, rho1, _ = elasto_reconstruct(d1)
    _, rho2, _ = elasto_reconstruct(d2)
    ident = float(np.abs(4 * rho2.values - rho1.values).max())
    assert ident <= 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    detail(8, f"gamma {g_err:.2e}, Im rho {im_err:.2e}, "
              f"frequency identity {ident:.1e}, {elapsed:.1f}s")


def test_criterion_09_noise_sweep(detail):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(mode="stability", preset="smooth-complex-2d",
                           grids=[129], noise=[1e-5, 1e-4, 1e-3],
                           mollify_width=2.0, seed=7)
    report = run(cfg)
    slope = report.stability["slope"]
    elapsed = time.perf_counter() - t0
    assert 0.7 <= slope <= 1.3
    assert elapsed < 600.0
    errs = ", ".join(f"{e:.2e}" for e in report.stability["errors"])
    detail(9, f"slope {slope:.3f} over deltas 1e-5..1e-3 (errors {errs}), "
              f"{elapsed:.1f}s")


def test_criterion_10_real_data_mode(detail):
    t0 = time.perf_counter()
    grid = square_grid(65)
    preset = PRESETS["real-2d"]
    coeffs = preset.coefficients(grid)
    assert np.abs(coeffs.a.values.imag).max() == 0.0
    data = synthesize(coeffs, preset.illumination(grid))
    worst = 0.0

    def track(arr):
        nonlocal worst
        worst = max(worst, float(np.abs(np.asarray(arr).imag).max()))

    for f in data:
        track(f.values)
    rb = build_ratios(data)
    track(rb.v)
    track(rb.grad_v)
    fr = build_frame(rb)
    track(fr.H)
    mb = build_M(rb, fr)
    track(mb.theta)
    track(mb.M)
    track(mb.M0)
    rep, _ = reconstruct_global(data)
    track(rep.a.values)
    track(rep.b_plus_diva.values)
    track(rep.c.values)
    track(rep.b.values)
    # a real perturbation keeps everything real as well
    noisy = [ScalarField(grid, f.values + 1e-4 * noise_realization(
        f, seed=3, real=True)) for f in data]
    rep_n, _ = reconstruct_global(noisy)
    track(rep_n.a.values)
    track(rep_n.c.values)
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-12
    assert elapsed < 60.0
    detail(10, f"largest imaginary part {worst:.1e} across all stages, "
               f"{elapsed:.1f}s")


def test_criterion_11_patch_reselection(detail):
    t0 = time.perf_counter()
    grid = square_grid(65)

    # redundant data: patch-wise selection routes around the strip
    rep, pm = reconstruct_global(strip_fields(grid, redundant=True),
                                 EngineConfig(patch_size=17, overlap=12))
    assert pm.coverage.all()
    assert set(pm.signs) <= {-1, 1}
    a_err = float(np.abs(rep.a.as_matrix() - np.eye(2) / np.sqrt(2)).max())
    assert a_err <= 1e-10
    assert np.abs(rep.c.values).max() <= 1e-10

    # minimal data: the strip must be reported, not papered over
    with pytest.raises(CoverageFailure) as info:
        reconstruct_global(strip_fields(grid, redundant=False),
                           EngineConfig(patch_size=17, overlap=12))
    uncovered = info.value.uncovered
    cols = {int(c) for _, c in uncovered}
    assert 32 in cols  # the x1 = 0.5 line on a 65-node axis
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    detail(11, f"redundant run covered (tensor error {a_err:.1e}); minimal "
               f"run reported {uncovered.shape[0]} uncovered nodes on the "
               f"strip, {elapsed:.1f}s")
