import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condrep.pdvcalib import (
    ArbitrageError,
    CalibrationConfig,
    CallSurface,
    DegenerateDenominator,
    DisplacedDiffusion,
    EmptyCloud,
    FeatureSpec,
    FlatVol,
    LocalVolGrid,
    NonFiniteState,
    ParticleCloud,
    TermStructureVol,
    assign_bins,
    bs_call,
    calibrate_slv_step,
    calibrate_step,
    dupire_localvol,
    estimate_cond_exp,
    parse_vol_model,
    quantile_edges,
    run_calibration,
    step_simulate,
    synth_call_surface,
)

TIMES = np.round(np.arange(0, 51) * 0.02, 10)
STRIKES = np.round(np.arange(0.4, 2.51, 0.01), 10)


def atm_oracle(sigma, t):
    # ATM Black-Scholes with zero rates: 2N(σ√t/2) − 1 = erf(σ√t / (2√2))
    return math.erf(sigma * math.sqrt(t) / (2 * math.sqrt(2)))


def random_cloud(rng, n, spread=0.2):
    c = ParticleCloud.initial(n)
    x = np.exp(spread * rng.standard_normal(n))
    return ParticleCloud(x, c.r1a, c.r1b, c.r2a, c.r2b, c.w)


# -- surfaces --------------------------------------------------------------------


def test_flat_atm_price():
    p = synth_call_surface(FlatVol(0.2), [1.0], [1.0]).C[0, 0]
    assert p == pytest.approx(atm_oracle(0.2, 1.0), abs=1e-12)
    assert round(p, 4) == 0.0797


def test_surface_boundaries():
    s = synth_call_surface(FlatVol(0.2), TIMES, STRIKES)
    np.testing.assert_array_equal(s.C[0], np.maximum(1 - STRIKES, 0))
    s = synth_call_surface(DisplacedDiffusion(0.2, 0.5), TIMES, STRIKES)
    np.testing.assert_allclose(s.C[0], np.maximum(1 - STRIKES, 0), atol=1e-15)
    assert bs_call(1.0, 1e-12, 0.04) == pytest.approx(1.0)


@pytest.mark.parametrize("model", [FlatVol(0.2), TermStructureVol(0.04, 0.02), DisplacedDiffusion(0.25, 0.3)])
def test_surface_no_arbitrage(model):
    C = synth_call_surface(model, TIMES, STRIKES).C
    assert np.all(np.diff(C, axis=1) <= 1e-15)
    assert np.all(np.diff(C, axis=0) >= -1e-15)
    d2 = np.diff(C, 2, axis=1)
    assert np.all(d2 >= -1e-14)


def test_parse_vol_model():
    assert parse_vol_model("flat:0.3") == FlatVol(0.3)
    assert parse_vol_model("dd:0.2,0.5") == DisplacedDiffusion(0.2, 0.5)
    with pytest.raises(ValueError):
        parse_vol_model("heston:1")
    with pytest.raises(ValueError):
        parse_vol_model("flat:1,2,3")


def test_surface_csv_roundtrip(tmp_path):
    s = synth_call_surface(FlatVol(0.2), TIMES[:5], STRIKES[::20])
    s.to_csv(tmp_path / "s.csv")
    back = CallSurface.from_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.C, s.C)
    np.testing.assert_array_equal(back.strikes, s.strikes)


# -- Dupire ----------------------------------------------------------------------


def test_dupire_flat_interior():
    lv = dupire_localvol(synth_call_surface(FlatVol(0.2), TIMES, STRIKES))
    assert np.max(np.abs(lv.sigma[1:-1, 1:-1] - 0.2)) <= 0.002
    assert lv.floored == 0


def test_dupire_price_form_away_from_expiry():
    lv = dupire_localvol(synth_call_surface(FlatVol(0.2), TIMES, STRIKES), method="price")
    rows = lv.times >= 0.5
    cols = (lv.strikes >= 0.8) & (lv.strikes <= 1.25)
    assert np.max(np.abs(lv.sigma[np.ix_(rows, cols)] - 0.2)) <= 0.002


def test_dupire_term_structure():
    m = TermStructureVol(0.04, 0.02)
    lv = dupire_localvol(synth_call_surface(m, TIMES, STRIKES))
    cols = (lv.strikes >= 0.7) & (lv.strikes <= 1.5)
    expect = m.locvar(lv.times, 1.0)[:, None]
    assert np.max(np.abs(lv.locvar[1:, cols] - expect[1:])) <= 1e-4


def test_dupire_skew_matches_analytic():
    m = DisplacedDiffusion(0.2, 0.5)
    lv = dupire_localvol(synth_call_surface(m, TIMES, STRIKES))
    rows = lv.times >= 0.5
    cols = (lv.strikes >= 0.5) & (lv.strikes <= 2.0)
    err = np.abs(lv.locvar - m.locvar(0, lv.strikes)[None, :])[np.ix_(rows, cols)]
    assert err.max() <= 1e-4


def test_dupire_rejects_nonconvex():
    s = synth_call_surface(FlatVol(0.2), TIMES, STRIKES)
    C = s.C.copy()
    C[10, 60] += 0.01
    with pytest.raises(ArbitrageError):
        dupire_localvol(CallSurface(s.times, s.strikes, C))


def test_localvol_grid_validation_and_lookup():
    lv = LocalVolGrid(np.array([0.0, 1.0]), np.array([1.0, 2.0]), np.array([[0.04, 0.04], [0.08, 0.06]]))
    assert lv.at(0.5, 1.0) == pytest.approx(0.06)
    assert lv.at(0.5, 5.0) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        LocalVolGrid(np.array([0.0, 1.0]), np.array([1.0, 2.0]), np.array([[0.04, -1], [0.1, 0.1]]))


# -- simulation ------------------------------------------------------------------


def test_zero_vol_step_only_decays():
    spec = FeatureSpec()
    c = ParticleCloud.initial(10)
    c = ParticleCloud(c.x, c.r1a + 1, c.r1b + 2, c.r2a + 3, c.r2b + 4, c.w)
    out = step_simulate(c, np.zeros(10), 0.1, seed=0, spec=spec)
    np.testing.assert_array_equal(out.x, c.x)
    for name, lam, v in zip(("r1a", "r1b", "r2a", "r2b"), spec.lambdas, (1, 2, 3, 4)):
        np.testing.assert_allclose(getattr(out, name), v * math.exp(-lam * 0.1))


def test_martingale_flat():
    c = ParticleCloud.initial(100_000)
    means = [c.mean()]
    for k in range(50):
        c = step_simulate(c, np.full(c.n, 0.04), 0.02, seed=3, k=k)
        means.append(c.mean())
    se = np.std(c.x) / math.sqrt(c.n)
    assert abs(means[-1] - 1.0) <= 3 * se
    assert np.all(c.x > 0)


def test_additive_flag_differs():
    c = random_cloud(np.random.default_rng(0), 1000)
    a = step_simulate(c, np.full(c.n, 0.04), 0.02, seed=1)
    b = step_simulate(c, np.full(c.n, 0.04), 0.02, seed=1, additive=True)
    np.testing.assert_allclose(b.x - c.x, (a.x - c.x) / c.x)
    # the feature sees the step return, which is ΔX / X in both cases
    np.testing.assert_allclose(b.r1a, a.r1a / c.x)


def test_nonfinite_state():
    c = ParticleCloud.initial(4)
    with pytest.raises(NonFiniteState):
        step_simulate(c, np.full(4, np.inf), 0.02, seed=0)


def test_step_streams_prefix_and_threads(monkeypatch):
    big = step_simulate(ParticleCloud.initial(300_000), np.full(300_000, 0.04), 0.02, seed=5, k=2)
    small = step_simulate(ParticleCloud.initial(1000), np.full(1000, 0.04), 0.02, seed=5, k=2)
    np.testing.assert_array_equal(big.x[:1000], small.x)
    monkeypatch.setenv("CONDREP_THREADS", "3")
    again = step_simulate(ParticleCloud.initial(300_000), np.full(300_000, 0.04), 0.02, seed=5, k=2)
    np.testing.assert_array_equal(again.x, big.x)


# -- binning ---------------------------------------------------------------------


def test_cond_exp_constant_and_tower():
    rng = np.random.default_rng(1)
    c = random_cloud(rng, 5000)
    cuts = quantile_edges(c.x, c.w, 25)
    b = assign_bins(c.x, cuts)
    const = estimate_cond_exp(c, np.full(c.n, 0.7), b)
    np.testing.assert_allclose(const.values[const.occupied], 0.7)
    v = rng.standard_normal(c.n)
    ce = estimate_cond_exp(c, v, b)
    assert abs(ce.mass[ce.occupied] @ ce.values[ce.occupied] - c.w @ v) <= 1e-12


def test_cond_exp_of_x_inside_bins():
    c = random_cloud(np.random.default_rng(2), 20_000)
    cuts = np.linspace(0.5, 2.0, 31)
    b = assign_bins(c.x, cuts)
    ce = estimate_cond_exp(c, c.x, b, cuts.size + 1)
    inner = np.arange(1, cuts.size)
    ok = ce.occupied[inner]
    centre = 0.5 * (cuts[:-1] + cuts[1:])[ok]
    assert np.all(np.abs(ce.values[inner][ok] - centre) <= 0.5 * np.diff(cuts)[0] + 1e-12)
    assert np.isnan(ce.values[~ce.occupied]).all()


def test_quantile_edges_on_atom():
    c = ParticleCloud.initial(100)
    assert quantile_edges(c.x, c.w, 40).size == 0


# -- calibration -----------------------------------------------------------------


def test_perfect_information():
    c = random_cloud(np.random.default_rng(3), 4000)
    m = DisplacedDiffusion(0.2, 0.5)
    cuts = quantile_edges(c.x, c.w, 30)
    labels = assign_bins(c.x, cuts)
    cal = calibrate_step(c, m.locvar(0, c.x), cuts, labels)
    assert cal.feasibility == "exact"
    np.testing.assert_allclose(cal.sigma2, cal.f, rtol=1e-9)
    assert cal.residual <= 1e-9


def test_independent_constant_locvar():
    c = random_cloud(np.random.default_rng(4), 4000)
    cal = calibrate_step(c, np.full(c.n, 0.04), 20, None, independent=50)
    assert cal.feasibility == "exact"
    np.testing.assert_allclose(cal.sigma2, 0.04, rtol=1e-12)


def test_independent_varying_locvar_residual_is_variance():
    c = random_cloud(np.random.default_rng(5), 4000)
    cal = calibrate_step(c, DisplacedDiffusion(0.2, 0.5).locvar(0, c.x), 20, None, independent=50)
    assert cal.feasibility == "least-squares"
    var = float(cal.mu @ (cal.f - cal.mu @ cal.f) ** 2)
    assert var > 0
    assert abs(cal.residual - var) <= 1e-10
    np.testing.assert_allclose(cal.M @ cal.sigma2, cal.mu @ cal.f)


def test_empty_cloud():
    with pytest.raises(EmptyCloud):
        calibrate_step(ParticleCloud.initial(0), np.zeros(0), 5, np.zeros(0, dtype=int))


def test_prior_selects_among_solutions():
    c = random_cloud(np.random.default_rng(6), 3000)
    labels = np.random.default_rng(7).integers(0, 9, c.n)
    cal = calibrate_step(c, np.full(c.n, 0.04), 10, labels, prior=np.full(c.n, 0.04))
    np.testing.assert_allclose(cal.sigma2, 0.04, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), nx=st.integers(2, 12), ny=st.integers(2, 6))
def test_mass_identity_and_refinement(seed, nx, ny):
    rng = np.random.default_rng(seed)
    c = random_cloud(rng, 600)
    lv = DisplacedDiffusion(0.2, 0.5).locvar(0, c.x)
    cuts = quantile_edges(c.x, c.w, nx)
    # labels noisily informative about X, then refined by a second coordinate
    noisy = assign_bins(c.x * np.exp(0.2 * rng.standard_normal(c.n)), quantile_edges(c.x, c.w, ny))
    extra = rng.integers(0, 3, c.n)
    coarse = calibrate_step(c, lv, cuts, noisy)
    fine = calibrate_step(c, lv, cuts, noisy * 3 + extra)
    assert fine.residual <= coarse.residual + 1e-12
    for cal in (coarse, fine):
        assert np.all(cal.sigma2 >= 0)
        if cal.feasibility == "exact":
            assert abs(cal.nu @ cal.sigma2 - cal.mu @ cal.f) <= 1e-9
    # labels that determine the x-bin always fit exactly
    xb = assign_bins(c.x, cuts)
    assert calibrate_step(c, lv, cuts, xb * 10 + extra).residual <= 1e-9


# -- SLV -------------------------------------------------------------------------


def test_slv_phi_one_and_zero_locvar():
    rng = np.random.default_rng(8)
    c = random_cloud(rng, 3000)
    c = ParticleCloud(c.x, c.r1a, c.r1b, c.r2a, c.r2b, c.w, rng.gamma(2.0, 0.5, c.n))
    lv = DisplacedDiffusion(0.2, 0.5).locvar(0, c.x)
    lev = calibrate_slv_step(c, lv, 15, phi=lambda z: np.ones_like(z))
    occ = np.isfinite(lev.lev2)
    np.testing.assert_allclose(lev.lev2[occ], lev.locvar[occ])
    zero = calibrate_slv_step(c, np.zeros(c.n), 15)
    assert np.all(zero.lev2[np.isfinite(zero.lev2)] == 0)


def test_slv_degenerate():
    c = random_cloud(np.random.default_rng(9), 100)
    c = ParticleCloud(c.x, c.r1a, c.r1b, c.r2a, c.r2b, c.w, np.zeros(100))
    with pytest.raises(DegenerateDenominator):
        calibrate_slv_step(c, np.full(100, 0.04), 5)


def test_slv_flat_reprice():
    surf = synth_call_surface(FlatVol(0.2), TIMES[:26], STRIKES)
    rep = run_calibration(CalibrationConfig(surf, particles=40_000, steps=25, h=0.02, xbins=30, mode="slv", seed=11))
    for r in rep.reprice:
        if 0.8 <= r["x"] <= 1.2:
            assert abs(r["model_price"] - r["market_price"]) <= 3 * r["mc_se"]


# -- driver ----------------------------------------------------------------------


def test_zero_steps_empty_report():
    surf = synth_call_surface(FlatVol(0.2), TIMES[:3], STRIKES)
    rep = run_calibration(CalibrationConfig(surf, steps=0))
    assert rep.steps == [] and rep.reprice == []


def test_small_flat_pdv_run():
    surf = synth_call_surface(FlatVol(0.2), TIMES[:11], STRIKES)
    cfg = CalibrationConfig(surf, FeatureSpec(betas=(0.2, 0.0, 0.0)), particles=20_000, steps=10, xbins=20, ybins=(5, 5))
    rep = run_calibration(cfg)
    assert len(rep.steps) == 10
    assert all(s.feasibility == "exact" for s in rep.steps)
    assert all(np.allclose(s.calib.sigma2, 0.04, rtol=1e-8) for s in rep.steps)
    again = run_calibration(cfg)
    assert rep.to_dict() == again.to_dict()


def test_skewed_pdv_run_leaves_residual():
    surf = synth_call_surface(DisplacedDiffusion(0.2, 0.5), TIMES[:11], STRIKES)
    cfg = CalibrationConfig(surf, FeatureSpec(), particles=20_000, steps=10, xbins=20, ybins=(5, 5))
    rep = run_calibration(cfg)
    assert all(s.residual >= 0 for s in rep.steps)
    assert rep.steps[-1].residual > 0
