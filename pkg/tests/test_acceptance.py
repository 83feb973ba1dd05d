"""End-to-end acceptance checks; each records one PASS/FAIL line in the terminal summary."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gfm_thevenin.analytic import IdvsConfig, VoltageStep, idvs_transient_pq, pv_nose_analytic, thevenin_yqd
from gfm_thevenin.core import AdmittanceSpectrum, PerUnitBase, RlImpedance, rl_from_x_over_r, spectrum_resonance
from gfm_thevenin.emt import (
    POINTS,
    DisturbanceEvent,
    GfmPlantModel,
    SimConfig,
    build_classical_machine,
    build_droop_gfm,
    build_idvs,
    simulate,
)
from gfm_thevenin.fit import check_compliance, fit
from gfm_thevenin.scan import ScanConfig, single_bin_dft, sweep
from gfm_thevenin.study import case_study, poi_operating_point, pv_trace, step_compare, thevenin_source

from conftest import WORKERS, record_acceptance


def check(criterion, ok, detail):
    record_acceptance(criterion, bool(ok), detail)
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def a2_run():
    m = build_idvs(IdvsConfig(1.0, rl_from_x_over_r(0.48, 10.0)))
    t0 = time.perf_counter()
    spectrum = sweep(m, ScanConfig(parallel=1))
    return spectrum, time.perf_counter() - t0


@pytest.fixture(scope="module")
def gfm_fit(gfm_spectrum):
    return fit(gfm_spectrum)


def test_a1_transient_formula_matches_simulation():
    cfg = IdvsConfig(1.0, rl_from_x_over_r(0.33, 10.0), PerUnitBase(f1=60.0))
    # one-off JIT compilation (cached on disk afterwards) is kept out of the timed run
    t0 = time.perf_counter()
    simulate(build_idvs(cfg), [], SimConfig(t_end=1e-3))
    compile_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    t_ev = 0.01
    ts = simulate(build_idvs(cfg), [DisturbanceEvent(t_ev, -0.1, math.radians(-5.0))], SimConfig(t_end=t_ev + 0.1))
    k = ts.t >= t_ev - 1e-12
    ref = idvs_transient_pq(cfg, VoltageStep(1.0, 0.0, 0.9, math.radians(-5.0), t_ev), ts.t[k])
    errs = {}
    for name, sim, an in (("P", ts.p("ST")[k], ref.p), ("Q", ts.q("ST")[k], ref.q)):
        errs[name] = float(np.sqrt(np.mean((sim - an) ** 2)) / np.ptp(an))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= 0.01 and elapsed < 5.0
    check("A1", ok, f"rms/range P {errs['P']:.2e} Q {errs['Q']:.2e} (<= 1e-2), {elapsed:.2f} s (< 5 s), "
                    f"warm-up {compile_s:.2f} s")


def test_a2_ideal_source_scan(a2_run):
    spectrum, elapsed = a2_run
    y = spectrum.entry("qd")
    ref = thevenin_yqd(0.048, 0.48, 60.0, spectrum.frequencies)
    mag = float(np.max(np.abs(np.abs(y) / np.abs(ref) - 1)))
    ph = float(np.max(np.abs(np.degrees(np.angle(y / ref)))))
    ok = mag <= 5e-3 and ph <= 1.0 and elapsed < 120.0
    check("A2", ok, f"max |Y_qd| err {mag:.2e} (<= 5e-3), phase {ph:.3f} deg (<= 1), "
                    f"{len(y)} points serial {elapsed:.1f} s (< 120 s)")


def test_a3_exact_fit_recovery(a2_run):
    eq = fit(a2_run[0])
    rep = check_compliance(eq, "HV", f1=60.0)
    ok = (abs(eq.r_eff - 0.048) <= 1e-3 and abs(eq.l_eff - 0.48) <= 5e-3 and eq.rms_error < 1e-3
          and rep.passed)
    check("A3", ok, f"r {eq.r_eff:.5f} x {eq.l_eff:.5f} rms {eq.rms_error:.1e} HV {'pass' if rep.passed else 'fail'}")


def test_a4_machine_round_trip():
    spectrum = sweep(build_classical_machine(1.0, 0.0025, 0.25), ScanConfig(parallel=WORKERS))
    eq = fit(spectrum)
    er, ex = abs(eq.r_eff / 0.0025 - 1), abs(eq.l_eff / 0.25 - 1)
    check("A4", er <= 0.01 and ex <= 0.01,
          f"r_a {eq.r_eff:.6f} ({er:.2%}) x'' {eq.l_eff:.6f} ({ex:.2%}), both <= 1%")


def test_a5_default_gfm_fit(gfm_spectrum, gfm_fit):
    eq = gfm_fit
    rep = check_compliance(eq, "HV", f1=60.0)
    lf_phase = math.degrees(np.angle(gfm_spectrum.entry("qd")[0])) % 360
    ok = rep.in_range and eq.resonance_freq < 60.0 and abs(lf_phase - 180) <= 15
    check("A5", ok, f"x_eff {eq.l_eff:.4f} in HV [0.40, 0.50]: {rep.in_range}, resonance {eq.resonance_freq:.2f} Hz, "
                    f"LF phase {lf_phase:.1f} deg (r {eq.r_eff:.4f}, rms {eq.rms_error:.3f})")


def test_a6_voltage_gain_trend(gfm_fit):
    gains = [(11.6, 5.2), (5.8, 2.6), (2.32, 1.04), (1.16, 0.52)]
    default = GfmPlantModel()
    fits = []
    for kiv, kpv in gains:
        if (kiv, kpv) == (default.kiv, default.kpv):
            fits.append(gfm_fit)
            continue
        fits.append(fit(sweep(build_droop_gfm(default.with_voltage_gains(kiv, kpv)), ScanConfig(parallel=WORKERS))))
    fres = [e.resonance_freq for e in fits]
    r = [e.r_eff for e in fits]
    x = [e.l_eff for e in fits]
    x_var = (max(x) - min(x)) / max(x)
    ok = (all(a > b for a, b in zip(fres, fres[1:])) and all(a <= b for a, b in zip(r, r[1:])) and x_var < 0.10)
    check("A6", ok, "resonance " + ", ".join(f"{f:.2f}" for f in fres) + " Hz; r_eff "
          + ", ".join(f"{v:.4f}" for v in r) + f"; x_eff spread {x_var:.1%} (< 10%)")


def test_a7_q_step_equivalence(gfm_default, gfm_fit):
    v, s = poi_operating_point(gfm_default)
    res = step_compare(gfm_default, gfm_fit, DisturbanceEvent(0.01, dv=-0.05), window=0.2)
    op_ok = abs(s.real - 0.4) < 1e-6 and abs(s.imag + 0.05) < 1e-6
    check("A7", op_ok and res.rms_error_q <= 0.05,
          f"normalized rms Q {res.rms_error_q:.2%} (<= 5%), P {res.rms_error_p:.2%}; "
          f"pre-event S {s.real:.3f}{s.imag:+.3f}j")


def test_a8_pv_equivalence(gfm_default, gfm_fit):
    full = pv_trace(gfm_default)
    v, s = poi_operating_point(gfm_default)
    e = abs(thevenin_source(gfm_fit.impedance, v, s))
    eq = pv_trace(gfm_fit, source_voltage=e)
    dp = abs(full.p_max - eq.p_max) / full.p_max
    dv = abs(full.v_at_pmax - eq.v_at_pmax)
    check("A8", dp <= 0.05 and dv <= 0.03,
          f"p_max {full.p_max:.4f} vs {eq.p_max:.4f} ({dp:.2%} <= 5%), "
          f"nose {full.v_at_pmax:.4f} vs {eq.v_at_pmax:.4f} (diff {dv:.4f} <= 0.03)")


def test_a9_analytic_nose():
    t0 = time.perf_counter()
    z = RlImpedance(0.0, 0.5)
    curve = pv_trace(build_idvs(IdvsConfig(1.0, z)), base_load=(0.125, 0.0), step=(0.05, 0.0))
    elapsed = time.perf_counter() - t0
    p_an, v_an = pv_nose_analytic(1.0, z, 0.0)
    ok = (abs(curve.p_max - 1.0) <= 0.01 and abs(curve.v_at_pmax - 0.707) <= 0.01
          and abs(curve.p_max - p_an) <= 0.01 and abs(curve.v_at_pmax - v_an) <= 0.01 and elapsed < 30)
    check("A9", ok, f"p_max {curve.p_max:.4f} (analytic {p_an:.4f}), v_nose {curve.v_at_pmax:.4f} "
                    f"(analytic {v_an:.4f}), {elapsed:.2f} s")


def _spread(values):
    values = np.asarray(values, dtype=float)
    return float(np.ptp(values) / np.max(np.abs(values)))


def test_a10_case_study_properties():
    one = case_study("I")
    gfm, idvs_z, idvs_zf = one.variants[0].metrics, one.variants[1].metrics, one.variants[2].metrics
    fields = ("p", "q", "i")
    match = {f: abs(getattr(gfm, f) / getattr(idvs_z, f) - 1) for f in fields}
    lower = all(getattr(idvs_zf, f) < getattr(idvs_z, f) for f in fields)
    spreads = {}
    for case in ("III", "IV"):
        ms = [v.metrics for v in case_study(case).by_device("gfm")]
        spreads[case] = max(_spread([getattr(m, f) for m in ms]) for f in ("p", "q", "i", "t_p", "t_q", "t_i"))
    ok = max(match.values()) <= 0.10 and lower and max(spreads.values()) < 0.05
    check("A10", ok, "case I GFM vs IDVS(Z_GFM) " + ", ".join(f"{f} {v:.1%}" for f, v in match.items())
          + f"; IDVS(Z_GFM+Z_F) lower: {lower}; III spread {spreads['III']:.1%}, IV spread {spreads['IV']:.1%}")


def _dt_convergence(model, event):
    coarse = simulate(model, [event], SimConfig(dt=20e-6, t_end=0.1))
    fine = simulate(model, [event], SimConfig(dt=10e-6, t_end=0.1, record_decimation=2))
    worst = 0.0
    for pt in POINTS:
        for sig in ("p", "q", "i_mag"):
            a, b = getattr(coarse, sig)(pt), getattr(fine, sig)(pt)
            span = np.ptp(a)
            if span > 1e-9:
                worst = max(worst, float(np.sqrt(np.mean((a - b) ** 2)) / span))
    return worst


def test_a11_property_suites(gfm_default, gfm_spectrum, gfm_fit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20261016)
    dft_err = 0.0
    for _ in range(200):
        f = float(rng.uniform(5.0, 100.0))
        dt = ScanConfig().step_for(f)
        n = int(round(int(rng.integers(10, 20)) / (f * dt)))
        a, th = float(rng.uniform(1e-3, 1.0)), float(rng.uniform(-math.pi, math.pi))
        x = a * np.cos(2 * math.pi * f * dt * np.arange(n) + th) + float(rng.normal())
        dft_err = max(dft_err, abs(single_bin_dft(x, dt, f) - a * np.exp(1j * th)))

    coarse = ScanConfig(n_points=8, parallel=WORKERS)
    big = sweep(gfm_default, coarse)
    small = sweep(gfm_default, replace(coarse, amplitude=0.005))
    amp_err = float(np.max(np.abs(small.entry("qd") / big.entry("qd") - 1)))

    perm = np.random.default_rng(7).permutation(len(gfm_spectrum.points))
    shuffled = AdmittanceSpectrum.from_unsorted(gfm_spectrum.base, [gfm_spectrum.points[k] for k in perm])
    again = fit(shuffled)
    order_ok = (again.r_eff, again.l_eff, again.rms_error) == (gfm_fit.r_eff, gfm_fit.l_eff, gfm_fit.rms_error)

    repeat = sweep(gfm_default, coarse)
    det_ok = repeat.to_csv() == big.to_csv()
    ev = DisturbanceEvent(0.01, -0.1, math.radians(-5.0))
    det_ok = det_ok and simulate(gfm_default, [ev]).to_csv() == simulate(gfm_default, [ev]).to_csv()

    conv = {
        "idvs": _dt_convergence(build_idvs(IdvsConfig(1.0, rl_from_x_over_r(0.33, 10.0))), ev),
        "gfm": _dt_convergence(gfm_default, ev),
    }
    elapsed = time.perf_counter() - t0
    ok = dft_err <= 1e-10 and amp_err <= 1e-3 and order_ok and det_ok and max(conv.values()) < 1e-3 and elapsed < 120
    check("A11", ok, f"DFT {dft_err:.1e}, amplitude {amp_err:.1e}, order-invariant {order_ok}, "
                     f"bit-identical {det_ok}, dt convergence idvs {conv['idvs']:.1e} gfm {conv['gfm']:.1e}, "
                     f"{elapsed:.1f} s")
