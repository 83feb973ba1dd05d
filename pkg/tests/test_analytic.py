import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfm_thevenin.analytic import (
    IdvsConfig,
    SingularImpedanceError,
    VoltageStep,
    idvs_admittance,
    idvs_transient_pq,
    load_voltage,
    pv_nose_analytic,
    thevenin_yqd,
    two_bus_steady_state,
)
from gfm_thevenin.core import PerUnitBase, RlImpedance, rl_from_x_over_r

IDVS_048 = IdvsConfig(1.0, RlImpedance(0.048, 0.48))


def test_dc_gain_and_phase():
    y = idvs_admittance(IDVS_048, 0.0)
    # oracle: l / (r^2 + l^2)
    assert abs(y[1, 0]) == pytest.approx(0.48 / (0.048**2 + 0.48**2), rel=1e-12)
    assert abs(y[1, 0]) == pytest.approx(2.0627, abs=1e-4)
    assert math.degrees(np.angle(y[1, 0])) % 360 == pytest.approx(180.0, abs=1e-9)


def test_lossless_dc_gain():
    y = idvs_admittance(IdvsConfig(1.0, RlImpedance(0.0, 1.0)), 0.0)
    assert y[1, 0] == pytest.approx(-1.0 + 0j)


def test_gain_at_fundamental():
    # at f = f1 the denominator is r (r + 2 j l): |Y_qd| = l / (r |r + 2 j l|)
    y = idvs_admittance(IDVS_048, 60.0)[1, 0]
    assert abs(y) == pytest.approx(0.48 / (0.048 * abs(0.048 + 0.96j)), rel=1e-12)
    assert abs(y) == pytest.approx(10.404, abs=1e-3)


def test_singular_impedance():
    with pytest.raises(SingularImpedanceError):
        idvs_admittance(IdvsConfig(1.0, RlImpedance(0.0, 0.0)), 10.0)
    with pytest.raises(SingularImpedanceError):
        idvs_admittance(IdvsConfig(1.0, RlImpedance(0.0, 0.5)), 60.0)
    with pytest.raises(ValueError):
        idvs_admittance(IDVS_048, -1.0)


def test_admittance_matrix_structure():
    y = idvs_admittance(IDVS_048, np.array([5.0, 20.0]))
    assert y.shape == (2, 2, 2)
    np.testing.assert_allclose(y[:, 0, 0], y[:, 1, 1])
    np.testing.assert_allclose(y[:, 0, 1], -y[:, 1, 0])


@given(st.floats(0.0, 0.5), st.floats(0.01, 1.0), st.floats(5.0, 100.0))
def test_thevenin_entry_matches_matrix(r, l, f):
    cfg = IdvsConfig(1.0, RlImpedance(r, l))
    ref = idvs_admittance(cfg, f)[1, 0]
    assert thevenin_yqd(r, l, 60.0, f) == pytest.approx(ref, rel=1e-12)


def test_thevenin_at_sharp_resonance():
    assert abs(thevenin_yqd(0.0024, 0.266, 60.0, 60.0)) == pytest.approx(1 / (2 * 0.0024), rel=2e-4)


@given(st.floats(0.0, 0.5), st.floats(0.01, 1.0))
def test_low_frequency_phase_is_180(r, l):
    y = thevenin_yqd(r, l, 60.0, 1e-9)
    assert math.degrees(np.angle(y)) % 360 == pytest.approx(180.0, abs=1e-6)


@given(st.floats(0.001, 0.3), st.floats(0.1, 1.0))
@settings(max_examples=30)
def test_peak_at_damped_natural_frequency(r_over_l, l):
    r = r_over_l * l
    f = np.linspace(0.5, 119.5, 23801)
    mag = np.abs(thevenin_yqd(r, l, 60.0, f))
    expected = 60.0 * math.sqrt(1 - r_over_l**2)
    assert abs(f[np.argmax(mag)] - expected) <= 0.01


def test_two_bus_steady_state():
    assert two_bus_steady_state(1.0, 1.0, 0.0, RlImpedance(0.01, 0.3)) == (0.0, 0.0, 0.0)
    p, _, _ = two_bus_steady_state(1.0, 1.0, -0.1, RlImpedance(0.0, 0.5))
    assert p == pytest.approx(math.sin(0.1) / 0.5, rel=1e-12)
    p, q, _ = two_bus_steady_state(1.0, 0.95, 0.0, RlImpedance(0.0, 0.48))
    assert p == pytest.approx(0.0, abs=1e-15)
    assert q == pytest.approx(0.05 / 0.48, rel=1e-12)
    with pytest.raises(SingularImpedanceError):
        two_bus_steady_state(1.0, 1.0, 0.0, RlImpedance(0.0, 0.0))


def test_transient_zero_step_is_steady():
    step = VoltageStep(1.0, 0.0, 1.0, 0.0)
    t = np.linspace(0, 0.1, 11)
    res = idvs_transient_pq(IDVS_048, step, t)
    np.testing.assert_allclose(res.p, 0.0, atol=1e-15)
    np.testing.assert_allclose(res.q, 0.0, atol=1e-15)


def test_transient_decays_to_steady_state():
    cfg = IdvsConfig(1.0, rl_from_x_over_r(0.33, 10.0))
    step = VoltageStep(1.0, 0.0, 0.9, math.radians(-5))
    tau = 0.33 / (0.033 * cfg.base.omega1)
    res = idvs_transient_pq(cfg, step, [100 * tau])
    p_ss, q_ss, _ = two_bus_steady_state(1.0, 0.9, math.radians(-5), cfg.z)
    assert res.p[0] == pytest.approx(p_ss, abs=1e-6)
    assert res.q[0] == pytest.approx(q_ss, abs=1e-6)


def test_transient_starts_from_pre_step_power():
    # continuity of the source current: power at t = t_step equals the pre-step power flow
    cfg = IdvsConfig(1.0, rl_from_x_over_r(0.33, 10.0))
    res = idvs_transient_pq(cfg, VoltageStep(1.0, 0.0, 0.9, math.radians(-5)), [0.0])
    assert res.p[0] == pytest.approx(0.0, abs=1e-12)
    assert res.q[0] == pytest.approx(0.0, abs=1e-12)


def test_transient_undamped_warns():
    cfg = IdvsConfig(1.0, RlImpedance(0.0, 0.5))
    with pytest.warns(RuntimeWarning):
        res = idvs_transient_pq(cfg, VoltageStep(1.0, 0.0, 0.9, 0.0), [0.0, 1.0])
    assert res.undamped


def test_transient_rejects_times_before_step():
    with pytest.raises(ValueError):
        idvs_transient_pq(IDVS_048, VoltageStep(1.0, 0.0, 0.9, 0.0, t_step=0.01), [0.0])


def test_load_voltage_lossless():
    # E = 1, X = 0.5, unity pf: V^4 - V^2 + 0.25 P^2 = 0
    v = load_voltage(1.0, RlImpedance(0.0, 0.5), 0.6, 0.0)
    assert v == pytest.approx(math.sqrt((1 + math.sqrt(1 - 0.36)) / 2), rel=1e-12)
    assert load_voltage(1.0, RlImpedance(0.0, 0.5), 1.01, 0.0) is None


def test_nose_lossless_unity_pf():
    p, v = pv_nose_analytic(1.0, RlImpedance(0.0, 0.5), 0.0)
    assert p == pytest.approx(1.0, abs=1e-8)
    assert v == pytest.approx(1 / math.sqrt(2), abs=1e-6)


def test_nose_lagging_load():
    phi = math.atan(0.5)
    p, v = pv_nose_analytic(1.0, RlImpedance(0.0, 0.48), phi)
    # closed form (E^2 / 2X) cos(phi) / (1 + sin(phi)), and V^2 = E^2 / (2 (1 + sin(phi)))
    assert p == pytest.approx(1 / 0.96 * math.cos(phi) / (1 + math.sin(phi)), abs=1e-8)
    assert p == pytest.approx(0.6438, abs=1e-4)
    assert v == pytest.approx(math.sqrt(1 / (2 * (1 + math.sin(phi)))), abs=1e-6)
    assert v == pytest.approx(0.58779, abs=1e-5)


def test_nose_pure_reactive_load():
    p, _ = pv_nose_analytic(1.0, RlImpedance(0.0, 0.48), math.pi / 2)
    assert p == 0.0


def test_nose_decreases_with_reactance():
    xs = np.linspace(0.25, 0.5, 11)
    p = [pv_nose_analytic(1.0, rl_from_x_over_r(x, 10.0), 0.0)[0] for x in xs]
    assert all(a > b for a, b in zip(p, p[1:]))
