"""Closed-form reference models for an ideal voltage source behind R-L.

These are the oracles the simulator and the fitter are checked against.
All quantities are pu; angles in rad; frequencies in Hz.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import PerUnitBase, RlImpedance


class SingularImpedanceError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class VoltageStep:
    """Grid voltage jump from ``v1∠delta1`` to ``v2∠delta2`` at ``t_step``."""

    v1: float
    delta1: float
    v2: float
    delta2: float
    t_step: float = 0.0

    def __post_init__(self):
        if not (self.v1 > 0 and self.v2 > 0):
            raise ValueError("step magnitudes must be positive")


@dataclass(frozen=True)
class IdvsConfig:
    v_id: float
    z: RlImpedance
    base: PerUnitBase = field(default_factory=PerUnitBase)

    def __post_init__(self):
        if not self.v_id > 0:
            raise ValueError("v_id must be positive")


def idvs_admittance(cfg: IdvsConfig, f):
    """2x2 dq admittance of a fixed source behind ``cfg.z`` at ``f`` Hz.

    Returns an array of shape ``(2, 2)`` (or ``(n, 2, 2)`` for array ``f``)
    ordered ``[[Ydd, Ydq], [Yqd, Yqq]]`` with ``-I = Y V``.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    r, l = cfg.z.r, cfg.z.l
    if r == 0 and l == 0:
        raise SingularImpedanceError("zero impedance has no admittance")
    a = r + 1j * (f / cfg.base.f1) * l
    den = a * a + l * l
    if np.any(den == 0):
        raise SingularImpedanceError("lossless branch evaluated exactly at its resonance")
    y = np.empty(f.shape + (2, 2), dtype=complex)
    y[..., 0, 0] = a / den
    y[..., 0, 1] = l / den
    y[..., 1, 0] = -l / den
    y[..., 1, 1] = a / den
    return y


def thevenin_yqd(r_th, l_th, f1: float, f_k):
    """q-axis current response to a d-axis voltage perturbation of an R-L Thevenin source."""
    if np.any(np.asarray(l_th) <= 0):
        raise ValueError("l_th must be positive")
    jw = 1j * np.asarray(f_k, dtype=float) / f1
    return -l_th / ((r_th + jw * l_th) ** 2 + l_th ** 2)


def two_bus_steady_state(e: float, grid_v: float, grid_delta: float, z: RlImpedance):
    """P, Q and |I| leaving a source ``e∠0`` towards ``grid_v∠grid_delta`` through ``z``."""
    if z.z1 == 0:
        raise SingularImpedanceError("zero impedance between two voltage sources")
    i = (e - grid_v * np.exp(1j * grid_delta)) / z.z1
    s = e * np.conj(i)
    return float(s.real), float(s.imag), float(abs(i))


class TransientPQ(NamedTuple):
    p: np.ndarray
    q: np.ndarray
    undamped: bool


def idvs_transient_pq(cfg: IdvsConfig, step: VoltageStep, t) -> TransientPQ:
    """Active/reactive power of the source after the grid voltage step.

    Uses ``tau = L/R`` and the impedance angle ``phi = atan(X/R)``; the
    oscillating term rotates at the fundamental. Angles follow this package's
    dq convention (grid phasor ``v∠delta``, ``Q = Im(V conj(I))``), under which
    the textbook expression reads with ``delta`` and the reactive bracket
    sign-reversed.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < step.t_step):
        raise ValueError("transient formula is only valid for t >= t_step")
    z = cfg.z
    zmag = abs(z.z1)
    if zmag == 0:
        raise SingularImpedanceError("zero impedance")
    p_ss, q_ss, _ = two_bus_steady_state(cfg.v_id, step.v2, step.delta2, z)
    tt = t - step.t_step
    w = cfg.base.omega1
    undamped = z.r == 0
    if undamped:
        warnings.warn("r = 0: transient never decays", RuntimeWarning, stacklevel=2)
        decay = np.ones_like(tt)
    else:
        tau = z.l / (z.r * w)
        decay = np.exp(-tt / tau)
    phi = math.atan2(z.l, z.r)
    v1, v2, d1, d2 = step.v1, step.v2, step.delta1, step.delta2
    a = w * tt + phi
    k = cfg.v_id / zmag * decay
    s_half = 2.0 * v2 * math.sin((d1 - d2) / 2.0)
    p = p_ss + k * ((v2 - v1) * np.cos(a - d1) - s_half * np.sin(a - (d1 + d2) / 2.0))
    q = q_ss + k * ((v2 - v1) * np.sin(a - d1) + s_half * np.cos(a - (d1 + d2) / 2.0))
    return TransientPQ(p, q, undamped)


def load_voltage(e: float, z: RlImpedance, p: float, q: float):
    """Upper-branch POI voltage magnitude of a constant-power load ``p + jq`` fed
    from ``e∠0`` through ``z``; ``None`` when no real solution exists."""
    r, x = z.r, z.l
    b = 2.0 * (p * r + q * x) - e * e
    c = (p * p + q * q) * (r * r + x * x)
    disc = b * b - 4.0 * c
    if disc < 0:
        return None
    v2 = (-b + math.sqrt(disc)) / 2.0
    if v2 <= 0:
        return None
    return math.sqrt(v2)


def pv_nose_analytic(e: float, z: RlImpedance, load_power_factor_angle: float, tol: float = 1e-9):
    """Maximum active power of a constant power-factor load and the voltage at it.

    Bisection on the apparent load power with the quadratic solvability test;
    returns ``(p_max, v_nose)``.
    """
    if not z.l > 0:
        raise ValueError("series inductance must be positive")
    cphi, sphi = math.cos(load_power_factor_angle), math.sin(load_power_factor_angle)
    if abs(cphi) < 1e-15:
        cphi = 0.0

    def solvable(s):
        return load_voltage(e, z, s * cphi, s * sphi) is not None

    lo, hi = 0.0, e * e / abs(z.z1)
    while solvable(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise ValueError("no voltage-collapse point found")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if solvable(mid):
            lo = mid
        else:
            hi = mid
    p, q = lo * cphi, lo * sphi
    b = 2.0 * (p * z.r + q * z.l) - e * e
    return p, math.sqrt(max(-b / 2.0, 0.0))
