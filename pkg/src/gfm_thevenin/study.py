"""Validation studies: step-response comparison, the four GFM vs ideal-source
case studies, and P-V (voltage stability) tracing."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analytic import IdvsConfig, load_voltage
from .core import PerUnitBase, RlImpedance, TheveninEquivalent, rl_from_x_over_r
from .emt import (
    DisturbanceEvent,
    EquilibriumError,
    GfmPlantModel,
    IdealisticMode,
    SimConfig,
    SimModel,
    TimeSeries,
    build_droop_gfm,
    build_idvs,
    simulate,
    solve_with_load,
)
from .emt import kernel as K


class SetupError(ValueError):
    """Models handed to a comparison do not share an operating point."""


def poi_operating_point(model: SimModel):
    """``(v_poi, s_export)`` of the model at its stored equilibrium."""
    out = model.outputs(model.x0, model.v_poi)
    v = complex(out[8], out[9])
    i = complex(out[10], out[11])
    return v, v * np.conj(i)


def thevenin_source(z: RlImpedance, v_poi: complex, s_export: complex) -> complex:
    """Internal EMF behind ``z`` that exports ``s_export`` into ``v_poi``."""
    return v_poi + z.z1 * np.conj(s_export / v_poi)


def equivalent_model(equiv: TheveninEquivalent, v_poi: complex, s_export: complex,
                     base: PerUnitBase = PerUnitBase()) -> SimModel:
    """Ideal source behind the fitted impedance, at the given POI operating point."""
    e = thevenin_source(equiv.impedance, v_poi, s_export)
    cfg = IdvsConfig(abs(e), equiv.impedance, base)
    return build_idvs(cfg, grid=v_poi, e_angle=math.atan2(e.imag, e.real), name="thevenin_equivalent")


# ---------------------------------------------------------------- step compare

@dataclass
class StepStudyResult:
    traces_full: TimeSeries
    traces_equiv: TimeSeries
    rms_error_q: float
    rms_error_p: float
    window: tuple
    rms_abs_q: float = 0.0

    def summary(self) -> dict:
        return {"rms_error_q": self.rms_error_q, "rms_error_p": self.rms_error_p,
                "window_s": list(self.window)}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.traces_full.to_csv(out / "step_full.csv")
        self.traces_equiv.to_csv(out / "step_equiv.csv")
        (out / "step_summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def _normalized_rms(ref, other):
    span = float(np.ptp(ref))
    err = float(np.sqrt(np.mean((ref - other) ** 2)))
    if span == 0:
        return 0.0 if err == 0 else math.inf
    return err / span


def step_compare(full: SimModel, equiv, event: DisturbanceEvent = DisturbanceEvent(0.01, dv=-0.05),
                 window: float = 0.2, cfg: SimConfig | None = None, op_tol: float = 1e-3) -> StepStudyResult:
    """Q (and P) at the POI of ``full`` and its equivalent under the same grid event.

    ``equiv`` may be a :class:`TheveninEquivalent` (an ideal source is built at
    the full model's POI operating point) or an already-built ``SimModel``.
    The RMS error over ``[event.t, event.t + window]`` is normalised by the
    full model's peak-to-trough excursion in that window.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    v0, s0 = poi_operating_point(full)
    eq_model = equiv if isinstance(equiv, SimModel) else equivalent_model(equiv, v0, s0, full.base)
    v1, s1 = poi_operating_point(eq_model)
    mismatch = max(abs(v1 - v0), abs(s1 - s0))
    if mismatch > op_tol:
        raise SetupError(f"pre-event operating points differ by {mismatch:.3e} pu")
    cfg = cfg or SimConfig()
    cfg = replace(cfg, t_end=event.t + window)
    tf = simulate(full, [event], cfg)
    te = simulate(eq_model, [event], cfg)
    sel = (tf.t >= event.t - 1e-12) & (tf.t <= event.t + window + 1e-12)
    qf, qe = tf.q("POI")[sel], te.q("POI")[sel]
    pf, pe = tf.p("POI")[sel], te.p("POI")[sel]
    return StepStudyResult(tf, te, _normalized_rms(qf, qe), _normalized_rms(pf, pe),
                           (event.t, event.t + window),
                           rms_abs_q=float(np.sqrt(np.mean((qf - qe) ** 2))))


# ---------------------------------------------------------------- case studies

CASE_EVENT = dict(dv=-0.1, ddelta=math.radians(-5.0))
Z_GFM_RANGE = (0.125, 0.333)
Z_FILTER_RANGE = (0.075, 0.1875)


@dataclass(frozen=True)
class PeakMetrics:
    p: float
    q: float
    i: float
    t_p: float
    t_q: float
    t_i: float

    def as_dict(self) -> dict:
        return {"peak_p": self.p, "peak_q": self.q, "peak_i": self.i,
                "time_to_peak_p": self.t_p, "time_to_peak_q": self.t_q, "time_to_peak_i": self.t_i}


@dataclass
class CaseVariant:
    label: str
    device: str
    point: str
    z_id: float | None
    z_gfm: float | None
    z_filter: float | None
    metrics: PeakMetrics
    traces: TimeSeries | None = None

    def as_dict(self) -> dict:
        d = {"label": self.label, "device": self.device, "point": self.point,
             "z_id": self.z_id, "z_gfm": self.z_gfm, "z_filter": self.z_filter}
        d.update(self.metrics.as_dict())
        return d


@dataclass
class CaseReport:
    case: str
    variants: list
    event: dict

    def by_device(self, device: str) -> list:
        return [v for v in self.variants if v.device == device]

    def to_dict(self) -> dict:
        return {"case": self.case, "event": self.event, "variants": [v.as_dict() for v in self.variants]}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"case_{self.case}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        for v in self.variants:
            if v.traces is not None:
                v.traces.to_csv(out / f"case_{self.case}_{v.label}.csv")


def first_peak_time(t, a, rel_floor: float = 0.01) -> float:
    """Time of the first local maximum of ``a`` above ``rel_floor`` of its max."""
    a = np.asarray(a)
    floor = rel_floor * a.max()
    for k in range(1, len(a) - 1):
        if a[k] > floor and a[k] >= a[k - 1] and a[k] > a[k + 1]:
            return float(t[k])
    return float(t[int(np.argmax(a))])


def peak_metrics(ts: TimeSeries, point: str, t_event: float) -> PeakMetrics:
    k0 = int(np.searchsorted(ts.t, t_event - 1e-12))
    t = ts.t[k0:] - t_event
    pre = max(k0 - 1, 0)
    series = {}
    for name, sig in (("p", ts.p(point)), ("q", ts.q(point)), ("i", ts.i_mag(point))):
        series[name] = np.abs(sig[k0:] - sig[pre])
    return PeakMetrics(
        float(series["p"].max()), float(series["q"].max()), float(series["i"].max()),
        first_peak_time(t, series["p"]), first_peak_time(t, series["q"]), first_peak_time(t, series["i"]),
    )


def _check_range(name, values, bounds):
    lo, hi = bounds
    for v in values:
        if not lo - 1e-12 <= v <= hi + 1e-12:
            raise ValueError(f"{name} = {v} outside [{lo}, {hi}]")


def _no_load_plant(plant: GfmPlantModel, z_gfm: float, z_filter: float, x_over_r: float) -> GfmPlantModel:
    p = replace(plant, z_coupling_plus_grid=rl_from_x_over_r(z_gfm, x_over_r), p_ref=0.0, q_ref=0.0, v_ref=1.0)
    return p.with_filter(z_filter)


def case_study(case: str, z_gfm=None, z_filter=None, plant: GfmPlantModel = GfmPlantModel(),
               x_over_r: float = 10.0, gain_factor: float = 5.0, duration: float = 0.1,
               t_event: float = 0.005, cfg: SimConfig | None = None, keep_traces: bool = False) -> CaseReport:
    """Ideal source vs GFM peak responses to ``dV = -0.1 pu, d(delta) = -5 deg``.

    Every device starts unloaded with its internal node (VCP for the GFM) at
    ``1∠0``. GFM quantities are measured at VCP, ideal-source quantities at
    its internal EMF.

    * ``I``   idealistic GFM at ``z_gfm`` vs ideal source at ``z_gfm`` and at ``z_gfm + z_filter``
    * ``II``  idealistic GFM and ideal source at ``z_gfm``, swept
    * ``III`` idealistic GFM with ``z_filter`` swept, ideal source at ``z_gfm``
    * ``IV``  as III with the realistic (droop) GFM
    """
    case = case.upper()
    if case not in ("I", "II", "III", "IV"):
        raise ValueError(f"unknown case {case!r}")
    cfg = replace(cfg or SimConfig(), t_end=t_event + duration)
    event = DisturbanceEvent(t_event, **CASE_EVENT)
    idealistic = IdealisticMode(case != "IV", gain_factor)
    default_zf = plant.filter_l

    if case == "I":
        z_gfms = [0.2 if z_gfm is None else float(z_gfm)]
        z_filters = [default_zf if z_filter is None else float(z_filter)]
    elif case == "II":
        z_gfms = list(np.linspace(*Z_GFM_RANGE, 5)) if z_gfm is None else list(np.atleast_1d(z_gfm))
        z_filters = [default_zf if z_filter is None else float(z_filter)]
        _check_range("z_gfm", z_gfms, Z_GFM_RANGE)
    else:
        z_gfms = [(0.2 if case == "III" else 0.33) if z_gfm is None else float(z_gfm)]
        z_filters = list(np.linspace(*Z_FILTER_RANGE, 4)) if z_filter is None else list(np.atleast_1d(z_filter))
        _check_range("z_filter", z_filters, Z_FILTER_RANGE)
    for v in z_gfms + z_filters:
        if not v > 0:
            raise ValueError("impedances must be positive")

    base = PerUnitBase(f1=plant.f1)
    variants = []

    def run_idvs(z_id, label, zg, zf):
        m = build_idvs(IdvsConfig(1.0, rl_from_x_over_r(z_id, x_over_r), base), name=label)
        ts = simulate(m, [event], cfg)
        variants.append(CaseVariant(label, "idvs", "ST", z_id, zg, zf,
                                    peak_metrics(ts, "ST", t_event), ts if keep_traces else None))

    def run_gfm(zg, zf, label):
        m = build_droop_gfm(_no_load_plant(plant, zg, zf, x_over_r), idealistic, base)
        ts = simulate(m, [event], cfg)
        variants.append(CaseVariant(label, "gfm", "VCP", None, zg, zf,
                                    peak_metrics(ts, "VCP", t_event), ts if keep_traces else None))

    for zg in z_gfms:
        for zf in z_filters:
            run_gfm(zg, zf, f"gfm_zgfm{zg:.4f}_zf{zf:.4f}")
        run_idvs(zg, f"idvs_z{zg:.4f}", zg, None)
        if case == "I":
            zf = z_filters[0]
            run_idvs(zg + zf, f"idvs_z{zg + zf:.4f}", zg, zf)

    ev = {"t": t_event, "dv": CASE_EVENT["dv"], "ddelta_deg": -5.0,
          "idealistic": idealistic.enabled, "gain_factor": gain_factor if idealistic.enabled else None}
    return CaseReport(case, variants, ev)


# ---------------------------------------------------------------- P-V tracing

@dataclass
class PvCurve:
    points: list
    p_max: float
    v_at_pmax: float
    terminated_by: str
    meta: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        lines = ["p_load_pu,v_poi_pu"] + [f"{p!r},{v!r}" for p, v in self.points]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> dict:
        return {"p_max": self.p_max, "v_at_pmax": self.v_at_pmax,
                "terminated_by": self.terminated_by, "n_points": len(self.points), **self.meta}


def pv_trace(model, base_load=(0.125, 0.0625), step=(0.05, 0.025), max_steps: int = 200,
             refinements: int = 12, source_voltage: float | None = None,
             collapse_voltage: float = 0.3, max_jump: float = 0.1) -> PvCurve:
    """Constant-power load ramped at the POI of an islanded device.

    ``model`` is a ``SimModel`` (steady state solved as a DAE with the POI
    voltage algebraic) or a ``TheveninEquivalent`` with ``source_voltage``
    (closed-form upper-branch voltage). Each failed level halves the step and
    retries from the last converged point, up to ``refinements`` times.
    """
    p0, q0 = base_load
    dp, dq = step
    if not (dp > 0 or dq > 0):
        raise ValueError("load step must increase the load")

    if isinstance(model, TheveninEquivalent):
        if source_voltage is None or not source_voltage > 0:
            raise ValueError("a Thevenin equivalent needs a positive source_voltage")
        z = model.impedance

        def solve(s, state):
            v = load_voltage(source_voltage, z, s.real, s.imag)
            if v is None:
                raise EquilibriumError("no real load-flow solution")
            return v, None
        state = None
    elif isinstance(model, SimModel):
        def solve(s, state):
            x, vg = state if state else (None, None)
            sol = solve_with_load(model, s, x, vg)
            return abs(sol.v_poi), (sol.x, sol.v_poi)
        state = None
    else:
        raise TypeError("model must be a SimModel or a TheveninEquivalent")

    try:
        v, state = solve(complex(p0, q0), state)
    except EquilibriumError as exc:
        raise ValueError(f"base load {p0}+j{q0} is not solvable: {exc}") from exc
    if v < collapse_voltage:
        raise ValueError(f"base load collapses the voltage to {v:.3f} pu")

    points = [(float(p0), float(v))]
    scale = 1.0
    halvings = 0
    n = 0
    reason = "schedule-end"
    p, q = p0, q0
    while n < max_steps:
        pn, qn = p + scale * dp, q + scale * dq
        try:
            vn, st = solve(complex(pn, qn), state)
            ok = vn >= collapse_voltage and abs(vn - points[-1][1]) <= max_jump
            why = "collapse" if vn < collapse_voltage else "non-convergence"
        except EquilibriumError:
            ok, why = False, "non-convergence"
        if ok:
            p, q, state = pn, qn, st
            points.append((float(pn), float(vn)))
            n += 1
            continue
        if halvings >= refinements:
            reason = why
            break
        halvings += 1
        scale *= 0.5
    k = int(np.argmax([pt[0] for pt in points]))
    return PvCurve(points, points[k][0], points[k][1], reason,
                   {"refinements_used": halvings, "final_step_p": scale * dp})
