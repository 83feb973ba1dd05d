"""Small-signal dq admittance measurement by sinusoidal voltage injection.

Each frequency is one simulation: the stiff grid source at the POI gets a
cosine on the d (or q) axis, the POI voltage and current are recorded and the
response phasors are pulled out with a single-bin DFT over an integer number
of periods. Responses are normalised by the *measured* voltage perturbation.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import AdmittancePoint, AdmittanceSpectrum, PerUnitBase
from .emt import Perturbation, SimConfig, SimModel, SimulationDiverged, TimeSeries, simulate
from .emt.models import UnstableModelError

log = logging.getLogger(__name__)


class ScanError(RuntimeError):
    pass


class WindowError(ValueError):
    """DFT window does not span an integer number of periods."""


@dataclass(frozen=True)
class ScanConfig:
    f_min: float = 5.0
    f_max: float = 100.0
    n_points: int = 30
    spacing: str = "log"
    amplitude: float = 0.01
    settle_cycles: int = 10
    measure_periods: int = 10
    fundamental_guard: float = 1.0
    axes: tuple = ("d",)
    dt: float = 20e-6
    integrator: str = "trapezoidal"
    parallel: int = 1
    drift_tol: float = 1e-3
    settle_time_constants: float = 10.0
    max_settle_s: float = 2.0

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError("scan.f_min/f_max: need 0 < f_min < f_max")
        if self.n_points < 2:
            raise ValueError(f"scan.n_points: need at least 2 points, got {self.n_points}")
        if self.spacing not in ("log", "linear"):
            raise ValueError("scan.spacing: must be 'log' or 'linear'")
        if not 0 < self.amplitude <= 0.05:
            raise ValueError("scan.amplitude: must be in (0, 0.05] pu")
        if self.measure_periods < 5:
            raise ValueError("scan.measure_periods: must be >= 5")
        if self.settle_cycles < 0:
            raise ValueError("scan.settle_cycles: must be >= 0")
        if not set(self.axes) <= {"d", "q"} or "d" not in self.axes:
            raise ValueError("scan.axes: must contain 'd' and optionally 'q'")
        object.__setattr__(self, "axes", tuple(self.axes))

    def grid(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.f_min, self.f_max, self.n_points)
        return np.linspace(self.f_min, self.f_max, self.n_points)

    def step_for(self, f_k: float) -> float:
        """Largest step <= ``dt`` giving an integer number of samples per period."""
        return 1.0 / (f_k * math.ceil(1.0 / (f_k * self.dt) - 1e-9))

    def window_samples(self, f_k: float) -> int:
        return int(round(self.measure_periods / (f_k * self.step_for(f_k))))


@dataclass(frozen=True)
class RawResponse:
    f: float
    injected_axis: str
    v_response: complex
    i_d_response: complex
    i_q_response: complex
    warnings: tuple = ()

    def __post_init__(self):
        if not abs(self.v_response) > 0:
            raise ValueError("zero voltage response")

    @property
    def y_column(self):
        """``(Y_d*, Y_q*)`` for the injected axis under ``-I = Y V``."""
        return -self.i_d_response / self.v_response, -self.i_q_response / self.v_response


def single_bin_dft(samples, dt: float, f_k: float, t0: float = 0.0) -> complex:
    """Complex amplitude at ``f_k``: ``A cos(2 pi f_k t + theta)`` gives ``A e^{j theta}``.

    ``samples[n]`` is taken at ``t0 + n dt``; the window must cover an integer
    number of periods to within one sample.
    """
    x = np.asarray(samples)
    n = len(x)
    periods = n * dt * f_k
    if round(periods) < 1 or abs(periods - round(periods)) > dt * f_k:
        raise WindowError(f"window of {n} samples spans {periods:.6f} periods of {f_k} Hz")
    t = t0 + dt * np.arange(n)
    return complex(2.0 / n * np.dot(x, np.exp(-2j * math.pi * f_k * t)))


def _check_guard(f_k: float, base: PerUnitBase, cfg: ScanConfig):
    if abs(f_k - base.f1) < cfg.fundamental_guard:
        raise ValueError(f"{f_k} Hz lies inside the +-{cfg.fundamental_guard} Hz guard around f1")


def response_from_window(f_k: float, axis: str, t0: float, dt: float, v, i, warn=()) -> RawResponse:
    """Post-processing shared by simulated and imported traces."""
    v_ax = np.real(v) if axis == "d" else np.imag(v)
    vr = single_bin_dft(v_ax, dt, f_k, t0)
    idr = single_bin_dft(np.real(i), dt, f_k, t0)
    iqr = single_bin_dft(np.imag(i), dt, f_k, t0)
    return RawResponse(f_k, axis, vr, idr, iqr, tuple(warn))


def slowest_time_constant(model: SimModel) -> float:
    """Longest decay time of the linearized device, in seconds."""
    lam = model.eigenvalues()
    decaying = -lam.real[lam.real < 0]
    if len(decaying) < len(lam):
        raise UnstableModelError(f"{model.name}: operating point is not asymptotically stable")
    return float(1.0 / decaying.min())


def _run_column(model: SimModel, f_k: float, axis: str, cfg: ScanConfig, tau: float | None = None):
    dt = cfg.step_for(f_k)
    n_win = cfg.window_samples(f_k)
    per_period = n_win // cfg.measure_periods
    if tau is None:
        tau = slowest_time_constant(model)
    t_settle = min(cfg.max_settle_s, cfg.settle_time_constants * tau)
    cycles = max(cfg.settle_cycles, math.ceil(t_settle * f_k))
    n_settle = cycles * per_period
    t_on = n_win * dt
    n_total = 2 * n_win + n_settle
    ts = simulate(model, (), SimConfig(dt, n_total * dt, cfg.integrator),
                  Perturbation(cfg.amplitude, f_k, axis, t_on))
    v, i = ts.v["POI"], ts.i["POI"]

    notes = []
    pre = single_bin_dft(np.imag(i[:n_win]), dt, f_k, 0.0)
    pre_d = single_bin_dft(np.real(i[:n_win]), dt, f_k, 0.0)
    k0 = len(ts.t) - n_win
    resp = response_from_window(f_k, axis, ts.t[k0], dt, v[k0:], i[k0:])
    scale = max(abs(resp.i_d_response), abs(resp.i_q_response), 1e-300)
    if max(abs(pre), abs(pre_d)) > cfg.drift_tol * scale:
        msg = f"{f_k:.4g} Hz: pre-injection drift at the measurement bin"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        notes.append(msg)
    return RawResponse(resp.f, resp.injected_axis, resp.v_response, resp.i_d_response,
                       resp.i_q_response, tuple(notes)), ts, k0


def measure_column(model: SimModel, f_k: float, axis: str, cfg: ScanConfig = ScanConfig()) -> RawResponse:
    """One injection at ``f_k`` on ``axis``; returns the response phasors."""
    _check_guard(f_k, model.base, cfg)
    return _run_column(model, f_k, axis, cfg)[0]


@dataclass
class _PointResult:
    f: float
    columns: dict = field(default_factory=dict)
    failed: str | None = None
    traces: dict = field(default_factory=dict)


def _measure_point(model, f_k, cfg, keep_raw, tau):
    res = _PointResult(f_k)
    for axis in cfg.axes:
        try:
            raw, ts, k0 = _run_column(model, f_k, axis, cfg, tau)
        except SimulationDiverged as exc:
            res.failed = str(exc)
            return res
        res.columns[axis] = raw
        if keep_raw:
            res.traces[axis] = (ts.t[k0:], ts.v["POI"][k0:], ts.i["POI"][k0:])
    return res


def _assemble(base: PerUnitBase, cfg: ScanConfig, results, meta) -> AdmittanceSpectrum:
    points = []
    for r in results:
        y = {}
        d = r.columns["d"]
        y["y_dd"], y["y_qd"] = d.y_column
        if "q" in r.columns:
            y["y_dq"], y["y_qq"] = r.columns["q"].y_column
        points.append(AdmittancePoint(float(r.f), **y))
    if len(points) < 2:
        raise ScanError("fewer than 2 usable frequency points")
    return AdmittanceSpectrum.from_unsorted(base, points, f_min=cfg.f_min, f_max=cfg.f_max, meta=meta)


def sweep(model: SimModel, cfg: ScanConfig = ScanConfig(), raw_dir=None) -> AdmittanceSpectrum:
    """Admittance spectrum of ``model`` over the configured grid.

    Points inside the fundamental guard are skipped; points whose simulation
    diverges are flagged and dropped, and more than 20 % flagged fails the sweep.
    With ``raw_dir`` the POI measurement windows and a manifest are written.
    """
    grid = cfg.grid()
    guarded = [float(f) for f in grid if abs(f - model.base.f1) < cfg.fundamental_guard]
    freqs = [float(f) for f in grid if abs(f - model.base.f1) >= cfg.fundamental_guard]
    keep = raw_dir is not None
    tau = slowest_time_constant(model)

    if cfg.parallel > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            results = list(pool.map(lambda f: _measure_point(model, f, cfg, keep, tau), freqs))
    else:
        results = [_measure_point(model, f, cfg, keep, tau) for f in freqs]

    flagged = [(r.f, r.failed) for r in results if r.failed]
    for f, why in flagged:
        log.warning("point %.4g Hz flagged: %s", f, why)
    if len(flagged) > 0.2 * len(freqs):
        raise ScanError(f"{len(flagged)} of {len(freqs)} points diverged")
    good = [r for r in results if not r.failed]
    meta = {
        "device": model.name,
        "reference": "measured",
        "scan": asdict(cfg),
        "guarded_hz": guarded,
        "slowest_time_constant_s": tau,
        "flagged": [{"f_hz": f, "reason": why} for f, why in flagged],
        "warnings": [w for r in good for c in r.columns.values() for w in c.warnings],
    }
    spectrum = _assemble(model.base, cfg, good, meta)
    if keep:
        _write_raw(Path(raw_dir), model.base, cfg, good)
    return spectrum


def _write_raw(out: Path, base: PerUnitBase, cfg: ScanConfig, results):
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in results:
        for axis, (t, v, i) in r.traces.items():
            name = f"raw_{r.f:.6f}Hz_{axis}.csv"
            ts = TimeSeries(t, {"POI": v}, {"POI": i})
            _write_poi_csv(out / name, ts)
            entries.append({"file": name, "f_hz": r.f, "axis": axis, "amplitude": cfg.amplitude,
                            "dt": cfg.step_for(r.f), "settle_cycles": cfg.settle_cycles,
                            "measure_periods": cfg.measure_periods})
    manifest = {"base": base.to_dict(), "f_min": cfg.f_min, "f_max": cfg.f_max, "traces": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _write_poi_csv(path: Path, ts: TimeSeries):
    from .emt.simulate import measure_pq

    v, i = ts.v["POI"], ts.i["POI"]
    p, q = measure_pq(v, i)
    lines = ["t,point,v_d,v_q,i_d,i_q,p,q"]
    for k in range(len(ts.t)):
        vals = (ts.t[k], v[k].real, v[k].imag, i[k].real, i[k].imag, p[k], q[k])
        r = [repr(float(x)) for x in vals]
        lines.append(",".join([r[0], "POI"] + r[1:]))
    path.write_text("\n".join(lines) + "\n")


def import_trace_scan(manifest_path) -> AdmittanceSpectrum:
    """Spectrum from externally recorded POI traces described by a manifest."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    base = PerUnitBase(**doc.get("base", {}))
    by_f = {}
    errors = []
    for e in doc["traces"]:
        path = manifest_path.parent / e["file"]
        try:
            ts = TimeSeries.from_csv(path)
            if "POI" not in ts.v:
                raise ValueError(f"{path.name}: no POI channel block")
            t = ts.t
            dt = float(e["dt"])
            steps = np.diff(t)
            if len(t) < 2 or np.max(np.abs(steps - dt)) > 1e-9 * max(dt, 1e-12) + 1e-12:
                raise ValueError(f"{path.name}: sample spacing does not match dt = {dt}")
            n_win = int(round(e["measure_periods"] / (e["f_hz"] * dt)))
            if len(t) < n_win:
                raise ValueError(f"{path.name}: {len(t)} samples, window needs {n_win}")
            k0 = len(t) - n_win
            raw = response_from_window(float(e["f_hz"]), e["axis"], t[k0], dt,
                                       ts.v["POI"][k0:], ts.i["POI"][k0:])
        except (ValueError, KeyError) as exc:
            errors.append(str(exc))
            continue
        by_f.setdefault(float(e["f_hz"]), {})[e["axis"]] = raw
    if errors:
        raise ScanError("; ".join(errors))
    results = [_PointResult(f, cols) for f, cols in by_f.items()]
    cfg_range = ScanConfig(f_min=doc.get("f_min", min(by_f)), f_max=doc.get("f_max", max(by_f)))
    return _assemble(base, cfg_range, results, {"source": str(manifest_path), "reference": "measured"})
