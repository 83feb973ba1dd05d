from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernel as K
from .models import SimModel

POINTS = ("ST", "VCP", "POI")
_METHODS = {"trapezoidal": 0, "rk4": 1}


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 20e-6
    t_end: float = 0.1
    integrator: str = "trapezoidal"
    record_decimation: int = 1

    def __post_init__(self):
        if not 0 < self.dt <= 100e-6:
            raise ValueError(f"dt must be in (0, 100 us], got {self.dt}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.integrator not in _METHODS:
            raise ValueError(f"integrator must be one of {sorted(_METHODS)}")
        if self.record_decimation < 1:
            raise ValueError("record_decimation must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class DisturbanceEvent:
    """Step of the grid-source magnitude (``dv`` pu) and angle (``ddelta`` rad) at ``t``."""

    t: float
    dv: float = 0.0
    ddelta: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("event time must be >= 0")


@dataclass(frozen=True)
class Perturbation:
    """Small-signal cosine added to one dq axis of the grid source."""

    amplitude: float
    f_hz: float
    axis: str = "d"
    t_on: float = 0.0


def measure_pq(v, i):
    """Power leaving a node in pu: ``p = vd*id + vq*iq``, ``q = vq*id - vd*iq``.

    Accepts ``DqPhasor``-like objects, complex numbers or complex arrays.
    """
    vc = v.as_complex() if hasattr(v, "as_complex") else v
    ic = i.as_complex() if hasattr(i, "as_complex") else i
    s = vc * np.conj(ic)
    if np.ndim(s) == 0:
        return float(np.real(s)), float(np.imag(s))
    return np.real(s), np.imag(s)


@dataclass
class TimeSeries:
    """Recorded dq voltages and currents at ST, VCP and POI (global frame)."""

    t: np.ndarray
    v: dict
    i: dict
    meta: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None

    def p(self, point: str) -> np.ndarray:
        return measure_pq(self.v[point], self.i[point])[0]

    def q(self, point: str) -> np.ndarray:
        return measure_pq(self.v[point], self.i[point])[1]

    def i_mag(self, point: str) -> np.ndarray:
        return np.abs(self.i[point])

    def v_angle(self, point: str) -> np.ndarray:
        return np.unwrap(np.angle(self.v[point]))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "point", "v_d", "v_q", "i_d", "i_q", "p", "q"])
        for pt in POINTS:
            v, i = self.v[pt], self.i[pt]
            p, q = measure_pq(v, i)
            for k in range(len(self.t)):
                w.writerow([repr(float(x)) for x in (self.t[k],)] + [pt] + [
                    repr(float(x)) for x in (v[k].real, v[k].imag, i[k].real, i[k].imag, p[k], q[k])])
        text = buf.getvalue()
        if path is not None:
            path = Path(path)
            path.write_text(text)
            path.with_suffix(".json").write_text(json.dumps(self.meta, indent=2, default=_jsonable))
        return text

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        path = Path(path)
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
        needed = {"t", "point", "v_d", "v_q", "i_d", "i_q"}
        if not rows or not needed <= set(rows[0]):
            raise ValueError(f"{path}: missing columns {sorted(needed - set(rows[0] if rows else []))}")
        blocks = {}
        for r in rows:
            blocks.setdefault(r["point"], []).append(r)
        t = None
        v, i = {}, {}
        for pt, rs in blocks.items():
            tt = np.array([float(r["t"]) for r in rs])
            if t is None:
                t = tt
            elif len(tt) != len(t) or np.any(tt != t):
                raise ValueError(f"{path}: channel {pt} is on a different time grid")
            v[pt] = np.array([complex(float(r["v_d"]), float(r["v_q"])) for r in rs])
            i[pt] = np.array([complex(float(r["i_d"]), float(r["i_q"])) for r in rs])
        side = path.with_suffix(".json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        return cls(t, v, i, meta)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def chord_matrix(model: SimModel, dt: float) -> np.ndarray:
    jac = model.jacobian(model.x0, model.v_poi)
    return np.linalg.inv(np.eye(model.n_states) - 0.5 * dt * jac)


def event_phasors(v_poi: complex, events: Sequence[DisturbanceEvent]):
    """Absolute grid phasors after each cumulative event."""
    mag, ang = abs(v_poi), math.atan2(v_poi.imag, v_poi.real)
    ts, vd, vq = [], [], []
    last = -math.inf
    for ev in events:
        if ev.t < last:
            raise ValueError("events must be sorted by time")
        last = ev.t
        mag += ev.dv
        ang += ev.ddelta
        ts.append(ev.t)
        vd.append(mag * math.cos(ang))
        vq.append(mag * math.sin(ang))
    return np.array(ts, dtype=float), np.array(vd, dtype=float), np.array(vq, dtype=float)


def simulate(model: SimModel, events: Sequence[DisturbanceEvent] = (), cfg: SimConfig = SimConfig(),
             perturbation: Perturbation | None = None, guard: float = 100.0) -> TimeSeries:
    """Integrate from the model's equilibrium; deterministic for identical inputs."""
    ev_t, ev_vd, ev_vq = event_phasors(model.v_poi, events)
    if perturbation is None:
        amp, wpert, axis, t_on = 0.0, 0.0, -1, 0.0
    else:
        amp = perturbation.amplitude
        wpert = 2.0 * math.pi * perturbation.f_hz
        axis = {"d": 0, "q": 1}[perturbation.axis]
        t_on = perturbation.t_on
    method = _METHODS[cfg.integrator]
    M = chord_matrix(model, cfg.dt) if method == 0 else np.eye(model.n_states)
    mask = np.ones(model.n_states, dtype=np.bool_)
    if model.kind == K.DROOP_GFM:
        mask[K.X_TH] = False
    rec, status, step, x_end = K.integrate(
        model.kind, model.x0.astype(float), model.params, M, cfg.dt, cfg.n_steps,
        cfg.record_decimation, method, ev_t, ev_vd, ev_vq, model.v_poi.real, model.v_poi.imag,
        amp, wpert, axis, t_on, guard, mask)
    if status == 1:
        raise SimulationDiverged(
            f"{model.name}: a state exceeded {guard} pu at t = {step * cfg.dt:.6f} s")
    if status == 2:
        raise SimulationDiverged(
            f"{model.name}: trapezoidal corrector did not converge at t = {step * cfg.dt:.6f} s")
    t = np.arange(rec.shape[0]) * cfg.dt * cfg.record_decimation
    v, i = {}, {}
    for k, pt in enumerate(POINTS):
        v[pt] = rec[:, 4 * k] + 1j * rec[:, 4 * k + 1]
        i[pt] = rec[:, 4 * k + 2] + 1j * rec[:, 4 * k + 3]
    meta = {
        "model": model.name,
        "model_meta": model.meta,
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "integrator": cfg.integrator,
        "record_decimation": cfg.record_decimation,
        "events": [asdict(e) for e in events],
        "perturbation": None if perturbation is None else asdict(perturbation),
    }
    return TimeSeries(t, v, i, meta, x_end)
