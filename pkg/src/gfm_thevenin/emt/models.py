"""Device models for the dq-frame simulator and their equilibria."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..analytic import IdvsConfig
from ..core import PerUnitBase, RlImpedance, rl_from_x_over_r
from . import kernel as K


class EquilibriumError(RuntimeError):
    pass


class UnstableModelError(RuntimeError):
    pass


def current_loop_gains(filter_l: float, filter_r: float, bandwidth_hz: float, omega_b: float):
    """PI gains placing the inductor-current loop at ``bandwidth_hz`` by pole-zero
    cancellation; integrators run in pu time, hence the ``1/omega_b``."""
    w_bw = 2.0 * math.pi * bandwidth_hz
    return w_bw * filter_l / omega_b, w_bw * filter_r / omega_b


@dataclass(frozen=True)
class GfmPlantModel:
    """Average-value droop GFM with LC filter behind a lumped R-L to the POI.

    ``p_ref``, ``q_ref`` and ``v_ref`` are the dispatch at the POI; the controller's
    internal references are derived from them when the model is initialized.
    ``kpc``/``kic`` left as ``None`` are tuned from ``current_bw_hz``.
    ``voltage_loop_scale`` multiplies ``kpv``/``kiv`` inside the controller, so the
    tabulated gains stay comparable to the benchmark plant's nominal tuning.
    ``current_ff`` is the output-current feedforward into the current reference.
    """

    filter_r: float = 0.003
    filter_l: float = 0.15
    filter_c: float = 0.05
    z_coupling_plus_grid: RlImpedance = field(
        default_factory=lambda: RlImpedance(0.015, 0.15) + rl_from_x_over_r(0.30, 10.0))
    droop_mp: float = 0.02
    droop_mq: float = 0.02
    kpv: float = 2.60
    kiv: float = 5.80
    kpc: float | None = None
    kic: float | None = None
    current_bw_hz: float = 300.0
    current_ff: float = 0.6
    voltage_loop_scale: float = 5.0
    power_filter_cutoff: float = 2.0 * math.pi * 10.0
    virtual_z: RlImpedance = RlImpedance(0.0, 0.0)
    p_ref: float = 0.4
    q_ref: float = -0.05
    v_ref: float = 1.0
    f1: float = 60.0

    def __post_init__(self):
        if not (self.filter_l > 0 and self.filter_c > 0 and self.z_coupling_plus_grid.l > 0):
            raise ValueError("filter_l, filter_c and the grid-side inductance must be positive")
        wb = 2.0 * math.pi * self.f1
        kpc, kic = current_loop_gains(self.filter_l, self.filter_r, self.current_bw_hz, wb)
        if self.kpc is None:
            object.__setattr__(self, "kpc", kpc)
        if self.kic is None:
            object.__setattr__(self, "kic", kic)
        gains = (self.kpv, self.kiv, self.kpc, self.kic, self.droop_mp, self.droop_mq,
                 self.current_ff, self.power_filter_cutoff, self.voltage_loop_scale)
        if min(gains) < 0:
            raise ValueError("gains and droop coefficients must be >= 0")
        if not (self.kiv > 0 and self.kic > 0):
            raise ValueError("integral gains must be positive for a steady state to exist")

    def with_filter(self, x_filter: float, x_over_r: float = 50.0) -> "GfmPlantModel":
        """Same plant with a different filter inductance; current loop retuned."""
        return replace(self, filter_l=x_filter, filter_r=x_filter / x_over_r, kpc=None, kic=None)

    def with_voltage_gains(self, kiv: float, kpv: float) -> "GfmPlantModel":
        return replace(self, kiv=kiv, kpv=kpv)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("z_coupling_plus_grid", "virtual_z"):
            z = d[k]
            d[k] = {"r": z.r, "l": z.l}
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "GfmPlantModel":
        doc = dict(doc)
        for k in ("z_coupling_plus_grid", "virtual_z"):
            if k in doc and isinstance(doc[k], dict):
                doc[k] = RlImpedance(**doc[k])
        return cls(**doc)


@dataclass(frozen=True)
class IdealisticMode:
    enabled: bool = False
    gain_factor: float = 5.0

    def apply(self, params: GfmPlantModel) -> GfmPlantModel:
        if not self.enabled:
            return params
        return replace(params, droop_mp=0.0, droop_mq=0.0, kpv=params.kpv * self.gain_factor,
                       kiv=params.kiv * self.gain_factor, virtual_z=RlImpedance(0.0, 0.0))


GFM_STATES = ("theta", "p_f", "q_f", "xi_d", "xi_q", "gamma_d", "gamma_q",
              "iL_d", "iL_q", "vc_d", "vc_q", "io_d", "io_q")
SOURCE_STATES = ("i_d", "i_q")


@dataclass
class SimModel:
    """A device connected at the POI to a stiff grid source ``v_poi``.

    ``x0`` is the pre-solved equilibrium; ``fixed`` lists states excluded
    from the equilibrium solve (an angle with no restoring dynamics).
    """

    kind: int
    name: str
    params: np.ndarray
    x0: np.ndarray
    v_poi: complex
    base: PerUnitBase
    state_names: tuple
    fixed: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.x0)

    @property
    def io_index(self) -> tuple:
        return (K.X_IOD, K.X_IOQ) if self.kind == K.DROOP_GFM else (0, 1)

    def f(self, x, v_poi: complex) -> np.ndarray:
        dx = np.empty(len(x))
        K.rhs(self.kind, np.asarray(x, dtype=float), self.params, v_poi.real, v_poi.imag, dx)
        return dx

    def outputs(self, x, v_poi: complex) -> np.ndarray:
        out = np.empty(K.N_OUT)
        K.outputs(self.kind, np.asarray(x, dtype=float), self.params, v_poi.real, v_poi.imag, out)
        return out

    def jacobian(self, x, v_poi: complex) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = len(x)
        jac = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            jac[:, j] = (self.f(xp, v_poi) - self.f(xm, v_poi)) / (2 * h)
        return jac

    def eigenvalues(self) -> np.ndarray:
        jac = self.jacobian(self.x0, self.v_poi)
        free = [i for i in range(self.n_states) if i not in self.fixed]
        return np.linalg.eigvals(jac[np.ix_(free, free)])

    def with_grid(self, v_poi: complex) -> "SimModel":
        """Re-solve the equilibrium for a different stiff-grid phasor."""
        x0 = solve_equilibrium(self, self.x0, v_poi)
        return replace(self, x0=x0, v_poi=v_poi)


def _newton(fun, y0, tol=1e-12, max_iter=50, names=None):
    y = np.array(y0, dtype=float)
    r = fun(y)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return y
        n = len(y)
        jac = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(y[j]))
            yp, ym = y.copy(), y.copy()
            yp[j] += h
            ym[j] -= h
            jac[:, j] = (fun(yp) - fun(ym)) / (2 * h)
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        norm0 = np.linalg.norm(r)
        while lam > 1e-4:
            y_try = y - lam * step
            r_try = fun(y_try)
            if np.all(np.isfinite(r_try)) and np.linalg.norm(r_try) < norm0:
                break
            lam *= 0.5
        else:
            break
        y, r = y_try, r_try
    if np.max(np.abs(r)) < tol:
        return y
    worst = int(np.argmax(np.abs(r)))
    label = names[worst] if names else str(worst)
    raise EquilibriumError(f"equilibrium not converged: residual d({label})/dt = {r[worst]:.3e}")


def solve_equilibrium(model: SimModel, guess, v_poi: complex, tol: float = 1e-12,
                      preroll_s: float = 2.0) -> np.ndarray:
    """Newton on the state derivatives; if that fails, simulate ``preroll_s``
    seconds from the guess and retry Newton from where the trajectory ends."""
    free = [i for i in range(model.n_states) if i not in model.fixed]
    x = np.array(guess, dtype=float)
    names = [model.state_names[i] for i in free]

    def solve_from(x_start):
        def fun(y):
            xx = x_start.copy()
            xx[free] = y
            return model.f(xx, v_poi)[free]

        out = x_start.copy()
        out[free] = _newton(fun, x_start[free], tol=tol, names=names)
        return out

    try:
        return solve_from(x)
    except EquilibriumError:
        if preroll_s <= 0:
            raise
    from .simulate import SimConfig, SimulationDiverged, simulate

    try:
        ts = simulate(replace(model, x0=x, v_poi=v_poi), (), SimConfig(t_end=preroll_s, record_decimation=1000))
    except SimulationDiverged as exc:
        raise EquilibriumError(f"Newton failed and the pre-roll diverged: {exc}") from exc
    return solve_from(np.array(ts.final_state))


def build_idvs(cfg: IdvsConfig, grid: complex = 1.0 + 0j, e_angle: float = 0.0,
               name: str = "idvs") -> SimModel:
    """Fixed source ``cfg.v_id∠e_angle`` behind ``cfg.z`` feeding a stiff grid."""
    z = cfg.z
    if not z.l > 0:
        raise ValueError("the simulator needs a non-zero series inductance")
    e = cfg.v_id * complex(math.cos(e_angle), math.sin(e_angle))
    wb = cfg.base.omega1
    prm = np.array([e.real, e.imag, z.r, z.l, wb])
    i0 = (e - grid) / z.z1
    model = SimModel(K.SOURCE, name, prm, np.array([i0.real, i0.imag]), complex(grid), cfg.base,
                     SOURCE_STATES, meta={"v_id": cfg.v_id, "e_angle": e_angle, "r": z.r, "l": z.l})
    model.x0 = solve_equilibrium(model, model.x0, model.v_poi)
    return model


def build_classical_machine(e: float, r_a: float, x_dpp: float, base: PerUnitBase | None = None,
                            grid: complex = 1.0 + 0j) -> SimModel:
    """Constant EMF behind armature resistance and sub-transient reactance."""
    if not x_dpp > 0:
        raise ValueError("x_dpp must be positive")
    cfg = IdvsConfig(e, RlImpedance(r_a, x_dpp), base or PerUnitBase())
    model = build_idvs(cfg, grid=grid, name="classical_machine")
    model.meta.update({"r_a": r_a, "x_dpp": x_dpp})
    return model


def gfm_param_vector(p: GfmPlantModel, omega_b: float) -> np.ndarray:
    prm = np.zeros(K.N_GFM_PARAMS)
    prm[K.P_WB] = omega_b
    prm[K.P_RF], prm[K.P_LF], prm[K.P_CF] = p.filter_r, p.filter_l, p.filter_c
    prm[K.P_RG], prm[K.P_LG] = p.z_coupling_plus_grid.r, p.z_coupling_plus_grid.l
    prm[K.P_MP], prm[K.P_MQ] = p.droop_mp, p.droop_mq
    g = p.voltage_loop_scale
    prm[K.P_KPV], prm[K.P_KIV], prm[K.P_KPC], prm[K.P_KIC] = g * p.kpv, g * p.kiv, p.kpc, p.kic
    prm[K.P_WC] = p.power_filter_cutoff
    prm[K.P_RV], prm[K.P_LV] = p.virtual_z.r, p.virtual_z.l
    prm[K.P_KFF] = p.current_ff
    return prm


def build_droop_gfm(params: GfmPlantModel, mode: IdealisticMode = IdealisticMode(),
                    base: PerUnitBase | None = None) -> SimModel:
    """Droop GFM initialized so the POI sits at ``v_ref∠0`` exporting ``p_ref + j q_ref``."""
    base = base or PerUnitBase(f1=params.f1)
    p = mode.apply(params)
    wb = base.omega1
    prm = gfm_param_vector(p, wb)

    vg = complex(p.v_ref, 0.0)
    io = np.conj(complex(p.p_ref, p.q_ref) / vg)
    zg = p.z_coupling_plus_grid.z1
    vc = vg + zg * io
    il = io + 1j * p.filter_c * vc
    vs = vc + complex(p.filter_r, p.filter_l) * il
    vint = vc + p.virtual_z.z1 * io
    th = math.atan2(vint.imag, vint.real)
    rot = complex(math.cos(-th), math.sin(-th))
    vc_l, io_l, il_l, vs_l = vc * rot, io * rot, il * rot, vs * rot
    p_vcp = (vc * np.conj(io)).real
    q_vcp = (vc * np.conj(io)).imag
    prm[K.P_PREF] = p_vcp
    prm[K.P_QREF] = q_vcp
    prm[K.P_VREF] = abs(vint)

    ird = il_l.real
    irq = il_l.imag
    x = np.zeros(K.N_GFM_STATES)
    x[K.X_TH] = th
    x[K.X_PF], x[K.X_QF] = p_vcp, q_vcp
    kiv = prm[K.P_KIV]
    x[K.X_XID] = (ird - p.current_ff * io_l.real + p.filter_c * vc_l.imag) / kiv
    x[K.X_XIQ] = (irq - p.current_ff * io_l.imag - p.filter_c * vc_l.real) / kiv
    x[K.X_GD] = (vs_l.real - vc_l.real + p.filter_l * il_l.imag) / p.kic
    x[K.X_GQ] = (vs_l.imag - vc_l.imag - p.filter_l * il_l.real) / p.kic
    x[K.X_ILD], x[K.X_ILQ] = il_l.real, il_l.imag
    x[K.X_VCD], x[K.X_VCQ] = vc_l.real, vc_l.imag
    x[K.X_IOD], x[K.X_IOQ] = io_l.real, io_l.imag

    fixed = (K.X_TH,) if p.droop_mp == 0 else ()
    model = SimModel(K.DROOP_GFM, "droop_gfm", prm, x, vg, base, GFM_STATES, fixed=fixed,
                     meta={"plant": p.to_dict(), "idealistic": mode.enabled,
                           "idealistic_gain_factor": mode.gain_factor if mode.enabled else None})
    model.x0 = solve_equilibrium(model, x, vg)
    return model


@dataclass(frozen=True)
class LoadSolution:
    v_poi: complex
    x: np.ndarray


def solve_with_load(model: SimModel, s_load: complex, x_guess=None, v_guess: complex | None = None,
                    tol: float = 1e-11) -> LoadSolution:
    """Steady state of the device islanded onto a constant-power load at the POI.

    The frame is pinned to the device (angle state set to zero) and the POI
    voltage becomes an algebraic unknown. Raises :class:`EquilibriumError` when
    Newton does not converge, which past the nose of the P-V curve it cannot.
    """
    n = model.n_states
    has_angle = model.kind == K.DROOP_GFM
    free = [i for i in range(n) if not (has_angle and i == K.X_TH)]
    x = np.array(model.x0 if x_guess is None else x_guess, dtype=float)
    if v_guess is None:
        v_guess = model.v_poi
        if has_angle:
            v_guess = v_guess * complex(math.cos(-x[K.X_TH]), math.sin(-x[K.X_TH]))
    if has_angle:
        x[K.X_TH] = 0.0
    iod, ioq = model.io_index
    nf = len(free)

    def unpack(y):
        xx = x.copy()
        xx[free] = y[:nf]
        return xx, complex(y[nf], y[nf + 1])

    def fun(y):
        xx, v = unpack(y)
        if abs(v) < 1e-6:
            return np.full(nf + 2, np.inf)
        g = complex(xx[iod], xx[ioq]) - np.conj(s_load / v)
        return np.concatenate([model.f(xx, v)[free], [g.real, g.imag]])

    y0 = np.concatenate([x[free], [v_guess.real, v_guess.imag]])
    names = [model.state_names[i] for i in free] + ["v_poi_d", "v_poi_q"]
    y = _newton(fun, y0, tol=tol, names=names)
    xs, v = unpack(y)
    return LoadSolution(v, xs)
