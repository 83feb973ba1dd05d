"""Compiled right-hand sides and the fixed-step integration loop.

Two device kinds share one kernel so a single compiled loop serves every
model. All states are pu; the grid (POI) voltage is an input in the global
dq frame rotating at the nominal frequency.
"""
import math

import numpy as np
from numba import njit

SOURCE = 0
DROOP_GFM = 1

# droop GFM parameter layout
(P_WB, P_RF, P_LF, P_CF, P_RG, P_LG, P_MP, P_MQ, P_KPV, P_KIV, P_KPC, P_KIC,
 P_WC, P_RV, P_LV, P_PREF, P_QREF, P_VREF, P_KFF) = range(19)
N_GFM_PARAMS = 19
# droop GFM state layout
(X_TH, X_PF, X_QF, X_XID, X_XIQ, X_GD, X_GQ, X_ILD, X_ILQ,
 X_VCD, X_VCQ, X_IOD, X_IOQ) = range(13)
N_GFM_STATES = 13

# source parameter layout: e_d, e_q, r, l, wb
N_SOURCE_PARAMS = 5
N_SOURCE_STATES = 2

N_OUT = 12  # (v_d, v_q, i_d, i_q) at ST, VCP, POI


@njit(cache=True, nogil=True)
def rhs(kind, x, prm, vgd, vgq, dx):
    if kind == SOURCE:
        ed, eq, r, l, wb = prm[0], prm[1], prm[2], prm[3], prm[4]
        dx[0] = wb / l * (ed - vgd - r * x[0] + l * x[1])
        dx[1] = wb / l * (eq - vgq - r * x[1] - l * x[0])
        return
    wb = prm[P_WB]
    th = x[X_TH]
    c = math.cos(th)
    s = math.sin(th)
    vld = c * vgd + s * vgq
    vlq = -s * vgd + c * vgq
    w = 1.0 + prm[P_MP] * (prm[P_PREF] - x[X_PF])
    iLd, iLq = x[X_ILD], x[X_ILQ]
    vcd, vcq = x[X_VCD], x[X_VCQ]
    iod, ioq = x[X_IOD], x[X_IOQ]
    p = vcd * iod + vcq * ioq
    q = vcq * iod - vcd * ioq
    vstar = prm[P_VREF] + prm[P_MQ] * (prm[P_QREF] - x[X_QF])
    rv, lv = prm[P_RV], prm[P_LV]
    evd = vstar - (rv * iod - w * lv * ioq) - vcd
    evq = -(rv * ioq + w * lv * iod) - vcq
    cf, lf = prm[P_CF], prm[P_LF]
    kff = prm[P_KFF]
    ird = kff * iod - w * cf * vcq + prm[P_KPV] * evd + prm[P_KIV] * x[X_XID]
    irq = kff * ioq + w * cf * vcd + prm[P_KPV] * evq + prm[P_KIV] * x[X_XIQ]
    eid = ird - iLd
    eiq = irq - iLq
    vsd = vcd - w * lf * iLq + prm[P_KPC] * eid + prm[P_KIC] * x[X_GD]
    vsq = vcq + w * lf * iLd + prm[P_KPC] * eiq + prm[P_KIC] * x[X_GQ]
    rf = prm[P_RF]
    rg, lg = prm[P_RG], prm[P_LG]
    dx[X_TH] = wb * (w - 1.0)
    dx[X_PF] = prm[P_WC] * (p - x[X_PF])
    dx[X_QF] = prm[P_WC] * (q - x[X_QF])
    dx[X_XID] = wb * evd
    dx[X_XIQ] = wb * evq
    dx[X_GD] = wb * eid
    dx[X_GQ] = wb * eiq
    dx[X_ILD] = wb / lf * (vsd - vcd - rf * iLd + w * lf * iLq)
    dx[X_ILQ] = wb / lf * (vsq - vcq - rf * iLq - w * lf * iLd)
    dx[X_VCD] = wb / cf * (iLd - iod + w * cf * vcq)
    dx[X_VCQ] = wb / cf * (iLq - ioq - w * cf * vcd)
    dx[X_IOD] = wb / lg * (vcd - vld - rg * iod + w * lg * ioq)
    dx[X_IOQ] = wb / lg * (vcq - vlq - rg * ioq - w * lg * iod)


@njit(cache=True, nogil=True)
def outputs(kind, x, prm, vgd, vgq, out):
    if kind == SOURCE:
        out[0] = prm[0]
        out[1] = prm[1]
        out[2] = x[0]
        out[3] = x[1]
        for k in range(4):
            out[4 + k] = out[k]
        out[8] = vgd
        out[9] = vgq
        out[10] = x[0]
        out[11] = x[1]
        return
    th = x[X_TH]
    c = math.cos(th)
    s = math.sin(th)
    w = 1.0 + prm[P_MP] * (prm[P_PREF] - x[X_PF])
    iLd, iLq = x[X_ILD], x[X_ILQ]
    vcd, vcq = x[X_VCD], x[X_VCQ]
    iod, ioq = x[X_IOD], x[X_IOQ]
    vstar = prm[P_VREF] + prm[P_MQ] * (prm[P_QREF] - x[X_QF])
    rv, lv = prm[P_RV], prm[P_LV]
    evd = vstar - (rv * iod - w * lv * ioq) - vcd
    evq = -(rv * ioq + w * lv * iod) - vcq
    cf, lf = prm[P_CF], prm[P_LF]
    kff = prm[P_KFF]
    ird = kff * iod - w * cf * vcq + prm[P_KPV] * evd + prm[P_KIV] * x[X_XID]
    irq = kff * ioq + w * cf * vcd + prm[P_KPV] * evq + prm[P_KIV] * x[X_XIQ]
    vsd = vcd - w * lf * iLq + prm[P_KPC] * (ird - iLd) + prm[P_KIC] * x[X_GD]
    vsq = vcq + w * lf * iLd + prm[P_KPC] * (irq - iLq) + prm[P_KIC] * x[X_GQ]
    loc = (vsd, vsq, iLd, iLq, vcd, vcq, iod, ioq)
    for k in range(4):
        a = loc[2 * k]
        b = loc[2 * k + 1]
        out[2 * k] = c * a - s * b
        out[2 * k + 1] = s * a + c * b
    out[8] = vgd
    out[9] = vgq
    out[10] = out[6]
    out[11] = out[7]


@njit(cache=True, nogil=True)
def _grid_input(t, right, ev_t, ev_vd, ev_vq, v0d, v0q, amp, wpert, axis, t_on):
    vd, vq = v0d, v0q
    eps = 1e-9
    for k in range(ev_t.shape[0]):
        hit = ev_t[k] <= t + eps if right else ev_t[k] < t - eps
        if hit:
            vd = ev_vd[k]
            vq = ev_vq[k]
    on = t >= t_on - eps if right else t > t_on + eps
    if on and axis == 0:
        vd += amp * math.cos(wpert * t)
    elif on and axis == 1:
        vq += amp * math.cos(wpert * t)
    return vd, vq


@njit(cache=True, nogil=True)
def integrate(kind, x0, prm, M, dt, n_steps, dec, method,
              ev_t, ev_vd, ev_vq, v0d, v0q, amp, wpert, axis, t_on, guard, guard_mask):
    """Fixed-step integration from ``x0``.

    ``method`` 0 is the trapezoidal rule solved by a chord iteration with the
    precomputed ``M = inv(I - dt/2 J)``; 1 is classical RK4.
    Returns ``(record, status, fail_step, x_final)`` where ``record`` has one
    row of 12 outputs per recorded step; status 0 ok, 1 diverged, 2 corrector
    failed.
    """
    n = x0.shape[0]
    n_rec = n_steps // dec + 1
    rec = np.zeros((n_rec, N_OUT))
    x = x0.copy()
    xn = np.empty(n)
    fn = np.empty(n)
    f1 = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    g = np.empty(n)
    out = np.empty(N_OUT)
    r = 0
    for step in range(n_steps + 1):
        t = step * dt
        vd, vq = _grid_input(t, True, ev_t, ev_vd, ev_vq, v0d, v0q, amp, wpert, axis, t_on)
        if step % dec == 0:
            outputs(kind, x, prm, vd, vq, out)
            for j in range(N_OUT):
                rec[r, j] = out[j]
            r += 1
        if step == n_steps:
            break
        t1 = t + dt
        vd1, vq1 = _grid_input(t1, False, ev_t, ev_vd, ev_vq, v0d, v0q, amp, wpert, axis, t_on)
        if method == 0:
            rhs(kind, x, prm, vd, vq, fn)
            for i in range(n):
                xn[i] = x[i]
                x[i] = x[i] + dt * fn[i]
            ok = False
            for it in range(30):
                rhs(kind, x, prm, vd1, vq1, f1)
                for i in range(n):
                    g[i] = x[i] - xn[i] - 0.5 * dt * (fn[i] + f1[i])
                big = 0.0
                scale = 1.0
                for i in range(n):
                    corr = 0.0
                    for j in range(n):
                        corr += M[i, j] * g[j]
                    x[i] -= corr
                    if abs(corr) > big:
                        big = abs(corr)
                    if abs(x[i]) > scale:
                        scale = abs(x[i])
                if big <= 1e-13 * scale:
                    ok = True
                    break
            if not ok:
                return rec[:r], 2, step, x
        else:
            vdm, vqm = _grid_input(t + 0.5 * dt, False, ev_t, ev_vd, ev_vq, v0d, v0q, amp, wpert, axis, t_on)
            rhs(kind, x, prm, vd, vq, k1)
            for i in range(n):
                xt[i] = x[i] + 0.5 * dt * k1[i]
            rhs(kind, xt, prm, vdm, vqm, k2)
            for i in range(n):
                xt[i] = x[i] + 0.5 * dt * k2[i]
            rhs(kind, xt, prm, vdm, vqm, k3)
            for i in range(n):
                xt[i] = x[i] + dt * k3[i]
            rhs(kind, xt, prm, vd1, vq1, k4)
            for i in range(n):
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(n):
            if guard_mask[i] and not abs(x[i]) <= guard:
                return rec[:r], 1, step, x
    return rec, 0, n_steps, x
