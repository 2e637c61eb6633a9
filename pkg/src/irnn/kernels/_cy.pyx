# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_numpy.py``.

Loops run per sample over its valid steps only, so padding costs nothing.
Parameters arrive as a dict; diagonal decay weights are passed as (1, D)
matrices with ``dense == 0``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sig(double a) noexcept nogil:
    cdef double e
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as2d(W):
    W = _c(W)
    return W.reshape(1, -1) if W.ndim == 1 else W


def irnn_forward(p, X, DL, L, bint mu_static):
    cdef double[:, :, ::1] x = _c(X)
    cdef double[:, :, ::1] dl = _c(DL)
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(L, dtype=np.int64)
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef double[::1] w_ir = _c(p["w_ir"]), w_iz = _c(p["w_iz"]), w_in = _c(p["w_in"])
    cdef double[::1] w_hr = _c(p["w_hr"]), w_hz = _c(p["w_hz"]), w_hn = _c(p["w_hn"])
    cdef double[::1] b_r = _c(p["b_r"]), b_z = _c(p["b_z"]), b_n = _c(p["b_n"])
    cdef double[::1] w_out = _c(p["w_out"])
    cdef double b_out = float(p["b_out"])
    wg_np = _as2d(p["w_gamma"])
    cdef double[:, ::1] w_g = wg_np
    cdef bint g_dense = np.ndim(p["w_gamma"]) == 2
    cdef double[::1] b_g = _c(p["b_gamma"])
    cdef bint m_dense = 0
    if mu_static:
        wm_np = np.zeros((1, D))
        bm_np = np.zeros(D)
    else:
        wm_np = _as2d(p["w_mu"])
        bm_np = _c(p["b_mu"])
        m_dense = np.ndim(p["w_mu"]) == 2
    cdef double[:, ::1] w_m = wm_np
    cdef double[::1] b_m = bm_np

    h_np = np.zeros((B, T, D))
    hh_np = np.zeros((B, T, D))
    mu_np = np.zeros((B, T, D))
    g_np = np.zeros((B, T, D))
    lg_np = np.zeros((B, T))
    cdef double[:, :, ::1] h_all = h_np, hh_all = hh_np, mu_all = mu_np, g_all = g_np
    cdef double[:, ::1] logits = lg_np
    cdef Py_ssize_t b, t, d, k
    cdef double prev, xv, r, z, n, h, mu, ag, gam, e, hh, acc
    with nogil:
        for b in range(B):
            for t in range(lens[b]):
                acc = b_out
                for d in range(D):
                    prev = hh_all[b, t - 1, d] if t > 0 else 0.0
                    xv = x[b, t, d]
                    r = _sig(w_ir[d] * xv + w_hr[d] * prev + b_r[d])
                    z = _sig(w_iz[d] * xv + w_hz[d] * prev + b_z[d])
                    n = tanh(w_in[d] * xv + w_hn[d] * (r * prev) + b_n[d])
                    h = (1.0 - z) * prev + z * n
                    if mu_static:
                        mu = 0.0
                    elif m_dense:
                        mu = b_m[d]
                        for k in range(D):
                            mu = mu + w_m[d, k] * x[b, t, k]
                    else:
                        mu = w_m[0, d] * xv + b_m[d]
                    if g_dense:
                        ag = b_g[d]
                        for k in range(D):
                            ag = ag + w_g[d, k] * dl[b, t, k]
                    else:
                        ag = w_g[0, d] * dl[b, t, d] + b_g[d]
                    gam = ag if ag > 0 else 0.0
                    e = exp(-gam)
                    hh = e * h + (1.0 - e) * mu
                    h_all[b, t, d] = h
                    hh_all[b, t, d] = hh
                    mu_all[b, t, d] = mu
                    g_all[b, t, d] = gam
                    acc = acc + w_out[d] * hh
                logits[b, t] = acc
    return h_np, hh_np, mu_np, g_np, lg_np


def irnn_backward(p, X, DL, L, H_all, HH_all, MU_all, G_all, dlogit, bint mu_static):
    cdef double[:, :, ::1] x = _c(X)
    cdef double[:, :, ::1] dl = _c(DL)
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(L, dtype=np.int64)
    cdef double[:, :, ::1] h_all = _c(H_all), hh_all = _c(HH_all), mu_all = _c(MU_all), g_all = _c(G_all)
    cdef double[::1] dlg = _c(dlogit)
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef double[::1] w_ir = _c(p["w_ir"]), w_iz = _c(p["w_iz"]), w_in = _c(p["w_in"])
    cdef double[::1] w_hr = _c(p["w_hr"]), w_hz = _c(p["w_hz"]), w_hn = _c(p["w_hn"])
    cdef double[::1] b_r = _c(p["b_r"]), b_z = _c(p["b_z"]), b_n = _c(p["b_n"])
    cdef double[::1] w_out = _c(p["w_out"])
    cdef bint g_dense = np.ndim(p["w_gamma"]) == 2
    cdef bint m_dense = (not mu_static) and np.ndim(p["w_mu"]) == 2

    names = ["w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn", "b_r", "b_z", "b_n", "b_gamma", "w_out"]
    G = {name: np.zeros(D) for name in names}
    G["w_gamma"] = np.zeros((D if g_dense else 1, D))
    G["w_mu"] = np.zeros((D if m_dense else 1, D))
    G["b_mu"] = np.zeros(D)
    cdef double[::1] gw_ir = G["w_ir"], gw_iz = G["w_iz"], gw_in = G["w_in"]
    cdef double[::1] gw_hr = G["w_hr"], gw_hz = G["w_hz"], gw_hn = G["w_hn"]
    cdef double[::1] gb_r = G["b_r"], gb_z = G["b_z"], gb_n = G["b_n"]
    cdef double[::1] gb_g = G["b_gamma"], gb_m = G["b_mu"], gw_out = G["w_out"]
    cdef double[:, ::1] gw_g = G["w_gamma"], gw_m = G["w_mu"]
    cdef double gb_out = 0.0

    gn_np = np.zeros(D)
    cdef double[::1] gnext = gn_np
    cdef Py_ssize_t b, t, d, k, last
    cdef double prev, xv, r, z, q, n, h, mu, gam, e, g, g_h, g_ag, g_mu, g_z, g_an, g_hh, g_q, g_az, g_ar, dlo
    with nogil:
        for b in range(B):
            last = lens[b] - 1
            dlo = dlg[b]
            gb_out += dlo
            for d in range(D):
                gw_out[d] += dlo * hh_all[b, last, d]
                gnext[d] = dlo * w_out[d]
            for t in range(last, -1, -1):
                for d in range(D):
                    g = gnext[d]
                    prev = hh_all[b, t - 1, d] if t > 0 else 0.0
                    xv = x[b, t, d]
                    r = _sig(w_ir[d] * xv + w_hr[d] * prev + b_r[d])
                    z = _sig(w_iz[d] * xv + w_hz[d] * prev + b_z[d])
                    q = r * prev
                    n = tanh(w_in[d] * xv + w_hn[d] * q + b_n[d])
                    h = h_all[b, t, d]
                    mu = mu_all[b, t, d]
                    gam = g_all[b, t, d]
                    e = exp(-gam)

                    g_h = g * e
                    if gam > 0:
                        g_ag = -g * (h - mu) * e
                        gb_g[d] += g_ag
                        if g_dense:
                            for k in range(D):
                                gw_g[d, k] += g_ag * dl[b, t, k]
                        else:
                            gw_g[0, d] += g_ag * dl[b, t, d]
                    if not mu_static:
                        g_mu = g * (1.0 - e)
                        gb_m[d] += g_mu
                        if m_dense:
                            for k in range(D):
                                gw_m[d, k] += g_mu * x[b, t, k]
                        else:
                            gw_m[0, d] += g_mu * xv

                    g_z = g_h * (n - prev)
                    g_an = g_h * z * (1.0 - n * n)
                    g_hh = g_h * (1.0 - z)
                    gw_in[d] += g_an * xv
                    gw_hn[d] += g_an * q
                    gb_n[d] += g_an
                    g_q = g_an * w_hn[d]
                    g_hh = g_hh + g_q * r
                    g_az = g_z * z * (1.0 - z)
                    gw_iz[d] += g_az * xv
                    gw_hz[d] += g_az * prev
                    gb_z[d] += g_az
                    g_hh = g_hh + g_az * w_hz[d]
                    g_ar = g_q * prev * r * (1.0 - r)
                    gw_ir[d] += g_ar * xv
                    gw_hr[d] += g_ar * prev
                    gb_r[d] += g_ar
                    g_hh = g_hh + g_ar * w_hr[d]
                    gnext[d] = g_hh

    out = {name: G[name] for name in names}
    out["b_out"] = np.array(gb_out)
    out["w_gamma"] = G["w_gamma"] if g_dense else G["w_gamma"][0]
    if not mu_static:
        out["w_mu"] = G["w_mu"] if m_dense else G["w_mu"][0]
        out["b_mu"] = G["b_mu"]
    return out


def gru_forward(p, U, L):
    cdef double[:, :, ::1] u = _c(U)
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(L, dtype=np.int64)
    cdef double[:, ::1] Wir = _c(p["W_ir"]), Wiz = _c(p["W_iz"]), Win = _c(p["W_in"])
    cdef double[:, ::1] Whr = _c(p["W_hr"]), Whz = _c(p["W_hz"]), Whn = _c(p["W_hn"])
    cdef double[::1] b_r = _c(p["b_r"]), b_z = _c(p["b_z"]), b_n = _c(p["b_n"]), w_out = _c(p["w_out"])
    cdef double b_out = float(p["b_out"])
    cdef Py_ssize_t B = u.shape[0], T = u.shape[1], I = u.shape[2], H = Whr.shape[0]
    h_np = np.zeros((B, T, H))
    lg_np = np.zeros((B, T))
    ws_np = np.zeros((3, H))
    cdef double[:, :, ::1] h_all = h_np
    cdef double[:, ::1] logits = lg_np
    cdef double[:, ::1] ws = ws_np
    cdef Py_ssize_t b, t, j, k
    cdef double ar, az, an, prev, acc
    with nogil:
        for b in range(B):
            for t in range(lens[b]):
                # ws[0]=r, ws[1]=z, ws[2]=r*prev
                for j in range(H):
                    ar = b_r[j]
                    az = b_z[j]
                    for k in range(I):
                        ar = ar + Wir[j, k] * u[b, t, k]
                        az = az + Wiz[j, k] * u[b, t, k]
                    if t > 0:
                        for k in range(H):
                            ar = ar + Whr[j, k] * h_all[b, t - 1, k]
                            az = az + Whz[j, k] * h_all[b, t - 1, k]
                    ws[0, j] = _sig(ar)
                    ws[1, j] = _sig(az)
                    ws[2, j] = ws[0, j] * (h_all[b, t - 1, j] if t > 0 else 0.0)
                acc = b_out
                for j in range(H):
                    an = b_n[j]
                    for k in range(I):
                        an = an + Win[j, k] * u[b, t, k]
                    for k in range(H):
                        an = an + Whn[j, k] * ws[2, k]
                    prev = h_all[b, t - 1, j] if t > 0 else 0.0
                    h_all[b, t, j] = (1.0 - ws[1, j]) * prev + ws[1, j] * tanh(an)
                    acc = acc + w_out[j] * h_all[b, t, j]
                logits[b, t] = acc
    return h_np, lg_np


def gru_backward(p, U, L, H_all, dlogit):
    cdef double[:, :, ::1] u = _c(U)
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(L, dtype=np.int64)
    cdef double[:, :, ::1] h_all = _c(H_all)
    cdef double[::1] dlg = _c(dlogit)
    cdef double[:, ::1] Wir = _c(p["W_ir"]), Wiz = _c(p["W_iz"]), Win = _c(p["W_in"])
    cdef double[:, ::1] Whr = _c(p["W_hr"]), Whz = _c(p["W_hz"]), Whn = _c(p["W_hn"])
    cdef double[::1] b_r = _c(p["b_r"]), b_z = _c(p["b_z"]), b_n = _c(p["b_n"]), w_out = _c(p["w_out"])
    cdef Py_ssize_t B = u.shape[0], T = u.shape[1], I = u.shape[2], H = Whr.shape[0]
    G = {name: np.zeros_like(np.asarray(val, dtype=np.float64)) for name, val in p.items()}
    cdef double[:, ::1] gWir = G["W_ir"], gWiz = G["W_iz"], gWin = G["W_in"]
    cdef double[:, ::1] gWhr = G["W_hr"], gWhz = G["W_hz"], gWhn = G["W_hn"]
    cdef double[::1] gb_r = G["b_r"], gb_z = G["b_z"], gb_n = G["b_n"], gw_out = G["w_out"]
    cdef double gb_out = 0.0
    # per-step scratch: prev, r, z, q, n, g, g_an, g_az, g_ar, g_q, gnext
    sc_np = np.zeros((11, H))
    cdef double[:, ::1] sc = sc_np
    cdef Py_ssize_t b, t, j, k, last
    cdef double a, dlo, gh
    with nogil:
        for b in range(B):
            last = lens[b] - 1
            dlo = dlg[b]
            gb_out += dlo
            for j in range(H):
                gw_out[j] += dlo * h_all[b, last, j]
                sc[10, j] = dlo * w_out[j]
            for t in range(last, -1, -1):
                for j in range(H):
                    sc[0, j] = h_all[b, t - 1, j] if t > 0 else 0.0
                    sc[5, j] = sc[10, j]
                for j in range(H):
                    a = b_r[j]
                    for k in range(I):
                        a = a + Wir[j, k] * u[b, t, k]
                    for k in range(H):
                        a = a + Whr[j, k] * sc[0, k]
                    sc[1, j] = _sig(a)
                    a = b_z[j]
                    for k in range(I):
                        a = a + Wiz[j, k] * u[b, t, k]
                    for k in range(H):
                        a = a + Whz[j, k] * sc[0, k]
                    sc[2, j] = _sig(a)
                    sc[3, j] = sc[1, j] * sc[0, j]
                for j in range(H):
                    a = b_n[j]
                    for k in range(I):
                        a = a + Win[j, k] * u[b, t, k]
                    for k in range(H):
                        a = a + Whn[j, k] * sc[3, k]
                    sc[4, j] = tanh(a)
                # gate pre-activation cotangents
                for j in range(H):
                    gh = sc[5, j]
                    sc[6, j] = gh * sc[2, j] * (1.0 - sc[4, j] * sc[4, j])
                    sc[7, j] = gh * (sc[4, j] - sc[0, j]) * sc[2, j] * (1.0 - sc[2, j])
                    sc[10, j] = gh * (1.0 - sc[2, j])
                for k in range(H):
                    a = 0.0
                    for j in range(H):
                        a = a + sc[6, j] * Whn[j, k]
                    sc[9, k] = a
                for j in range(H):
                    sc[8, j] = sc[9, j] * sc[0, j] * sc[1, j] * (1.0 - sc[1, j])
                    sc[10, j] = sc[10, j] + sc[9, j] * sc[1, j]
                for j in range(H):
                    gb_n[j] += sc[6, j]
                    gb_z[j] += sc[7, j]
                    gb_r[j] += sc[8, j]
                    for k in range(I):
                        gWin[j, k] += sc[6, j] * u[b, t, k]
                        gWiz[j, k] += sc[7, j] * u[b, t, k]
                        gWir[j, k] += sc[8, j] * u[b, t, k]
                    for k in range(H):
                        gWhn[j, k] += sc[6, j] * sc[3, k]
                        gWhz[j, k] += sc[7, j] * sc[0, k]
                        gWhr[j, k] += sc[8, j] * sc[0, k]
                for k in range(H):
                    a = 0.0
                    for j in range(H):
                        a = a + sc[7, j] * Whz[j, k] + sc[8, j] * Whr[j, k]
                    sc[10, k] = sc[10, k] + a
    G["b_out"] = np.array(gb_out)
    return G
