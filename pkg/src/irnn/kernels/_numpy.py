"""Vectorized numpy kernels: batched forward and hand-written BPTT.

Every function here has a twin with the same signature in the compiled
``_cy`` extension.  Arrays are float64, batch-major: ``X`` and ``DL`` are
(B, T, D), ``L`` holds valid lengths.  The loss only touches step ``L[b]-1``
of each sample, so padded steps receive zero gradient and their forward
values are zeroed on output.
"""
import numpy as np


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _affine(W, x, b):
    if W.ndim == 1:
        return W * x + b
    return x @ W.T + b


def _valid(L, T):
    return (np.arange(T)[None, :] < L[:, None]).astype(np.float64)


def irnn_forward(p, X, DL, L, mu_static):
    B, T, D = X.shape
    h_all = np.zeros((B, T, D))
    hh_all = np.zeros((B, T, D))
    mu_all = np.zeros((B, T, D))
    g_all = np.zeros((B, T, D))
    hh = np.zeros((B, D))
    for t in range(T):
        x = X[:, t]
        r = _sigmoid(p["w_ir"] * x + p["w_hr"] * hh + p["b_r"])
        z = _sigmoid(p["w_iz"] * x + p["w_hz"] * hh + p["b_z"])
        n = np.tanh(p["w_in"] * x + p["w_hn"] * (r * hh) + p["b_n"])
        h = (1.0 - z) * hh + z * n
        mu = np.zeros((B, D)) if mu_static else _affine(p["w_mu"], x, p["b_mu"])
        gamma = np.maximum(_affine(p["w_gamma"], DL[:, t], p["b_gamma"]), 0.0)
        e = np.exp(-gamma)
        hh = e * h + (1.0 - e) * mu
        h_all[:, t], hh_all[:, t], mu_all[:, t], g_all[:, t] = h, hh, mu, gamma
    v = _valid(L, T)[:, :, None]
    h_all *= v
    hh_all *= v
    mu_all *= v
    g_all *= v
    logits = (hh_all @ p["w_out"] + p["b_out"]) * v[:, :, 0]
    return h_all, hh_all, mu_all, g_all, logits


def irnn_backward(p, X, DL, L, h_all, hh_all, mu_all, g_all, dlogit, mu_static):
    B, T, D = X.shape
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    last = L - 1
    rows = np.arange(B)
    grads["b_out"] = np.array(dlogit.sum())
    grads["w_out"] = dlogit @ hh_all[rows, last]
    inject = dlogit[:, None] * p["w_out"][None, :]
    g_next = np.zeros((B, D))
    for t in range(T - 1, -1, -1):
        at_last = (last == t)[:, None]
        g = g_next + np.where(at_last, inject, 0.0)
        x, dl = X[:, t], DL[:, t]
        hh = hh_all[:, t - 1] if t > 0 else np.zeros((B, D))
        r = _sigmoid(p["w_ir"] * x + p["w_hr"] * hh + p["b_r"])
        z = _sigmoid(p["w_iz"] * x + p["w_hz"] * hh + p["b_z"])
        q = r * hh
        n = np.tanh(p["w_in"] * x + p["w_hn"] * q + p["b_n"])
        h, mu, gamma = h_all[:, t], mu_all[:, t], g_all[:, t]
        e = np.exp(-gamma)

        g_h = g * e
        g_ag = np.where(gamma > 0, -g * (h - mu) * e, 0.0)
        if p["w_gamma"].ndim == 1:
            grads["w_gamma"] += (g_ag * dl).sum(0)
        else:
            grads["w_gamma"] += g_ag.T @ dl
        grads["b_gamma"] += g_ag.sum(0)
        if not mu_static:
            g_mu = g * (1.0 - e)
            if p["w_mu"].ndim == 1:
                grads["w_mu"] += (g_mu * x).sum(0)
            else:
                grads["w_mu"] += g_mu.T @ x
            grads["b_mu"] += g_mu.sum(0)

        g_z = g_h * (n - hh)
        g_an = g_h * z * (1.0 - n * n)
        g_hh = g_h * (1.0 - z)
        grads["w_in"] += (g_an * x).sum(0)
        grads["w_hn"] += (g_an * q).sum(0)
        grads["b_n"] += g_an.sum(0)
        g_q = g_an * p["w_hn"]
        g_hh += g_q * r
        g_az = g_z * z * (1.0 - z)
        grads["w_iz"] += (g_az * x).sum(0)
        grads["w_hz"] += (g_az * hh).sum(0)
        grads["b_z"] += g_az.sum(0)
        g_hh += g_az * p["w_hz"]
        g_ar = g_q * hh * r * (1.0 - r)
        grads["w_ir"] += (g_ar * x).sum(0)
        grads["w_hr"] += (g_ar * hh).sum(0)
        grads["b_r"] += g_ar.sum(0)
        g_hh += g_ar * p["w_hr"]
        g_next = g_hh
    return grads


def gru_forward(p, U, L):
    B, T, _ = U.shape
    H = p["W_hr"].shape[0]
    h_all = np.zeros((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        u = U[:, t]
        r = _sigmoid(u @ p["W_ir"].T + h @ p["W_hr"].T + p["b_r"])
        z = _sigmoid(u @ p["W_iz"].T + h @ p["W_hz"].T + p["b_z"])
        n = np.tanh(u @ p["W_in"].T + (r * h) @ p["W_hn"].T + p["b_n"])
        h = (1.0 - z) * h + z * n
        h_all[:, t] = h
    v = _valid(L, T)
    h_all *= v[:, :, None]
    logits = (h_all @ p["w_out"] + p["b_out"]) * v
    return h_all, logits


def gru_backward(p, U, L, h_all, dlogit):
    B, T, _ = U.shape
    H = p["W_hr"].shape[0]
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    last = L - 1
    rows = np.arange(B)
    grads["b_out"] = np.array(dlogit.sum())
    grads["w_out"] = dlogit @ h_all[rows, last]
    inject = dlogit[:, None] * p["w_out"][None, :]
    g_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = g_next + np.where((last == t)[:, None], inject, 0.0)
        u = U[:, t]
        hh = h_all[:, t - 1] if t > 0 else np.zeros((B, H))
        r = _sigmoid(u @ p["W_ir"].T + hh @ p["W_hr"].T + p["b_r"])
        z = _sigmoid(u @ p["W_iz"].T + hh @ p["W_hz"].T + p["b_z"])
        q = r * hh
        n = np.tanh(u @ p["W_in"].T + q @ p["W_hn"].T + p["b_n"])

        g_z = g * (n - hh)
        g_an = g * z * (1.0 - n * n)
        g_hh = g * (1.0 - z)
        grads["W_in"] += g_an.T @ u
        grads["W_hn"] += g_an.T @ q
        grads["b_n"] += g_an.sum(0)
        g_q = g_an @ p["W_hn"]
        g_hh += g_q * r
        g_az = g_z * z * (1.0 - z)
        grads["W_iz"] += g_az.T @ u
        grads["W_hz"] += g_az.T @ hh
        grads["b_z"] += g_az.sum(0)
        g_hh += g_az @ p["W_hz"]
        g_ar = g_q * hh * r * (1.0 - r)
        grads["W_ir"] += g_ar.T @ u
        grads["W_hr"] += g_ar.T @ hh
        grads["b_r"] += g_ar.sum(0)
        g_hh += g_ar @ p["W_hr"]
        g_next = g_hh
    return grads
