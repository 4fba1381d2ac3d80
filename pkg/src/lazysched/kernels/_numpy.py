"""Pure-numpy implementations of the hot kernels (no numba required)."""

import numpy as np

from ._loops import EXP2_CAP, clamped_step


def lazy_backward(stage_energy, terminal, transition, rate_q, len_q, horizon):
    K, m = terminal.shape
    value = np.empty((horizon + 1, K, m))
    policy = np.zeros((horizon, K, m), dtype=np.int8)
    value[horizon] = terminal
    ks = np.arange(K)
    arrive_idx = np.minimum(ks[:, None] + np.asarray(len_q)[None, :], K - 1)  # (K, m)
    drain_idx = np.maximum(ks[:, None] - np.asarray(rate_q)[None, :], 0)  # (K, R)
    cols = np.arange(m)[None, :]
    for n in range(horizon - 1, -1, -1):
        # nxt_by_j[k, j] = J_{n+1}(k + l(j), j)
        nxt_by_j = value[n + 1][arrive_idx, cols]
        G = nxt_by_j @ transition.T
        best = stage_energy[:, 0][:, None] + G[drain_idx[:, 0]]
        arg = np.zeros((K, m), dtype=np.int8)
        for r in range(1, len(rate_q)):
            c = stage_energy[:, r][:, None] + G[drain_idx[:, r]]
            better = c < best - 1e-12 * np.abs(best)
            best = np.where(better, c, best)
            arg[better] = r
        value[n] = best
        policy[n] = arg
    return value, policy


def water_bounds(w, e, b, h_next, b_next, inv_gain, s, sw):
    ch = np.concatenate(([0.0], np.cumsum(h_next)))
    cb = np.concatenate(([0.0], np.cumsum(b_next)))
    m = np.minimum(inv_gain, w)
    with np.errstate(divide="ignore"):
        logm = np.log2(m)
    me = np.cumsum(m)
    mb = np.cumsum(logm)
    cnt = np.arange(1, len(inv_gain) + 1)
    we = np.min((e + ch + s * me) / (s * cnt))
    lb = np.min((b + cb + sw * mb) / (sw * cnt))
    return float(we), float(2.0 ** min(lb, EXP2_CAP))


def water_map(w, e, b, h_next, b_next, inv_gain, s, sw):
    ch = np.concatenate(([0.0], np.cumsum(h_next)))
    cb = np.concatenate(([0.0], np.cumsum(b_next)))
    m = np.minimum(inv_gain, w)
    with np.errstate(divide="ignore"):
        logm = np.log2(m)
    cnt = np.arange(1, len(inv_gain) + 1)
    active = np.cumsum(inv_gain > w) / cnt
    ce = (e + ch + s * np.cumsum(m)) / (s * cnt)
    cl = (b + cb + sw * np.cumsum(logm)) / (sw * cnt)
    ue = int(np.argmin(ce))
    vb = int(np.argmin(cl))
    we = float(ce[ue])
    wb = float(2.0 ** min(cl[vb], EXP2_CAP))
    if we <= wb:
        return we, float(active[ue])
    return wb, (wb * float(active[vb]) / w if w > 0.0 else 0.0)


def fixed_point(w0, e, b, h_next, b_next, inv_gain, s, sw, tol, max_iter, accelerate):
    w = w0
    w3 = w0
    for k in range(1, max_iter + 1):
        g, slope = water_map(w, e, b, h_next, b_next, inv_gain, s, sw)
        if abs(g - w) < tol * max(w, 1.0):
            if k <= 2:
                w3 = g
            return g, k, True, w3
        wn = g
        if accelerate and g < w and slope < 1.0 - 1e-12:
            wn = (g - slope * w) / (1.0 - slope)
        if k <= 2:
            w3 = wn
        w = wn
    return w, max_iter, False, w3


def _advance(e, b, p, rate, s, n, H, B):
    f, du, ds = clamped_step(e, b, p, rate, s)
    e = max(e - du, 0.0)
    b = max(b - ds, 0.0)
    if n + 1 < len(H):
        e += H[n + 1]
        b += B[n + 1]
    return f, du, ds, e, b


def offline_schedule(e0, b0, H, B, gains, s, sw, tol, max_iter, accelerate):
    N = len(gains)
    inv_gain = 1.0 / gains
    out = {k: np.zeros(N) for k in ("w", "rho", "rate", "frac", "used", "sent", "e_start", "b_start")}
    iters = np.zeros(N, dtype=np.int64)
    converged = np.ones(N, dtype=bool)
    h_tail = np.concatenate((np.cumsum(H[::-1])[::-1][1:], [0.0]))  # sum of H[n+1:]
    g_tail = np.maximum.accumulate(inv_gain[::-1])[::-1]
    e = e0 + H[0]
    b = b0 + B[0]
    for n in range(N):
        out["e_start"][n] = e
        out["b_start"][n] = b
        w_max = (e + h_tail[n]) / s + g_tail[n]
        wn, k, ok, _ = fixed_point(w_max, e, b, H[n + 1:], B[n + 1:], inv_gain[n:], s, sw, tol, max_iter, accelerate)
        p = max(wn - inv_gain[n], 0.0)
        rate = sw * np.log2(1.0 + p * gains[n])
        f, du, ds, e, b = _advance(e, b, p, rate, s, n, H, B)
        for key, val in (("w", wn), ("rho", p), ("rate", rate), ("frac", f), ("used", du), ("sent", ds)):
            out[key][n] = val
        iters[n] = k
        converged[n] = ok
    return (out["w"], out["rho"], out["rate"], out["frac"], out["used"], out["sent"],
            out["e_start"], out["b_start"], iters, converged, e, b)


def estimated_bounds(w, n, N, e, b, h_mean, b_mean, inv_gain_hist, s, sw):
    m = np.minimum(inv_gain_hist, w)
    me = float(np.mean(m))
    with np.errstate(divide="ignore"):
        mb = float(np.mean(np.log2(m)))
    if n < N and e >= h_mean:
        we = (e - h_mean) / (s * (N - n)) + h_mean / s + me
    else:
        we = e / s + me
    if n < N and b >= b_mean:
        lb = (b - b_mean) / (sw * (N - n)) + b_mean / sw + mb
    else:
        lb = b / sw + mb
    return we, float(2.0 ** min(lb, EXP2_CAP))


def online_heuristic(e0, b0, H, B, gains, s, sw, beta, k_iters):
    N = len(gains)
    inv_gain = 1.0 / gains
    keys = ("what", "vhat", "rho", "rate", "frac", "used", "sent", "e_start", "b_start")
    out = {k: np.zeros(N) for k in keys}
    h_mean_all = np.cumsum(H) / np.arange(1, N + 1)
    b_mean_all = np.cumsum(B) / np.arange(1, N + 1)
    e = e0 + H[0]
    b = b0 + B[0]
    v_prev = 0.0
    for n in range(N):
        out["e_start"][n] = e
        out["b_start"][n] = b
        w = min(e / s, b / sw)
        for _ in range(k_iters):
            if w <= 0.0:
                break
            w = min(estimated_bounds(w, n + 1, N, e, b, h_mean_all[n], b_mean_all[n],
                                     inv_gain[:n + 1], s, sw))
        v = w if n == 0 else beta * w + (1.0 - beta) * v_prev
        v_prev = v
        p = max(v - inv_gain[n], 0.0)
        rate = sw * np.log2(1.0 + p * gains[n])
        f, du, ds, e, b = _advance(e, b, p, rate, s, n, H, B)
        for key, val in (("what", w), ("vhat", v), ("rho", p), ("rate", rate),
                         ("frac", f), ("used", du), ("sent", ds)):
            out[key][n] = val
    return tuple(out[k] for k in keys) + (e, b)
