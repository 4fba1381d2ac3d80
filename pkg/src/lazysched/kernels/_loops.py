"""Scalar-loop kernels.  Written in the numba-compilable subset of Python.

These are compiled by ``_numba``; the vectorized numpy twins live in
``_numpy``.  Both must agree to rounding.
"""

import math

import numpy as np

try:
    from numba.extending import register_jitable as jitable
except ImportError:  # numba missing: helpers stay plain Python
    def jitable(fn):
        return fn

EXP2_CAP = 1000.0


def lazy_backward(stage_energy, terminal, transition, rate_q, len_q, horizon):
    """Backward induction over (slot, backlog index, arrival state).

    stage_energy[k, r]  energy of holding k quanta at candidate rate index r
    terminal[k, i]      J_{N+1}(k, i)
    Returns value[n, k, i] for n = 0..N (row n is slot n+1) and the argmin
    rate index policy[n, k, i] for n = 0..N-1.
    """
    K, m = terminal.shape
    R = rate_q.shape[0]
    value = np.empty((horizon + 1, K, m))
    policy = np.zeros((horizon, K, m), dtype=np.int8)
    value[horizon] = terminal
    G = np.empty((K, m))
    for n in range(horizon - 1, -1, -1):
        nxt = value[n + 1]
        # G[k, i]: expected cost-to-go once the post-transmission backlog is k
        for k in range(K):
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    kk = k + len_q[j]
                    if kk > K - 1:
                        kk = K - 1
                    acc += transition[i, j] * nxt[kk, j]
                G[k, i] = acc
        for k in range(K):
            for i in range(m):
                best = stage_energy[k, 0] + G[k, i]
                arg = 0
                for r in range(1, R):
                    kk = k - rate_q[r]
                    if kk < 0:
                        kk = 0
                    c = stage_energy[k, r] + G[kk, i]
                    if c < best - 1e-12 * abs(best):
                        best = c
                        arg = r
                value[n, k, i] = best
                policy[n, k, i] = arg
    return value, policy


@jitable
def water_bounds(w, e, b, h_next, b_next, inv_gain, s, sw):
    """Upper bounds (w_e, w_b) on a constant water level held from slot n on.

    h_next/b_next hold H and B for slots n+1..N; inv_gain holds 1/gamma for
    slots n..N.
    """
    L = inv_gain.shape[0]
    we = np.inf
    lb = np.inf
    ch = 0.0
    cb = 0.0
    me = 0.0
    mb = 0.0
    for u in range(L):
        if u > 0:
            ch += h_next[u - 1]
            cb += b_next[u - 1]
        m = inv_gain[u] if inv_gain[u] < w else w
        me += m
        mb += math.log2(m) if m > 0.0 else -np.inf
        ve = (e + ch + s * me) / (s * (u + 1))
        if ve < we:
            we = ve
        vb = (b + cb + sw * mb) / (sw * (u + 1))
        if vb < lb:
            lb = vb
    if lb > EXP2_CAP:
        lb = EXP2_CAP
    return we, 2.0 ** lb


@jitable
def water_map(w, e, b, h_next, b_next, inv_gain, s, sw):
    """g(w) = min(w_e, w_b) and the right derivative of the active bound at w.

    Every bound is concave and nondecreasing in w, so the returned slope is a
    supergradient of g.
    """
    L = inv_gain.shape[0]
    we = np.inf
    lb = np.inf
    se = 0.0
    sb = 0.0
    ch = 0.0
    cb = 0.0
    me = 0.0
    mb = 0.0
    active = 0
    for u in range(L):
        if u > 0:
            ch += h_next[u - 1]
            cb += b_next[u - 1]
        if inv_gain[u] > w:
            m = w
            active += 1
        else:
            m = inv_gain[u]
        me += m
        mb += math.log2(m) if m > 0.0 else -np.inf
        ve = (e + ch + s * me) / (s * (u + 1))
        if ve < we:
            we = ve
            se = active / (u + 1.0)
        vb = (b + cb + sw * mb) / (sw * (u + 1))
        if vb < lb:
            lb = vb
            sb = active / (u + 1.0)
    if lb > EXP2_CAP:
        lb = EXP2_CAP
    wb = 2.0 ** lb
    if we <= wb:
        return we, se
    return wb, (wb * sb / w if w > 0.0 else 0.0)


@jitable
def fixed_point(w0, e, b, h_next, b_next, inv_gain, s, sw, tol, max_iter, accelerate):
    """Iterate w <- min(w_e(w), w_b(w)) downward from w0.

    With ``accelerate`` each step jumps to the fixed point of the tangent of
    g at the current iterate; concavity keeps that jump between the greatest
    fixed point and the plain step.  Returns (w, iterations, converged, w3)
    where w3 is the third iterate counting w0 as the first.
    """
    w = w0
    w3 = w0
    for k in range(1, max_iter + 1):
        g, slope = water_map(w, e, b, h_next, b_next, inv_gain, s, sw)
        scale = w if w > 1.0 else 1.0
        if abs(g - w) < tol * scale:
            if k <= 2:
                w3 = g
            return g, k, True, w3
        wn = g
        # slopes within rounding of 1 sit on a w -> w plateau; take the plain step
        if accelerate and g < w and slope < 1.0 - 1e-12:
            wn = (g - slope * w) / (1.0 - slope)
        if k <= 2:
            w3 = wn
        w = wn
    return w, max_iter, False, w3


@jitable
def clamped_step(e, b, rho, rate, s):
    """Slot fraction and consumption when energy or data may run out mid-slot."""
    frac = 1.0
    if rho > 0.0 and rate > 0.0:
        fe = e / (s * rho)
        fb = b / rate
        if fe < frac:
            frac = fe
        if fb < frac:
            frac = fb
    used = frac * s * rho
    if used > e:
        used = e
    sent = frac * rate
    if sent > b:
        sent = b
    return frac, used, sent


def offline_schedule(e0, b0, H, B, gains, s, sw, tol, max_iter, accelerate):
    N = gains.shape[0]
    inv_gain = 1.0 / gains
    w = np.zeros(N)
    rho = np.zeros(N)
    rate = np.zeros(N)
    frac = np.zeros(N)
    used = np.zeros(N)
    sent = np.zeros(N)
    e_start = np.zeros(N)
    b_start = np.zeros(N)
    iters = np.zeros(N, dtype=np.int64)
    converged = np.ones(N, dtype=np.bool_)
    e = e0 + H[0]
    b = b0 + B[0]
    for n in range(N):
        e_start[n] = e
        b_start[n] = b
        h_rest = 0.0
        for l in range(n + 1, N):
            h_rest += H[l]
        g_max = 0.0
        for l in range(n, N):
            if inv_gain[l] > g_max:
                g_max = inv_gain[l]
        w_max = (e + h_rest) / s + g_max
        wn, k, ok, _ = fixed_point(w_max, e, b, H[n + 1:], B[n + 1:], inv_gain[n:], s, sw, tol, max_iter, accelerate)
        w[n] = wn
        iters[n] = k
        converged[n] = ok
        p = wn - inv_gain[n]
        if p < 0.0:
            p = 0.0
        rho[n] = p
        rate[n] = sw * math.log2(1.0 + p * gains[n])
        f, du, ds = clamped_step(e, b, p, rate[n], s)
        frac[n] = f
        used[n] = du
        sent[n] = ds
        e = e - du
        b = b - ds
        if e < 0.0:
            e = 0.0
        if b < 0.0:
            b = 0.0
        if n + 1 < N:
            e += H[n + 1]
            b += B[n + 1]
    return w, rho, rate, frac, used, sent, e_start, b_start, iters, converged, e, b


@jitable
def estimated_bounds(w, n, N, e, b, h_mean, b_mean, inv_gain_hist, s, sw):
    """Online estimates of (w_e, w_b) from running means; n is 1-based."""
    cnt = inv_gain_hist.shape[0]
    me = 0.0
    mb = 0.0
    for l in range(cnt):
        m = inv_gain_hist[l] if inv_gain_hist[l] < w else w
        me += m
        mb += math.log2(m) if m > 0.0 else -np.inf
    me /= cnt
    mb /= cnt
    if n < N and e >= h_mean:
        we = (e - h_mean) / (s * (N - n)) + h_mean / s + me
    else:
        we = e / s + me
    if n < N and b >= b_mean:
        lb = (b - b_mean) / (sw * (N - n)) + b_mean / sw + mb
    else:
        lb = b / sw + mb
    if lb > EXP2_CAP:
        lb = EXP2_CAP
    return we, 2.0 ** lb


def online_heuristic(e0, b0, H, B, gains, s, sw, beta, k_iters):
    N = gains.shape[0]
    inv_gain = 1.0 / gains
    what = np.zeros(N)
    vhat = np.zeros(N)
    rho = np.zeros(N)
    rate = np.zeros(N)
    frac = np.zeros(N)
    used = np.zeros(N)
    sent = np.zeros(N)
    e_start = np.zeros(N)
    b_start = np.zeros(N)
    e = e0 + H[0]
    b = b0 + B[0]
    h_sum = 0.0
    b_sum = 0.0
    v_prev = 0.0
    for n in range(N):
        e_start[n] = e
        b_start[n] = b
        h_sum += H[n]
        b_sum += B[n]
        h_mean = h_sum / (n + 1)
        b_mean = b_sum / (n + 1)
        w = e / s
        if b / sw < w:
            w = b / sw
        for _ in range(k_iters):
            if w <= 0.0:
                break
            we, wb = estimated_bounds(w, n + 1, N, e, b, h_mean, b_mean, inv_gain[:n + 1], s, sw)
            w = we if we < wb else wb
        what[n] = w
        if n == 0:
            v = w
        else:
            v = beta * w + (1.0 - beta) * v_prev
        vhat[n] = v
        v_prev = v
        p = v - inv_gain[n]
        if p < 0.0:
            p = 0.0
        rho[n] = p
        rate[n] = sw * math.log2(1.0 + p * gains[n])
        f, du, ds = clamped_step(e, b, p, rate[n], s)
        frac[n] = f
        used[n] = du
        sent[n] = ds
        e = e - du
        b = b - ds
        if e < 0.0:
            e = 0.0
        if b < 0.0:
            b = 0.0
        if n + 1 < N:
            e += H[n + 1]
            b += B[n + 1]
    return what, vhat, rho, rate, frac, used, sent, e_start, b_start, e, b
