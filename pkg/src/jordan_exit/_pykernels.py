"""Pure-Python fallback for the compiled stepping loops.

Same signatures and the same floating-point operation order as
``_kernels.pyx``; trajectories agree bit for bit.  Arrays are unpacked to
Python floats because per-element numpy access is slower than list access.
"""
import math

import numpy as np

ST_RUNNING, ST_EXITED, ST_BLOWUP, ST_BUDGET = 0, 1, 2, 3


def _sup(y):
    m = 0.0
    for v in y:
        if abs(v) > m:
            m = abs(v)
    return m


def _transverse(y):
    s = 0.0
    for v in y[1:]:
        s = s + v * v
    return math.sqrt(s)


def _crossing(prev, nxt, r):
    best = 2.0
    face = sgn = 0
    found = False
    for i in range(len(nxt)):
        if abs(nxt[i]) >= r:
            s = 1.0 if nxt[i] > 0 else -1.0
            th = (s * r - prev[i]) / (nxt[i] - prev[i])
            if th < best:
                best, face, sgn, found = th, i, int(s), True
    return found, best, face, sgn


def _finish_substep(y, ynew, h, fstate, istate, inner_r, outer_r, max_steps):
    for v in ynew:
        if not math.isfinite(v):
            istate[2] = ST_BLOWUP
            return y
    istate[0] += 1
    if inner_r > 0 and istate[1] == 0:
        found, theta, _, _ = _crossing(y, ynew, inner_r)
        if found:
            fstate[2] = fstate[0] + theta * h
            istate[1] = 1
    found, theta, face, sgn = _crossing(y, ynew, outer_r)
    if found:
        y = [y[i] + theta * (ynew[i] - y[i]) for i in range(len(y))]
        y[face] = sgn * outer_r
        fstate[0] = fstate[0] + theta * h
        istate[2] = ST_EXITED
        istate[3] = face
        istate[4] = sgn
    else:
        y = list(ynew)
        fstate[0] = fstate[0] + h
    tr = _transverse(y)
    if tr > fstate[1]:
        fstate[1] = tr
    if istate[2] == ST_RUNNING and istate[0] >= max_steps:
        istate[2] = ST_BUDGET
    return y


def _matvec(M, v):
    out = []
    for row in M:
        acc = 0.0
        for a, b in zip(row, v):
            acc = acc + a * b
        out.append(acc)
    return out


def _store(y_arr, fstate_arr, istate_arr, y, fstate, istate):
    y_arr[:] = y
    fstate_arr[:] = fstate
    istate_arr[:] = istate


def advance_linear(y, fstate, istate, z, zr, mats, eps, inner_r, outer_r, switch_frac, dt_c, dt_f, m, max_steps):
    d = y.shape[0]
    nblock = z.shape[0]
    yl, fs, ist = y.tolist(), fstate.tolist(), istate.tolist()
    M = [[mat.tolist() for mat in mats[lvl]] for lvl in range(2)]
    zl = z.tolist()
    zrl = zr.tolist() if m > 1 else None
    consumed = nblock
    for k in range(nblock):
        if ist[2] != ST_RUNNING:
            consumed = k
            break
        target = outer_r
        if inner_r > 0 and ist[1] == 0:
            target = inner_r
        lvl = 1 if _sup(yl) > switch_frac * target else 0
        dt = dt_f if lvl == 1 else dt_c
        base = M[lvl]
        G = _matvec(base[1], zl[k])
        if m == 1:
            tmp = [yl[i] + eps * G[i] for i in range(d)]
            ynew = _matvec(base[0], tmp)
            yl = _finish_substep(yl, ynew, dt, fs, ist, inner_r, outer_r, max_steps)
        else:
            h = dt / m
            row = zrl[k]
            ghat = [_matvec(base[3], row[l * d : (l + 1) * d]) for l in range(m)]
            res = list(G)
            for l in range(m):
                tmp = _matvec(base[4 + l], ghat[l])
                res = [res[i] - tmp[i] for i in range(d)]
            for l in range(m):
                tmp = _matvec(base[4 + m + l], res)
                g = [ghat[l][i] + tmp[i] for i in range(d)]
                tmp = [yl[i] + eps * g[i] for i in range(d)]
                ynew = _matvec(base[2], tmp)
                yl = _finish_substep(yl, ynew, h, fs, ist, inner_r, outer_r, max_steps)
                if ist[2] != ST_RUNNING:
                    break
    _store(y, fstate, istate, yl, fs, ist)
    return consumed


def _drift(y, lam, nonlin):
    d = len(y)
    out = [lam * v for v in y]
    for i in range(d - 1):
        out[i] = out[i] + y[i + 1]
    if nonlin == 1:
        r2 = 0.0
        for v in y:
            r2 = r2 + v * v
        for i in range(d):
            out[i] = out[i] - r2 * y[i]
    elif nonlin == 2:
        out[1] = out[1] + y[0] * y[0]
    return out


def _em_substep(y, dw, h, eps, lam, nonlin, diff, sig):
    b = _drift(y, lam, nonlin)
    d = len(y)
    if diff == 1:
        s = 1.0
        for v in y:
            s = s + v * v
        return [y[i] + h * b[i] + eps * (s * dw[i]) for i in range(d)]
    out = []
    for i in range(d):
        noise = 0.0
        for j in range(d):
            noise = noise + sig[i][j] * dw[j]
        out.append(y[i] + h * b[i] + eps * noise)
    return out


def advance_em(y, fstate, istate, z, zr, sigma, eps, lam, nonlin, diff, inner_r, outer_r, dt, m, max_steps):
    d = y.shape[0]
    nblock = z.shape[0]
    yl, fs, ist = y.tolist(), fstate.tolist(), istate.tolist()
    sig = sigma.tolist()
    zl = z.tolist()
    zrl = zr.tolist() if m > 1 else None
    sq = math.sqrt(dt)
    h = dt / m
    sqh = math.sqrt(h)
    consumed = nblock
    for k in range(nblock):
        if ist[2] != ST_RUNNING:
            consumed = k
            break
        dW = [sq * v for v in zl[k]]
        if m == 1:
            ynew = _em_substep(yl, dW, dt, eps, lam, nonlin, diff, sig)
            yl = _finish_substep(yl, ynew, dt, fs, ist, inner_r, outer_r, max_steps)
        else:
            row = zrl[k]
            S = [0.0] * d
            for l in range(m):
                for i in range(d):
                    S[i] = S[i] + sqh * row[l * d + i]
            for l in range(m):
                dw = [sqh * row[l * d + i] + (dW[i] - S[i]) / m for i in range(d)]
                ynew = _em_substep(yl, dw, h, eps, lam, nonlin, diff, sig)
                yl = _finish_substep(yl, ynew, h, fs, ist, inner_r, outer_r, max_steps)
                if ist[2] != ST_RUNNING:
                    break
    _store(y, fstate, istate, yl, fs, ist)
    return consumed


def _exp_coeffs(lam, s, d):
    coef = [math.exp(lam * s)]
    for j in range(1, d):
        coef.append(coef[j - 1] * s / j)
    return coef


def _nonlinear_batch(y, nonlin):
    out = np.zeros_like(y)
    if nonlin == 1:
        out = -np.sum(y * y, axis=1, keepdims=True) * y
    elif nonlin == 2:
        out[:, 1] = y[:, 0] * y[:, 0]
    return out


def _drift_batch(y, lam, nonlin):
    out = lam * y
    out[:, :-1] += y[:, 1:]
    if nonlin == 1:
        out -= np.sum(y * y, axis=1, keepdims=True) * y
    elif nonlin == 2:
        out[:, 1] += y[:, 0] * y[:, 0]
    return out


def conjugacy_integral(x, lam, nonlin, h, n_fixed, tail_tol, s_min, max_steps, acc):
    # vectorized over the batch; agrees with the compiled kernel to rounding
    n, d = x.shape
    y = np.array(x, dtype=float)
    hb = -h

    def integrand(s, q):
        coef = _exp_coeffs(lam, s, d)
        g = np.zeros_like(q)
        for j in range(d):
            g[:, : d - j] += coef[j] * q[:, j:]
        return g

    acc[:] = _nonlinear_batch(y, nonlin)
    k = 0
    while True:
        k += 1
        if n_fixed <= 0 and k > max_steps:
            return -1
        s = k * h
        done = n_fixed > 0 and k == n_fixed
        w = 1.0 if done else (4.0 if k % 2 == 1 else 2.0)
        k1 = _drift_batch(y, lam, nonlin)
        k2 = _drift_batch(y + 0.5 * hb * k1, lam, nonlin)
        k3 = _drift_batch(y + 0.5 * hb * k2, lam, nonlin)
        k4 = _drift_batch(y + hb * k3, lam, nonlin)
        y = y + (hb / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        g = integrand(s, _nonlinear_batch(y, nonlin))
        acc += w * g
        if n_fixed > 0:
            if done:
                return k
        elif k % 2 == 0 and s >= s_min and np.max(np.abs(g)) / lam < tail_tol:
            acc -= g
            return k
