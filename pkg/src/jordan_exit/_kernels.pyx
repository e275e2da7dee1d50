# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping loops.

Mirrors :mod:`jordan_exit._pykernels` operation for operation so both
backends produce bit-identical trajectories (build with -ffp-contract=off).
"""
from libc.math cimport fabs, sqrt, exp, isfinite

cdef enum:
    MAXD = 20
    MAXM = 64
    ST_RUNNING = 0
    ST_EXITED = 1
    ST_BLOWUP = 2
    ST_BUDGET = 3


cdef inline double _sup(const double* y, int d) noexcept nogil:
    cdef double m = 0.0
    cdef int i
    for i in range(d):
        if fabs(y[i]) > m:
            m = fabs(y[i])
    return m


cdef inline double _transverse(const double* y, int d) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(1, d):
        s = s + y[i] * y[i]
    return sqrt(s)


cdef inline int _crossing(const double* prev, const double* nxt, int d, double r,
                          double* theta, int* face, int* sgn) noexcept nogil:
    # first face reached under linear interpolation; ties go to the lower index
    cdef double best = 2.0
    cdef double th, s
    cdef int i, found = 0
    for i in range(d):
        if fabs(nxt[i]) >= r:
            s = 1.0 if nxt[i] > 0 else -1.0
            th = (s * r - prev[i]) / (nxt[i] - prev[i])
            if th < best:
                best = th
                face[0] = i
                sgn[0] = <int>s
                found = 1
    theta[0] = best
    return found


cdef inline void _finish_substep(double* y, const double* ynew, int d, double h,
                                 double* fstate, long* istate,
                                 double inner_r, double outer_r, long max_steps) noexcept nogil:
    # fstate = [t, max_transverse, inner_exit_time]
    # istate = [steps, inner_done, status, face, sign]
    cdef double theta
    cdef int face = 0, sgn = 0, i
    cdef double tr
    for i in range(d):
        if not isfinite(ynew[i]):
            istate[2] = ST_BLOWUP
            return
    istate[0] += 1
    if inner_r > 0 and istate[1] == 0:
        if _crossing(y, ynew, d, inner_r, &theta, &face, &sgn):
            fstate[2] = fstate[0] + theta * h
            istate[1] = 1
    if _crossing(y, ynew, d, outer_r, &theta, &face, &sgn):
        for i in range(d):
            y[i] = y[i] + theta * (ynew[i] - y[i])
        y[face] = sgn * outer_r
        fstate[0] = fstate[0] + theta * h
        istate[2] = ST_EXITED
        istate[3] = face
        istate[4] = sgn
    else:
        for i in range(d):
            y[i] = ynew[i]
        fstate[0] = fstate[0] + h
    tr = _transverse(y, d)
    if tr > fstate[1]:
        fstate[1] = tr
    if istate[2] == ST_RUNNING and istate[0] >= max_steps:
        istate[2] = ST_BUDGET


cdef inline void _matvec(const double* M, const double* v, double* out, int d) noexcept nogil:
    cdef int i, j
    cdef double acc
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc = acc + M[i * d + j] * v[j]
        out[i] = acc


def advance_linear(double[::1] y, double[::1] fstate, long[::1] istate,
                   const double[:, ::1] z, const double[:, ::1] zr,
                   const double[:, :, :, ::1] mats,
                   double eps, double inner_r, double outer_r, double switch_frac,
                   double dt_c, double dt_f, int m, long max_steps):
    """Exact Gaussian transitions of the linear SDE over a block of draws.

    ``mats[level]`` stacks ``[M, L, Msub, Lsub, E_1..E_m, K_1..K_m]`` for the
    coarse (0) and fine (1) step.  Returns the number of base draws consumed.
    """
    cdef int d = y.shape[0]
    cdef long nblock = z.shape[0]
    cdef long k
    cdef int i, j, l, lvl
    cdef double target, dt, h
    cdef double G[MAXD]
    cdef double tmp[MAXD]
    cdef double ynew[MAXD]
    cdef double res[MAXD]
    cdef double ghat[MAXM * MAXD]
    cdef double g[MAXD]
    cdef const double* base
    cdef long consumed = nblock
    with nogil:
        for k in range(nblock):
            if istate[2] != ST_RUNNING:
                consumed = k
                break
            target = outer_r
            if inner_r > 0 and istate[1] == 0:
                target = inner_r
            lvl = 1 if _sup(&y[0], d) > switch_frac * target else 0
            dt = dt_f if lvl == 1 else dt_c
            base = &mats[lvl, 0, 0, 0]
            # G = L z
            _matvec(base + d * d, &z[k, 0], G, d)
            if m == 1:
                for i in range(d):
                    tmp[i] = y[i] + eps * G[i]
                _matvec(base, tmp, ynew, d)
                _finish_substep(&y[0], ynew, d, dt, &fstate[0], &istate[0], inner_r, outer_r, max_steps)
            else:
                h = dt / m
                for l in range(m):
                    _matvec(base + 3 * d * d, &zr[k, l * d], &ghat[l * d], d)
                for i in range(d):
                    res[i] = G[i]
                for l in range(m):
                    _matvec(base + (4 + l) * d * d, &ghat[l * d], tmp, d)
                    for i in range(d):
                        res[i] = res[i] - tmp[i]
                for l in range(m):
                    _matvec(base + (4 + m + l) * d * d, res, tmp, d)
                    for i in range(d):
                        g[i] = ghat[l * d + i] + tmp[i]
                    for i in range(d):
                        tmp[i] = y[i] + eps * g[i]
                    _matvec(base + 2 * d * d, tmp, ynew, d)
                    _finish_substep(&y[0], ynew, d, h, &fstate[0], &istate[0], inner_r, outer_r, max_steps)
                    if istate[2] != ST_RUNNING:
                        break
    return consumed


cdef inline void _drift(const double* y, double* out, int d, double lam, int nonlin) noexcept nogil:
    cdef int i
    cdef double r2
    for i in range(d):
        out[i] = lam * y[i]
    for i in range(d - 1):
        out[i] = out[i] + y[i + 1]
    if nonlin == 1:
        r2 = 0.0
        for i in range(d):
            r2 = r2 + y[i] * y[i]
        for i in range(d):
            out[i] = out[i] - r2 * y[i]
    elif nonlin == 2:
        out[1] = out[1] + y[0] * y[0]


cdef inline void _em_substep(double* y, double* ynew, const double* dw, int d, double h,
                             double eps, double lam, int nonlin, int diff,
                             const double* sig) noexcept nogil:
    cdef double b[MAXD]
    cdef double noise
    cdef double s
    cdef int i, j
    _drift(y, b, d, lam, nonlin)
    if diff == 1:
        s = 1.0
        for i in range(d):
            s = s + y[i] * y[i]
        for i in range(d):
            ynew[i] = y[i] + h * b[i] + eps * (s * dw[i])
    else:
        for i in range(d):
            noise = 0.0
            for j in range(d):
                noise = noise + sig[i * d + j] * dw[j]
            ynew[i] = y[i] + h * b[i] + eps * noise


def advance_em(double[::1] y, double[::1] fstate, long[::1] istate,
               const double[:, ::1] z, const double[:, ::1] zr,
               const double[:, ::1] sigma,
               double eps, double lam, int nonlin, int diff,
               double inner_r, double outer_r, double dt, int m, long max_steps):
    """Euler-Maruyama over a block of draws; ``m > 1`` splits each step with a
    Brownian-bridge-coupled refinement."""
    cdef int d = y.shape[0]
    cdef long nblock = z.shape[0]
    cdef long k
    cdef int i, l
    cdef double sq = sqrt(dt)
    cdef double h = dt / m
    cdef double sqh = sqrt(h)
    cdef double dW[MAXD]
    cdef double S[MAXD]
    cdef double dw[MAXD]
    cdef double ynew[MAXD]
    cdef long consumed = nblock
    with nogil:
        for k in range(nblock):
            if istate[2] != ST_RUNNING:
                consumed = k
                break
            for i in range(d):
                dW[i] = sq * z[k, i]
            if m == 1:
                _em_substep(&y[0], ynew, dW, d, dt, eps, lam, nonlin, diff, &sigma[0, 0])
                _finish_substep(&y[0], ynew, d, dt, &fstate[0], &istate[0], inner_r, outer_r, max_steps)
            else:
                for i in range(d):
                    S[i] = 0.0
                for l in range(m):
                    for i in range(d):
                        S[i] = S[i] + sqh * zr[k, l * d + i]
                for l in range(m):
                    for i in range(d):
                        dw[i] = sqh * zr[k, l * d + i] + (dW[i] - S[i]) / m
                    _em_substep(&y[0], ynew, dw, d, h, eps, lam, nonlin, diff, &sigma[0, 0])
                    _finish_substep(&y[0], ynew, d, h, &fstate[0], &istate[0], inner_r, outer_r, max_steps)
                    if istate[2] != ST_RUNNING:
                        break
    return consumed


cdef inline void _nonlinear(const double* y, double* out, int d, int nonlin) noexcept nogil:
    cdef int i
    cdef double r2
    for i in range(d):
        out[i] = 0.0
    if nonlin == 1:
        r2 = 0.0
        for i in range(d):
            r2 = r2 + y[i] * y[i]
        for i in range(d):
            out[i] = -r2 * y[i]
    elif nonlin == 2:
        out[1] = y[0] * y[0]


def conjugacy_integral(const double[:, ::1] x, double lam, int nonlin, double h,
                       long n_fixed, double tail_tol, double s_min, long max_steps,
                       double[:, ::1] acc):
    """Composite Simpson sum of ``exp(A s) psi(y) |y|**2`` along the backward RK4 flow.

    ``acc`` receives the weighted sum (multiply by ``h/3``).  With
    ``n_fixed > 0`` exactly that many steps are taken; otherwise steps continue
    (in pairs) until the integrand drops below ``lam * tail_tol``.  Returns the
    step count, or -1 when ``max_steps`` is exceeded.
    """
    cdef int n = x.shape[0]
    cdef int d = x.shape[1]
    cdef long k = 0
    cdef int p, i, j, done
    cdef double s, gmax, w, c
    cdef double coef[MAXD]
    cdef double k1[MAXD]
    cdef double k2[MAXD]
    cdef double k3[MAXD]
    cdef double k4[MAXD]
    cdef double tmp[MAXD]
    cdef double q[MAXD]
    cdef double gv
    cdef double hb = -h
    cdef long result = 0
    import numpy as np
    cdef double[:, ::1] y = np.array(x, dtype=np.float64, order="C")
    with nogil:
        # s = 0: exp(A 0) = I
        for p in range(n):
            _nonlinear(&y[p, 0], q, d, nonlin)
            for i in range(d):
                acc[p, i] = q[i]
        while True:
            k += 1
            if n_fixed <= 0 and k > max_steps:
                result = -1
                break
            s = k * h
            c = exp(lam * s)
            coef[0] = c
            for j in range(1, d):
                coef[j] = coef[j - 1] * s / j
            if n_fixed > 0:
                done = 1 if k == n_fixed else 0
            else:
                done = 0
            w = 1.0 if done else (4.0 if k % 2 == 1 else 2.0)
            gmax = 0.0
            for p in range(n):
                _drift(&y[p, 0], k1, d, lam, nonlin)
                for i in range(d):
                    tmp[i] = y[p, i] + 0.5 * hb * k1[i]
                _drift(tmp, k2, d, lam, nonlin)
                for i in range(d):
                    tmp[i] = y[p, i] + 0.5 * hb * k2[i]
                _drift(tmp, k3, d, lam, nonlin)
                for i in range(d):
                    tmp[i] = y[p, i] + hb * k3[i]
                _drift(tmp, k4, d, lam, nonlin)
                for i in range(d):
                    y[p, i] = y[p, i] + (hb / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                _nonlinear(&y[p, 0], q, d, nonlin)
                for i in range(d):
                    gv = 0.0
                    for j in range(d - i):
                        gv = gv + coef[j] * q[i + j]
                    if fabs(gv) > gmax:
                        gmax = fabs(gv)
                    tmp[i] = gv
                for i in range(d):
                    acc[p, i] = acc[p, i] + w * tmp[i]
            if n_fixed > 0:
                if done:
                    result = k
                    break
            elif k % 2 == 0 and s >= s_min and gmax / lam < tail_tol:
                # this last point was accumulated with weight 2; Simpson end weight is 1
                for p in range(n):
                    _nonlinear(&y[p, 0], q, d, nonlin)
                    for i in range(d):
                        gv = 0.0
                        for j in range(d - i):
                            gv = gv + coef[j] * q[i + j]
                        acc[p, i] = acc[p, i] - gv
                result = k
                break
    return result
