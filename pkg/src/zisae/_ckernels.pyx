# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; numpy twins live in _pykernels.py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs

cnp.import_array()


cdef inline double _expit(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _log1pexp(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def group_stats(X, y, codes, n_areas):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const long long[::1] cv = np.ascontiguousarray(codes, dtype=np.int64)
    cdef Py_ssize_t J = n_areas, n = Xv.shape[0], p = Xv.shape[1]
    n_arr = np.zeros(J, dtype=np.int64)
    sx_arr = np.zeros((J, p))
    sy_arr = np.zeros(J)
    sxx_arr = np.zeros((J, p, p))
    sxy_arr = np.zeros((J, p))
    syy_arr = np.zeros(J)
    cdef long long[::1] nv = n_arr
    cdef double[:, ::1] sx = sx_arr
    cdef double[::1] sy = sy_arr
    cdef double[:, :, ::1] sxx = sxx_arr
    cdef double[:, ::1] sxy = sxy_arr
    cdef double[::1] syy = syy_arr
    cdef Py_ssize_t i, k, l, c
    cdef double yi, xk
    with nogil:
        for i in range(n):
            c = cv[i]
            yi = yv[i]
            nv[c] += 1
            sy[c] += yi
            syy[c] += yi * yi
            for k in range(p):
                xk = Xv[i, k]
                sx[c, k] += xk
                sxy[c, k] += xk * yi
                for l in range(k + 1):
                    sxx[c, k, l] += xk * Xv[i, l]
        for c in range(J):
            for k in range(p):
                for l in range(k):
                    sxx[c, l, k] = sxx[c, k, l]
    return n_arr, sx_arr, sy_arr, sxx_arr, sxy_arr, syy_arr


def laplace_logit(X, z, codes, n_areas, delta, double tau, w_init, double tol, int max_inner):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const long long[::1] cv = np.ascontiguousarray(codes, dtype=np.int64)
    cdef const double[::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t J = n_areas, n = Xv.shape[0], p = Xv.shape[1]
    w_arr = np.array(w_init, dtype=np.float64, copy=True)
    H_arr = np.empty(J)
    eta0_arr = np.empty(n)
    grad_arr = np.zeros(p + 1)
    cdef double[::1] w = w_arr
    cdef double[::1] H = H_arr
    cdef double[::1] eta0 = eta0_arr
    cdef double[::1] grad = grad_arr
    cdef double[::1] g = np.empty(J)
    cdef double[::1] dH = np.empty(J)
    cdef Py_ssize_t i, k, c
    cdef int it = 0
    cdef bint converged = False
    cdef double s2 = exp(tau), acc, pr, v, t, step, maxstep, eta, ll = 0.0, unit, gt = 0.0
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(p):
                acc += Xv[i, k] * dv[k]
            eta0[i] = acc
        while it < max_inner:
            it += 1
            for c in range(J):
                g[c] = 0.0
                H[c] = 0.0
            for i in range(n):
                c = cv[i]
                pr = _expit(eta0[i] + w[c])
                g[c] += zv[i] - pr
                H[c] += pr * (1.0 - pr)
            maxstep = 0.0
            for c in range(J):
                step = (g[c] - w[c] / s2) / (H[c] + 1.0 / s2)
                if step > 10.0:
                    step = 10.0
                elif step < -10.0:
                    step = -10.0
                w[c] += step
                if fabs(step) > maxstep:
                    maxstep = fabs(step)
            if maxstep < tol:
                converged = True
                break
        for c in range(J):
            H[c] = 1.0 / s2
            dH[c] = 0.0
        for i in range(n):
            c = cv[i]
            eta = eta0[i] + w[c]
            pr = _expit(eta)
            v = pr * (1.0 - pr)
            H[c] += v
            dH[c] += v * (1.0 - 2.0 * pr)
            ll += zv[i] * eta - _log1pexp(eta)
        for c in range(J):
            ll += -w[c] * w[c] / (2.0 * s2) - 0.5 * log(s2 * H[c])
            # dH now holds b_c = dH / (2 H^2)
            dH[c] = 0.5 * dH[c] / (H[c] * H[c])
            gt += w[c] * w[c] / (2.0 * s2) - 0.5 + 1.0 / (2.0 * s2 * H[c]) - dH[c] * w[c] / s2
        for i in range(n):
            c = cv[i]
            pr = _expit(eta0[i] + w[c])
            v = pr * (1.0 - pr)
            t = v * (1.0 - 2.0 * pr)
            unit = (zv[i] - pr) - 0.5 * t / H[c] + dH[c] * v
            for k in range(p):
                grad[k] += Xv[i, k] * unit
        grad[p] = gt
    return ll, grad_arr, w_arr, H_arr, it, bool(converged)


def zi_area_means(X, gamma, u, delta, w, codes, n_areas):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const long long[::1] cv = np.ascontiguousarray(codes, dtype=np.int64)
    cdef Py_ssize_t J = n_areas, n = Xv.shape[0], p = Xv.shape[1]
    means_arr = np.zeros(J)
    neg_arr = np.zeros(J, dtype=np.int64)
    mx_arr = np.full(J, -np.inf)
    cdef double[::1] means = means_arr
    cdef long long[::1] neg = neg_arr
    cdef double[::1] mx = mx_arr
    cdef long long[::1] cnt = np.zeros(J, dtype=np.int64)
    cdef Py_ssize_t i, k, c
    cdef double lin, eta, pred
    with nogil:
        for i in range(n):
            c = cv[i]
            lin = uv[c]
            eta = wv[c]
            for k in range(p):
                lin += Xv[i, k] * gv[k]
                eta += Xv[i, k] * dv[k]
            pred = lin * _expit(eta)
            means[c] += pred
            cnt[c] += 1
            if pred < 0:
                neg[c] += 1
            if lin > mx[c]:
                mx[c] = lin
        for c in range(J):
            if cnt[c] > 0:
                means[c] /= cnt[c]
    return means_arr, neg_arr, mx_arr
