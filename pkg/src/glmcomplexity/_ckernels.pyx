# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Stieltjes kernels; mirrors ``_kernels_py`` step for step."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, fmax

cdef extern from "complex.h" nogil:
    double cabs(double complex)
    double creal(double complex)
    double cimag(double complex)

cnp.import_array()

cdef int OK = 0
cdef int NOT_CONVERGED = 1
cdef int LEFT_UPPER_HALF = 2

cdef double _SHRINK = 0.5
cdef double _MIN_SHRINK = 0.99
cdef int _NEWTON_STEPS = 60


cdef inline void _sums(const double[::1] w, const double[::1] p, double alpha,
                       double complex g, double complex* s1, double complex* s2) noexcept nogil:
    cdef Py_ssize_t j
    cdef double complex d, t
    cdef double complex a1 = 0.0
    cdef double complex a2 = 0.0
    for j in range(w.shape[0]):
        d = alpha + w[j] * g
        t = w[j] / d
        a1 = a1 + p[j] * t
        a2 = a2 + p[j] * t * t
    s1[0] = a1
    s2[0] = a2


cdef inline double _res(double complex g, double complex z, double alpha, double complex s1) noexcept nogil:
    return cabs(g + 1.0 / (z - alpha * s1))


cdef int _newton(const double[::1] w, const double[::1] p, double alpha, double complex z,
                 double complex* gp, double tol, int budget, int* used) noexcept nogil:
    cdef double complex g = gp[0]
    cdef double complex s1, s2, n1, n2, h, hn, hp, step, gn
    cdef double t, dg
    cdef int it = 0, k
    cdef bint accepted
    _sums(w, p, alpha, g, &s1, &s2)
    h = -1.0 / g - z + alpha * s1
    while it < budget:
        it += 1
        hp = 1.0 / (g * g) - alpha * s2
        if hp == 0:
            gp[0] = g
            used[0] += it
            return 0
        step = h / hp
        t = 1.0
        accepted = False
        for k in range(60):
            gn = g - t * step
            if cimag(gn) > 0.0:
                _sums(w, p, alpha, gn, &n1, &n2)
                hn = -1.0 / gn - z + alpha * n1
                if cabs(hn) <= cabs(h) or t < 1e-3:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            gp[0] = g
            used[0] += it
            return 0
        dg = cabs(gn - g)
        g = gn
        h = hn
        s1 = n1
        s2 = n2
        if dg <= 1e-15 * (1.0 + cabs(g)):
            break
        if _res(g, z, alpha, s1) <= 0.01 * tol * fmax(1.0, cabs(g)):
            break
    gp[0] = g
    used[0] += it
    return _res(g, z, alpha, s1) <= tol * fmax(1.0, cabs(g))


cdef int _fixed_point(const double[::1] w, const double[::1] p, double alpha, double complex z,
                      double complex* gp, double tol, long budget, int* used) noexcept nogil:
    cdef double theta = 0.5
    cdef double prev = 1e308
    cdef double r
    cdef double complex g = gp[0]
    cdef double complex s1, s2, target, gn
    cdef long it = 0
    while it < budget:
        it += 1
        _sums(w, p, alpha, g, &s1, &s2)
        target = -1.0 / (z - alpha * s1)
        r = cabs(g - target)
        if r <= tol * fmax(1.0, cabs(g)):
            gp[0] = g
            used[0] += <int>it
            return 1
        if r > prev:
            theta = fmax(0.5 * theta, 1e-3)
        prev = r
        gn = (1.0 - theta) * g + theta * target
        if cimag(gn) <= 0.0:
            theta = fmax(0.5 * theta, 1e-3)
            continue
        g = gn
    gp[0] = g
    used[0] += <int>it
    return 0


cdef int _solve_point(const double[::1] w, const double[::1] p, double alpha, double complex z,
                      double complex g0, bint warm, double tol, long maxiter,
                      double complex* out, int* used) noexcept nogil:
    cdef double complex g, gn, zc, zn
    cdef double scale, eta, eta_next, ratio, wmax = 0.0
    cdef Py_ssize_t j
    cdef int ok
    used[0] = 0
    if warm and cimag(g0) > 0.0:
        g = g0
        if _newton(w, p, alpha, z, &g, tol, _NEWTON_STEPS, used):
            out[0] = g
            return OK
    for j in range(w.shape[0]):
        wmax = fmax(wmax, fabs(w[j]))
    scale = 1.0 + fabs(creal(z)) + 4.0 * wmax
    eta = fmax(cimag(z), scale)
    zc = creal(z) + 1j * eta
    g = -1.0 / zc
    if not _fixed_point(w, p, alpha, zc, &g, 1e-13, maxiter, used):
        out[0] = g
        return NOT_CONVERGED
    ratio = _SHRINK
    while eta > cimag(z) and used[0] < maxiter:
        eta_next = fmax(cimag(z), eta * ratio)
        zn = creal(z) + 1j * eta_next
        gn = g
        if _newton(w, p, alpha, zn, &gn, 1e-13, _NEWTON_STEPS, used):
            g = gn
            eta = eta_next
            ratio = fmax(ratio * ratio, _SHRINK)
        else:
            ratio = sqrt(ratio)
            if ratio > _MIN_SHRINK:
                out[0] = g
                return NOT_CONVERGED
    if eta > cimag(z):
        out[0] = g
        return NOT_CONVERGED
    ok = _newton(w, p, alpha, z, &g, tol, _NEWTON_STEPS, used)
    out[0] = g
    if cimag(g) <= 0.0:
        return LEFT_UPPER_HALF
    return OK if ok else NOT_CONVERGED


def solve_stieltjes_batch(w, p, double alpha, z, g0, double tol, long maxiter, bint sequential_warm):
    """Solve the self-consistent Stieltjes equation at every ``z``.

    Same contract as ``_kernels_py.solve_stieltjes_batch``.
    """
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double complex[::1] zv = np.ascontiguousarray(z, dtype=np.complex128)
    cdef const double complex[::1] g0v = np.ascontiguousarray(g0, dtype=np.complex128)
    cdef Py_ssize_t n = zv.shape[0], i
    g_out = np.empty(n, dtype=np.complex128)
    res_out = np.empty(n, dtype=np.float64)
    its_out = np.empty(n, dtype=np.int64)
    st_out = np.empty(n, dtype=np.int64)
    cdef double complex[::1] gv = g_out
    cdef double[::1] rv = res_out
    cdef long long[::1] iv = its_out
    cdef long long[::1] sv = st_out
    cdef double complex start, prev = 0.0, gi, s1, s2
    cdef bint have_prev = False, warm
    cdef int used, st
    with nogil:
        for i in range(n):
            if cimag(g0v[i]) > 0.0:
                start = g0v[i]
                warm = True
            elif sequential_warm and have_prev:
                start = prev
                warm = True
            else:
                start = 0.0
                warm = False
            st = _solve_point(wv, pv, alpha, zv[i], start, warm, tol, maxiter, &gi, &used)
            gv[i] = gi
            iv[i] = used
            sv[i] = st
            _sums(wv, pv, alpha, gi, &s1, &s2)
            rv[i] = _res(gi, zv[i], alpha, s1)
            have_prev = st == OK
            prev = gi
    return g_out, res_out, its_out, st_out
