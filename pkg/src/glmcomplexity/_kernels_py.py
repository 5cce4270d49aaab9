"""Pure-Python reference kernels (fallback when the compiled core is absent).

The compiled module ``_ckernels`` implements the same functions with the same
signatures and the same iteration sequence.
"""

from __future__ import annotations

import math

import numpy as np

OK, NOT_CONVERGED, LEFT_UPPER_HALF = 0, 1, 2

_SHRINK = 0.5  # continuation ratio for Im z
_MIN_SHRINK = 0.99
_NEWTON_STEPS = 60


def _sums(w, p, alpha, g):
    d = alpha + w * g
    s1 = np.sum(p * w / d)
    s2 = np.sum(p * (w * w) / (d * d))
    return s1, s2


def _residual(w, p, alpha, z, g):
    s1, _ = _sums(w, p, alpha, g)
    return abs(g + 1.0 / (z - alpha * s1))


def _newton(w, p, alpha, z, g, tol, budget):
    """Newton on ``h(g) = -1/g - z + alpha S(g)`` kept inside the upper half plane.

    Returns ``(g, iterations, converged)``.
    """
    it = 0
    s1, s2 = _sums(w, p, alpha, g)
    h = -1.0 / g - z + alpha * s1
    while it < budget:
        it += 1
        hp = 1.0 / (g * g) - alpha * s2
        if hp == 0:
            return g, it, False
        step = h / hp
        t = 1.0
        accepted = False
        for _ in range(60):
            gn = g - t * step
            if gn.imag > 0.0:
                n1, n2 = _sums(w, p, alpha, gn)
                hn = -1.0 / gn - z + alpha * n1
                if abs(hn) <= abs(h) or t < 1e-3:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return g, it, False
        dg = abs(gn - g)
        g, h, s1, s2 = gn, hn, n1, n2
        if dg <= 1e-15 * (1.0 + abs(g)):
            break
        if abs(g + 1.0 / (z - alpha * s1)) <= 0.01 * tol * max(1.0, abs(g)):
            break
    return g, it, abs(g + 1.0 / (z - alpha * s1)) <= tol * max(1.0, abs(g))


def _fixed_point(w, p, alpha, z, g, tol, budget):
    """Damped iteration ``g <- (1-theta) g + theta G(g)``, theta lowered on oscillation."""
    theta = 0.5
    prev = math.inf
    it = 0
    while it < budget:
        it += 1
        s1, _ = _sums(w, p, alpha, g)
        target = -1.0 / (z - alpha * s1)
        r = abs(g - target)
        if r <= tol * max(1.0, abs(g)):
            return g, it, True
        if r > prev:
            theta = max(0.5 * theta, 1e-3)
        prev = r
        gn = (1.0 - theta) * g + theta * target
        if gn.imag <= 0.0:
            theta = max(0.5 * theta, 1e-3)
            continue
        g = gn
    return g, it, False


def _solve_point(w, p, alpha, z, g0, tol, maxiter):
    used = 0
    if g0 is not None and g0.imag > 0.0:
        g, it, ok = _newton(w, p, alpha, z, g0, tol, _NEWTON_STEPS)
        used += it
        if ok:
            return g, used, OK
    # cold start: fixed point far from the real axis, then continuation in Im z
    scale = 1.0 + abs(z.real) + 4.0 * float(np.max(np.abs(w)))
    eta = max(z.imag, scale)
    zc = complex(z.real, eta)
    g, it, ok = _fixed_point(w, p, alpha, zc, -1.0 / zc, 1e-13, maxiter)
    used += it
    if not ok:
        return g, used, NOT_CONVERGED
    ratio = _SHRINK
    while eta > z.imag and used < maxiter:
        eta_next = max(z.imag, eta * ratio)
        zn = complex(z.real, eta_next)
        gn, it, ok = _newton(w, p, alpha, zn, g, 1e-13, _NEWTON_STEPS)
        used += it
        if ok:
            g, eta = gn, eta_next
            ratio = max(ratio * ratio, _SHRINK)
        else:
            ratio = math.sqrt(ratio)
            if ratio > _MIN_SHRINK:
                return g, used, NOT_CONVERGED
    if eta > z.imag:
        return g, used, NOT_CONVERGED
    g, it, ok = _newton(w, p, alpha, z, g, tol, _NEWTON_STEPS)
    used += it
    if g.imag <= 0.0:
        return g, used, LEFT_UPPER_HALF
    return g, used, OK if ok else NOT_CONVERGED


def solve_stieltjes_batch(w, p, alpha, z, g0, tol, maxiter, sequential_warm):
    """Solve the self-consistent Stieltjes equation at every ``z``.

    ``g0`` holds starting values (entries with ``Im <= 0`` mean cold start).
    When ``sequential_warm`` is true, each point also tries the previous
    point's solution as starting value.
    Returns ``(g, residual, iterations, status)`` arrays.
    """
    w = np.ascontiguousarray(w, dtype=float)
    p = np.ascontiguousarray(p, dtype=float)
    z = np.ascontiguousarray(z, dtype=complex)
    g0 = np.ascontiguousarray(g0, dtype=complex)
    n = z.shape[0]
    g = np.empty(n, dtype=complex)
    res = np.empty(n)
    its = np.empty(n, dtype=np.int64)
    status = np.empty(n, dtype=np.int64)
    prev = None
    for i in range(n):
        start = g0[i] if g0[i].imag > 0 else (prev if sequential_warm else None)
        gi, it, st = _solve_point(w, p, alpha, z[i], start, tol, maxiter)
        g[i], its[i], status[i] = gi, it, st
        res[i] = _residual(w, p, alpha, z[i], gi)
        prev = gi if st == OK else None
    return g, res, its, status
