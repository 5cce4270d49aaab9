"""Small Newton solver with a central-difference Jacobian.

Used to polish fixed points whose Jacobian has weak directions (entries of
order epsilon). There the residual is not monotone along the Newton path, so
a step that fails to reduce it is still taken when it stays in the domain;
the best iterate is returned.
"""

from __future__ import annotations

import numpy as np


def newton_fd(fun, v0, *, h: float = 1e-6, tol: float = 1e-12, maxiter: int = 80, valid=None):
    """Solve ``fun(v) = 0``; returns ``(v, |fun(v)|_inf, converged)``.

    ``valid(v)`` (optional) tells whether ``v`` lies in the domain; steps are
    halved until it does.
    """
    valid = valid or (lambda v: True)
    v = np.asarray(v0, dtype=float).copy()
    r = np.asarray(fun(v), dtype=float)
    norm = np.max(np.abs(r))
    best = (v.copy(), norm)
    for _ in range(maxiter):
        if norm <= tol:
            break
        J = np.empty((r.size, v.size))
        for j in range(v.size):
            e = np.zeros_like(v)
            e[j] = h * max(1.0, abs(v[j]))
            J[:, j] = (np.asarray(fun(v + e)) - np.asarray(fun(v - e))) / (2 * e[j])
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        vn = rn = None
        first_valid = None
        while t > 1e-4:
            cand = v + t * step
            if valid(cand):
                rc = np.asarray(fun(cand), dtype=float)
                if first_valid is None:
                    first_valid = (cand, rc)
                if np.max(np.abs(rc)) < norm:
                    vn, rn = cand, rc
                    break
            t *= 0.5
        if vn is None:
            if first_valid is None:
                break
            vn, rn = first_valid
        v, r = vn, rn
        norm = np.max(np.abs(r))
        if norm < best[1]:
            best = (v.copy(), norm)
    return best[0], best[1], best[1] <= tol
