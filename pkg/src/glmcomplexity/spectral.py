"""Spectral law of ``(1/m) z D zᵀ`` with ``D`` distributed as a weight law.

The Stieltjes transform ``g`` of the limiting law solves

    g = -1 / (z - alpha * E[w / (alpha + w g)])

for ``w`` drawn from the weight law (the pushforward of a measure under
``phi''``). Densities come from Stieltjes inversion and logarithmic
potentials from the real part of the free-energy function ``F(z, g)``, which
is stationary in ``g`` at the solution.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .activations import Activation
from .measures import DiscreteMeasure, pushforward

DEFAULT_TOL = 1e-12
DEFAULT_MAXITER = 100_000
EPSILON_SCHEDULE = (1e-3, 1e-4, 1e-5)
SPREAD_LIMIT = 1e-3


class StieltjesConvergenceError(RuntimeError):
    """The fixed point could not be reached at the requested ``z``."""


class BranchCutError(ValueError):
    """``alpha + w g`` touched the principal branch cut of the logarithm."""


class LogPotentialError(ArithmeticError):
    """Extrapolation in epsilon did not settle (``t`` is at a singular point)."""


@dataclass(frozen=True)
class StieltjesPoint:
    z: complex
    g: complex
    residual: float
    iterations: int


@dataclass(frozen=True)
class LogPotential:
    """``value`` is the extrapolated potential, ``error`` the schedule spread."""

    value: float
    error: float
    raw: tuple[float, ...]


def _law_arrays(weight_law: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Merge repeated weights so constant laws cost one term."""
    if weight_law.dim != 1:
        raise ValueError("weight law must be one-dimensional")
    w, inverse = np.unique(weight_law.nodes, return_inverse=True)
    p = np.bincount(inverse.ravel(), weights=weight_law.weights, minlength=w.size)
    return np.ascontiguousarray(w), np.ascontiguousarray(p)


def _check_alpha(alpha: float) -> None:
    if not alpha > 1.0:
        raise ValueError(f"alpha must exceed 1, got {alpha}")


def solve_grid(
    weight_law: DiscreteMeasure,
    alpha: float,
    z,
    *,
    g0=None,
    warm: bool = True,
    tol: float = DEFAULT_TOL,
    maxiter: int = DEFAULT_MAXITER,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized solve over an array of ``z``; returns ``(g, residual, iterations, status)``.

    Status codes: 0 converged, 1 no convergence, 2 iterate left the upper half plane.
    With ``warm`` each point starts from its predecessor's solution.
    """
    _check_alpha(alpha)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("every z must have positive imaginary part")
    w, p = _law_arrays(weight_law)
    start = np.zeros(z.shape, dtype=complex) if g0 is None else np.broadcast_to(
        np.asarray(g0, dtype=complex), z.shape
    )
    g, res, its, status = _backend.kernels.solve_stieltjes_batch(
        w, p, float(alpha), z.ravel(), start.ravel(), float(tol), int(maxiter), bool(warm)
    )
    shape = z.shape
    return g.reshape(shape), res.reshape(shape), its.reshape(shape), status.reshape(shape)


def solve_stieltjes(
    weight_law: DiscreteMeasure,
    alpha: float,
    z: complex,
    *,
    g0: complex | None = None,
    tol: float = DEFAULT_TOL,
    maxiter: int = DEFAULT_MAXITER,
) -> StieltjesPoint:
    """Solve the self-consistent equation at a single ``z`` in the upper half plane.

    Raises:
        StieltjesConvergenceError: no convergence within ``maxiter`` sweeps, or
            the iterate left the upper half plane. Moving ``z`` further from the
            real axis usually helps.
    """
    g, res, its, status = solve_grid(
        weight_law, alpha, [z], g0=None if g0 is None else [g0], warm=False, tol=tol,
        maxiter=maxiter,
    )
    if status[0] == _backend.LEFT_UPPER_HALF:
        raise StieltjesConvergenceError(f"iterate left the upper half plane at z={z}")
    if status[0] != _backend.OK:
        raise StieltjesConvergenceError(f"no convergence at z={z} (residual {res[0]:.2e})")
    return StieltjesPoint(complex(z), complex(g[0]), float(res[0]), int(its[0]))


def F_value(weight_law: DiscreteMeasure, alpha: float, z, g):
    """Free-energy function ``F(z, g)`` on the principal branch; vectorized in ``(z, g)``."""
    w, p = _law_arrays(weight_law)
    z = np.asarray(z, dtype=complex)
    g = np.asarray(g, dtype=complex)
    d = alpha + np.multiply.outer(g, w)
    if np.any((d.imag == 0) & (d.real <= 0)):
        raise BranchCutError("alpha + w g lies on the negative real axis")
    out = -np.log(-g) - z * g + alpha * (np.log(d) @ p) - 1.0 - alpha * math.log(alpha)
    return complex(out) if out.ndim == 0 else out


def _richardson(eps: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Linear extrapolation to 0 from consecutive pairs of the schedule."""
    e1, e2 = eps[:-1], eps[1:]
    v1, v2 = vals[:-1], vals[1:]
    return (e1 * v2 - e2 * v1) / (e1 - e2)


def log_potential_curve(
    weight_law: DiscreteMeasure,
    alpha: float,
    t,
    *,
    epsilons=EPSILON_SCHEDULE,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Extrapolated ``U(t)`` and spread for an array of real ``t`` (no error raised)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    if eps.size < 3:
        raise ValueError("need at least three epsilons")
    raw = np.empty((eps.size, t.size))
    g_prev = None
    for i, e in enumerate(eps):
        z = t + 1j * e
        g, _, _, status = solve_grid(weight_law, alpha, z, g0=g_prev, warm=True, tol=tol)
        if np.any(status != _backend.OK):
            # retry failures cold, then give up on those points
            bad = status != _backend.OK
            g2, _, _, st2 = solve_grid(weight_law, alpha, z[bad], warm=False, tol=tol)
            g[bad] = g2
            status[bad] = st2
        raw[i] = np.where(status == _backend.OK, F_value(weight_law, alpha, z, g).real, np.nan)
        g_prev = np.where(status == _backend.OK, g, 0.0)
    ext = np.apply_along_axis(lambda col: _richardson(eps, col), 0, raw)
    value = ext[-1]
    spread = np.abs(ext[-1] - ext[-2])
    return value, np.where(np.isfinite(spread), spread, np.inf)


def log_potential(
    weight_law: DiscreteMeasure,
    alpha: float,
    t: float,
    *,
    epsilons=EPSILON_SCHEDULE,
    spread_limit: float = SPREAD_LIMIT,
) -> LogPotential:
    """``U(t) = int ln|x - t| mu(dx)`` through ``lim Re F(t + i eps, g)``.

    ``Re F`` is evaluated on ``epsilons``; consecutive pairs are extrapolated
    linearly to ``eps = 0`` and the last two extrapolants give the error.

    Raises:
        LogPotentialError: the spread exceeds ``spread_limit``, which happens
            at atoms (where ``U = -inf``) and very close to spectral edges.
    """
    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    vals = []
    g_prev = None
    for e in eps:
        pt = solve_stieltjes(weight_law, alpha, complex(t, e), g0=g_prev)
        vals.append(F_value(weight_law, alpha, pt.z, pt.g).real)
        g_prev = pt.g
    vals = np.asarray(vals)
    ext = _richardson(eps, vals)
    spread = float(abs(ext[-1] - ext[-2]))
    if not spread <= spread_limit:
        raise LogPotentialError(f"epsilon extrapolation spread {spread:.3g} at t={t}")
    return LogPotential(float(ext[-1]), spread, tuple(float(v) for v in vals))


def kappa(
    nu: DiscreteMeasure,
    phi: Activation,
    alpha: float,
    C: float,
    weight_fn: Callable | None = None,
    **kwargs,
) -> float:
    """``int ln|x - C| mu(dx)`` for the law ``mu`` built from ``nu`` and ``phi``.

    ``weight_fn`` defaults to ``phi.d2`` (one-dimensional ``nu``). For a
    two-dimensional ``nu`` pass the matching weight function, for example
    :func:`glmcomplexity.annealed.f_q`.
    """
    if weight_fn is None:
        if nu.dim != 1:
            raise ValueError("two-dimensional measures need an explicit weight_fn")
        weight_fn = phi.d2
    law = pushforward(nu, weight_fn)
    return log_potential(law, alpha, C, **kwargs).value


def atom_mass(weight_law: DiscreteMeasure, alpha: float, at: float = 0.0, eta: float = 1e-9) -> float:
    """Mass of an atom of the spectral law at ``at``, as ``eta * Im g(at + i eta)``."""
    pt = solve_stieltjes(weight_law, alpha, complex(at, eta))
    return float(eta * pt.g.imag)


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    """Stieltjes inversion of one spectral law along ``t + i epsilon``."""

    weight_law: DiscreteMeasure
    alpha: float
    t_grid: np.ndarray
    epsilon: float
    points: tuple[StieltjesPoint, ...]
    density: np.ndarray
    log_potential: np.ndarray
    status: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return np.array([p.g for p in self.points])

    @property
    def residual(self) -> np.ndarray:
        return np.array([p.residual for p in self.points])

    @property
    def converged(self) -> np.ndarray:
        return self.status == _backend.OK

    def mass(self) -> float:
        """Trapezoid integral of the density over the grid."""
        return float(np.trapezoid(self.density, self.t_grid))

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral of the density along the grid (starts at 0)."""
        rho = np.nan_to_num(self.density)
        steps = 0.5 * (rho[1:] + rho[:-1]) * np.diff(self.t_grid)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def direct_log_potential(self, t: float, atom: float = 0.0) -> float:
        """``int rho(x) ln|x - t| dx`` on the grid, plus ``atom * ln|t|`` for an atom at 0.

        The integrand's log singularity is handled by integrating ``ln|x - t|``
        exactly on each cell against the piecewise-linear density.
        """
        x, rho = self.t_grid, self.density
        return float(_piecewise_linear_log_integral(x, rho, t) + atom * math.log(abs(t)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "density", "log_potential", "residual"])
            for row in zip(self.t_grid, self.density, self.log_potential, self.residual):
                writer.writerow([repr(float(v)) for v in row])


def _piecewise_linear_log_integral(x: np.ndarray, rho: np.ndarray, t: float) -> float:
    # on [x0, x1] with rho linear, int rho(x) ln|x - t| dx has a closed form in u = x - t
    def prim0(u):  # int ln|u| du
        return np.where(u == 0, 0.0, u * np.log(np.abs(np.where(u == 0, 1.0, u))) - u)

    def prim1(u):  # int u ln|u| du
        safe = np.abs(np.where(u == 0, 1.0, u))
        return np.where(u == 0, 0.0, 0.5 * u * u * np.log(safe) - 0.25 * u * u)

    u0, u1 = x[:-1] - t, x[1:] - t
    slope = (rho[1:] - rho[:-1]) / (x[1:] - x[:-1])
    # rho(x) = rho0 + slope * (u - u0)
    base = rho[:-1] - slope * u0
    return float(np.sum(base * (prim0(u1) - prim0(u0)) + slope * (prim1(u1) - prim1(u0))))


def density_curve(
    weight_law: DiscreteMeasure,
    alpha: float,
    t_grid,
    epsilon: float = 1e-6,
    *,
    warm: bool = True,
    tol: float = DEFAULT_TOL,
) -> SpectralSolution:
    """Density ``Im g / pi`` and ``Re F`` along ``t + i epsilon``.

    Points that fail are recorded in ``status`` with NaN density rather than
    raising. ``warm=False`` solves every point from scratch.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    z = t + 1j * epsilon
    g, res, its, status = solve_grid(weight_law, alpha, z, warm=warm, tol=tol)
    ok = status == _backend.OK
    density = np.where(ok, np.maximum(g.imag, 0.0) / math.pi, np.nan)
    logpot = np.full(t.shape, np.nan)
    if np.any(ok):
        logpot[ok] = F_value(weight_law, alpha, z[ok], g[ok]).real
    points = tuple(
        StieltjesPoint(complex(zi), complex(gi), float(ri), int(ii))
        for zi, gi, ri, ii in zip(z, g, res, its)
    )
    return SpectralSolution(
        weight_law, float(alpha), t, float(epsilon), points, density, logpot, status.astype(int)
    )
