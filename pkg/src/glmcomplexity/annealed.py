"""Annealed complexity of the empirical risks ``L1`` and ``L2``.

``L1`` is handled through the reduced scalar problem in
``(lambda0, lambda1, g)``: a Gibbs tilt of the Gaussian carries all the
measure dependence and the four stationarity conditions are solved by a
damped fixed-point sweep polished with a Newton-type root finder. The
variational functional over explicit measures is available as
:func:`objective_theorem1` for cross-checking.

``L2`` restricts the inner optimization to the exponential family spanned by
the natural statistics of the problem, solved at fixed overlap ``q``, and
scans ``q`` over an interval.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._roots import newton_fd
from .activations import Activation
from .measures import (
    DiscreteMeasure,
    TiltReport,
    e_phi,
    expectation,
    gauss_hermite,
    gauss_hermite_2d,
    gaussian_trapezoid,
    gibbs_tilt,
    pushforward,
    t_phi,
)
from .spectral import (
    BranchCutError,
    LogPotentialError,
    StieltjesConvergenceError,
    atom_mass,
    log_potential,
    solve_stieltjes,
)

RESIDUAL_TOL = 1e-9


class AnnealedConvergenceError(RuntimeError):
    """The fixed-point system could not be solved."""


class InfeasibleError(RuntimeError):
    """No overlap in the requested interval produced a feasible measure."""


def K(alpha: float) -> float:
    return 0.5 * (-1.0 + math.log(alpha) - 2.0 * alpha * math.log(alpha))


# --------------------------------------------------------------------------- L1


def _log_weight(lambda0, lambda1, g, phi, x, alpha):
    g = complex(g)
    d = alpha + phi.d2(x) * g
    if np.any(np.abs(d) == 0) or (g.imag == 0 and np.any(d.real <= 0)):
        raise BranchCutError("alpha + phi'' g on the negative real axis")
    return -(lambda0 * phi(x) + lambda1 * phi.d1(x) ** 2 + g.real * x * phi.d1(x)) / alpha + np.log(
        np.abs(d)
    )


def tilt_measure(lambda0, lambda1, g, phi, grid, alpha) -> tuple[DiscreteMeasure, TiltReport]:
    """Gibbs measure ``<...>_{lambda0, lambda1, g}`` on ``grid`` and its tilt report."""
    return gibbs_tilt(grid, _log_weight(lambda0, lambda1, g, phi, grid.nodes, alpha))


def gibbs_average(
    lambda0: float,
    lambda1: float,
    g: complex,
    phi: Activation,
    f: Callable | np.ndarray,
    grid: DiscreteMeasure,
    alpha: float,
) -> float:
    """Average of ``f`` under the Gibbs tilt of ``grid`` with multipliers ``(lambda0, lambda1, g)``."""
    if lambda1 < 0:
        raise ValueError("lambda1 must be nonnegative")
    nu, _ = tilt_measure(lambda0, lambda1, g, phi, grid, alpha)
    return float(expectation(nu, f))


def _matching_grid(nu: DiscreteMeasure) -> DiscreteMeasure:
    """The standard grid ``nu`` lives on: Gauss-Hermite or default trapezoid."""
    n = len(nu)
    if nu.dim == 1:
        candidates = [lambda: gauss_hermite(n)]
        if n % 2 == 1:
            candidates.append(lambda: gaussian_trapezoid(n, float(np.max(np.abs(nu.nodes)))))
    else:
        k = int(round(math.sqrt(n)))
        candidates = [lambda: gauss_hermite_2d(k)] if k * k == n else []
    for make in candidates:
        try:
            base = make()
        except ValueError:
            continue
        if base.nodes.shape == nu.nodes.shape and np.allclose(base.nodes, nu.nodes, atol=1e-12):
            return base
    raise ValueError("cannot identify the base grid of nu; pass base or entropy")


def _entropy(nu: DiscreteMeasure, base: DiscreteMeasure | None) -> float:
    if base is None:
        base = _matching_grid(nu)
    elif base.nodes.shape != nu.nodes.shape or not np.allclose(base.nodes, nu.nodes, atol=1e-12):
        raise ValueError("nu is not a tilt of the base grid")
    keep = nu.weights > 0
    if np.any(keep & (base.weights == 0)):
        return math.inf
    # tilt form with log-weight ln(dnu/dbase), for which ln Z = 0
    F = np.log(nu.weights[keep] / base.weights[keep])
    return max(float(nu.weights[keep] @ F), 0.0)


def _kappa_or_atom(law: DiscreteMeasure, alpha: float, C: float) -> float:
    try:
        return log_potential(law, alpha, C).value
    except LogPotentialError:
        if atom_mass(law, alpha, C) > 1e-6:
            warnings.warn(f"spectral atom at C={C}: kappa is -inf", RuntimeWarning, stacklevel=3)
            return -math.inf
        raise


def objective_theorem1(
    nu: DiscreteMeasure,
    phi: Activation,
    alpha: float,
    *,
    entropy: float | None = None,
    base: DiscreteMeasure | None = None,
) -> float:
    """``(1 + ln alpha)/2 - E_phi(nu)/2 + kappa(nu, t_phi(nu)) - alpha H(nu | Gaussian)``.

    ``nu`` must live on the nodes of a Gauss-Hermite grid (``base``, by
    default the grid with as many nodes), unless ``entropy`` is supplied.
    Returns ``-inf`` when ``t_phi(nu)`` sits on an atom of the spectral law.
    """
    H = _entropy(nu, base) if entropy is None else float(entropy)
    law = pushforward(nu, phi.d2)
    kap = _kappa_or_atom(law, alpha, t_phi(nu, phi))
    return 0.5 * (1.0 + math.log(alpha)) - 0.5 * e_phi(nu, phi) + kap - alpha * H


@dataclass(frozen=True, eq=False)
class AnnealedState:
    """Stationary point of the reduced annealed problem for ``L1``.

    ``residuals`` are the four stationarity conditions in the order
    loss level, ``lambda1``, ``Re g``, ``Im g``.
    """

    activation: str
    alpha: float
    constraint: str
    l: float
    lambda0: float
    lambda1: float
    g: complex
    epsilon: float
    complexity: float
    residuals: tuple[float, float, float, float]
    converged: bool
    nu: DiscreteMeasure = field(repr=False)
    tilt: TiltReport = field(repr=False)
    boundary: bool = False
    bounds: tuple[float, float] | None = None

    def record(self) -> dict:
        """JSON-ready summary."""
        return {
            "activation": self.activation,
            "alpha": self.alpha,
            "constraint": self.constraint,
            "bounds": None if self.bounds is None else list(self.bounds),
            "boundary_attained": self.boundary,
            "l": self.l,
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "g_re": self.g.real,
            "g_im": self.g.imag,
            "epsilon": self.epsilon,
            "complexity": self.complexity,
            "residuals": list(self.residuals),
            "converged": self.converged,
        }


class _L1Problem:
    """Reduced objective and its stationarity conditions on a fixed grid."""

    def __init__(self, phi, alpha, epsilon, grid):
        self.phi, self.alpha, self.eps, self.grid = phi, float(alpha), float(epsilon), grid
        x = grid.nodes
        self.x = x
        self.f = phi(x)
        self.d1 = phi.d1(x)
        self.w = phi.d2(x)
        self.xd1 = x * self.d1

    def tilt(self, lambda0, lambda1, g):
        F = -(lambda0 * self.f + lambda1 * self.d1 ** 2 + g.real * self.xd1) / self.alpha
        d = self.alpha + self.w * g
        if np.any(np.abs(d) == 0):
            raise BranchCutError("alpha + phi'' g vanishes on the grid")
        return gibbs_tilt(self.grid, F + np.log(np.abs(d)))

    def objective(self, lambda0, lambda1, g, l):
        if lambda1 <= 0 or g.imag < 0 or g == 0:
            return math.nan
        _, rep = self.tilt(lambda0, lambda1, g)
        return (
            K(self.alpha) + lambda0 * l + 0.5 * (1.0 + math.log(2.0)) + 0.5 * math.log(lambda1)
            - math.log(abs(g)) + self.eps * g.imag + self.alpha * rep.log_partition
        )

    def residuals(self, lambda0, lambda1, g, l):
        nu, _ = self.tilt(lambda0, lambda1, g)
        p, a = nu.weights, self.alpha
        d2 = np.abs(a + self.w * g) ** 2
        g2 = abs(g) ** 2
        r_a = l - p @ self.f
        r_b = 1.0 / (2.0 * lambda1) - p @ self.d1 ** 2
        r_c = -g.real / g2 - p @ (self.xd1 - a * self.w * (a + self.w * g.real) / d2)
        r_d = self.eps - g.imag / g2 + p @ (a * self.w ** 2 * g.imag / d2)
        return np.array([r_a, r_b, r_c, r_d]), nu

    def sweep(self, lambda0, lambda1, g, theta):
        """One damped fixed-point update of ``(lambda1, g)`` at fixed ``lambda0``."""
        nu, _ = self.tilt(lambda0, lambda1, g)
        p = nu.weights
        lam1_t = 1.0 / (2.0 * (p @ self.d1 ** 2))
        t = float(p @ self.xd1)
        law = DiscreteMeasure(self.w, p, "gibbs")
        g_t = solve_stieltjes(law, self.alpha, complex(t, self.eps), g0=g).g
        lam1 = (1 - theta) * lambda1 + theta * lam1_t
        g_new = (1 - theta) * g + theta * g_t
        if g_new.imag <= 0:
            g_new = complex(g_new.real, 0.5 * g.imag)
        return lam1, g_new, nu


def _pack(lambda0, lambda1, g, with_l0):
    v = [lambda1, g.real, g.imag]
    return np.array([lambda0] + v if with_l0 else v)


def _unpack(v, with_l0, lambda0_fixed):
    if with_l0:
        return v[0], v[1], complex(v[2], v[3])
    return lambda0_fixed, v[0], complex(v[1], v[2])


def _solve_fixed_l(prob: _L1Problem, start, l_target, *, theta, max_sweeps, tol):
    """Solve at a given constraint status; ``l_target=None`` means unconstrained."""
    lambda0, lambda1, g = start
    with_l0 = l_target is not None
    if not with_l0:
        lambda0 = 0.0
    # damped sweeps to approach the basin, with a Newton step in lambda0
    for _ in range(max_sweeps):
        try:
            lambda1, g, nu = prob.sweep(lambda0, lambda1, g, theta)
        except StieltjesConvergenceError:
            break
        if with_l0:
            mean = nu.weights @ prob.f
            var = nu.weights @ (prob.f - mean) ** 2
            if var > 0:
                lambda0 += theta * prob.alpha * (mean - l_target) / var
        l_eff = l_target if with_l0 else float(nu.weights @ prob.f)
        res, _ = prob.residuals(lambda0, lambda1, g, l_eff)
        if np.max(np.abs(res)) < 1e-7:
            break

    def fun(v):
        l0, l1, gg = _unpack(v, with_l0, 0.0)
        if l1 <= 0 or gg.imag <= 0:
            return np.full(4 if with_l0 else 3, 1e6)
        try:
            res, nu = prob.residuals(l0, l1, gg, 0.0)
        except BranchCutError:
            return np.full(4 if with_l0 else 3, 1e6)
        if with_l0:
            res[0] = l_target - nu.weights @ prob.f
            return res
        return res[1:]

    n0 = 1 if with_l0 else 0
    v, _, _ = newton_fd(fun, _pack(lambda0, lambda1, g, with_l0), tol=1e-13,
                        valid=lambda v: v[n0] > 0 and v[n0 + 2] > 0)
    lambda0, lambda1, g = _unpack(v, with_l0, 0.0)
    nu, rep = prob.tilt(lambda0, lambda1, g)
    l = l_target if with_l0 else float(nu.weights @ prob.f)
    res, _ = prob.residuals(lambda0, lambda1, g, l)
    res = np.abs(res)
    ok = bool(np.all(res <= tol) and lambda1 > 0 and g.imag > 0)
    return (lambda0, lambda1, g), l, res, ok, nu, rep


def solve_annealed_l1(
    phi: Activation,
    alpha: float,
    constraint: str = "unconstrained",
    *,
    l: float | None = None,
    bounds: tuple[float, float] | None = None,
    epsilon: float = 1e-6,
    grid: DiscreteMeasure | None = None,
    theta: float = 0.3,
    max_sweeps: int = 400,
    init: tuple[float, float, complex] | None = None,
    tol: float = RESIDUAL_TOL,
) -> AnnealedState:
    """Stationary point of the reduced annealed objective for ``L1``.

    Args:
        constraint: ``"unconstrained"`` (``lambda0 = 0``, the loss level is an
            output), ``"loss_level"`` (pass ``l``) or ``"interval"`` (pass
            ``bounds``, treated as an open interval).
        epsilon: the ``epsilon Im g`` regularizer, in ``[1e-8, 1e-3]``.
        grid: one-dimensional Gaussian quadrature; defaults to a 401-node
            trapezoid rule on ``[-10, 10]``.
        theta: damping of the fixed-point sweeps.

    Constrained problems start from the unconstrained solution and follow it
    by homotopy in ``l``. For an interval, the result is flagged
    ``boundary=True`` when the unconstrained level lies outside and the state
    sits on the nearest endpoint.

    Raises:
        AnnealedConvergenceError: unconstrained solve failed, or a homotopy
            step fell below ``1e-6``.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    if not 1e-8 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-8, 1e-3]")
    if constraint not in ("unconstrained", "loss_level", "interval"):
        raise ValueError(f"unknown constraint {constraint!r}")
    if constraint == "loss_level" and l is None:
        raise ValueError("loss_level needs l")
    if constraint == "interval":
        if bounds is None or not bounds[0] < bounds[1]:
            raise ValueError("interval needs ordered bounds")
    grid = gaussian_trapezoid() if grid is None else grid
    prob = _L1Problem(phi, alpha, epsilon, grid)

    start = init if init is not None else (0.0, 0.5, complex(1.0, 0.5))
    state, l_un, res, ok, nu, rep = _solve_fixed_l(
        prob, start, None, theta=theta, max_sweeps=max_sweeps, tol=tol
    )
    if not ok:
        raise AnnealedConvergenceError(f"unconstrained solve failed, residuals {res}")

    target, boundary = None, False
    if constraint == "loss_level":
        target = float(l)
    elif constraint == "interval":
        lo, hi = bounds
        if not lo < l_un < hi:
            target = lo if l_un <= lo else hi
            boundary = True

    if target is not None:
        state, res, ok, nu, rep = _homotopy(prob, state, l_un, target, theta, max_sweeps, tol)
        l_val = target
    else:
        l_val = l_un
    lambda0, lambda1, g = state
    if constraint == "unconstrained":
        res = res.copy()
        res[0] = 0.0
    complexity = prob.objective(lambda0, lambda1, g, l_val)
    return AnnealedState(
        phi.name, float(alpha), constraint, float(l_val), float(lambda0), float(lambda1),
        complex(g), float(epsilon), float(complexity), tuple(float(r) for r in res), ok, nu, rep,
        boundary, None if bounds is None else (float(bounds[0]), float(bounds[1])),
    )


def _homotopy(prob, state, l_from, l_to, theta, max_sweeps, tol):
    step = l_to - l_from
    l_cur = l_from
    res = ok = nu = rep = None
    while True:
        l_next = l_to if abs(l_to - l_cur) <= abs(step) else l_cur + step
        new, _, res_n, ok_n, nu_n, rep_n = _solve_fixed_l(
            prob, state, l_next, theta=theta, max_sweeps=max_sweeps, tol=tol
        )
        if ok_n:
            state, l_cur, res, ok, nu, rep = new, l_next, res_n, ok_n, nu_n, rep_n
            if l_cur == l_to:
                return state, res, ok, nu, rep
            step *= 1.5
        else:
            step *= 0.5
            if abs(step) < 1e-6:
                raise AnnealedConvergenceError(f"homotopy stalled at l={l_cur}")


def epsilon_extrapolated(phi: Activation, alpha: float, epsilons=(1e-4, 1e-5, 1e-6), **kwargs):
    """Complexity extrapolated to ``epsilon -> 0`` from a quadratic fit over ``epsilons``.

    Returns ``(value, states)``.
    """
    states = []
    init = None
    for e in sorted(epsilons, reverse=True):
        s = solve_annealed_l1(phi, alpha, epsilon=e, init=init, **kwargs)
        init = (s.lambda0, s.lambda1, s.g)
        states.append(s)
    eps = np.array([s.epsilon for s in states])
    vals = np.array([s.complexity for s in states])
    coef = np.polyfit(eps, vals, min(2, len(eps) - 1))
    return float(coef[-1]), states


# --------------------------------------------------------------------------- L2


def delta_phi(phi: Activation, q: float, x, y):
    """``phi(q x + sqrt(1 - q^2) y) - phi(x)``."""
    return phi(q * x + math.sqrt(max(1.0 - q * q, 0.0)) * y) - phi(x)


def f_q(phi: Activation, q: float) -> Callable:
    """Weight function ``phi'(x)^2 - phi''(x) [phi(q x + sqrt(1-q^2) y) - phi(x)]``."""

    def f(x, y):
        return phi.d1(x) ** 2 - phi.d2(x) * delta_phi(phi, q, x, y)

    return f


def l2_constraints(q: float, nu: DiscreteMeasure, phi: Activation) -> tuple[float, float]:
    """Orthogonality integral and loss-level integral of ``nu`` at overlap ``q``."""
    if nu.dim != 2:
        raise ValueError("nu must be two-dimensional")
    x, y = nu.columns
    d = delta_phi(phi, q, x, y)
    return float(nu.weights @ (y * phi.d1(x) * d)), float(nu.weights @ (d * d))


def theorem2_objective(
    q: float,
    nu: DiscreteMeasure,
    phi: Activation,
    alpha: float,
    *,
    entropy: float | None = None,
    base: DiscreteMeasure | None = None,
) -> tuple[float, tuple[float, float]]:
    """Value of the ``L2`` functional at ``(q, nu)`` and the two constraint integrals.

    The value is ``(1 + ln alpha)/2 + ln(1 - q^2)/2 - E/2 + kappa - alpha H``
    with ``E = ln int phi'^2 Delta^2`` and ``kappa`` the log-potential of the
    ``f_q`` pushforward law at ``t = -int x phi' Delta``.
    """
    if not -1.0 < q < 1.0:
        raise ValueError("q must lie in (-1, 1)")
    x, y = nu.columns
    d = delta_phi(phi, q, x, y)
    moment = float(nu.weights @ (phi.d1(x) ** 2 * d * d))
    E = math.log(moment) if moment > 0 else -math.inf
    t = float(-(nu.weights @ (x * phi.d1(x) * d)))
    H = _entropy(nu, base) if entropy is None else float(entropy)
    law = pushforward(nu, f_q(phi, q))
    kap = _kappa_or_atom(law, alpha, t)
    value = 0.5 * (1 + math.log(alpha)) + 0.5 * math.log(1 - q * q) - 0.5 * E + kap - alpha * H
    return float(value), l2_constraints(q, nu, phi)


@dataclass(frozen=True, eq=False)
class L2AnnealedState:
    q: float
    multipliers: dict
    measure: DiscreteMeasure = field(repr=False)
    complexity: float
    constraint_residuals: tuple[float, float]
    reduced_value: float
    converged: bool
    boundary: bool = False
    scanned: tuple = ()

    def record(self) -> dict:
        return {
            "q": self.q,
            "multipliers": dict(self.multipliers),
            "complexity": self.complexity,
            "reduced_value": self.reduced_value,
            "constraint_residuals": list(self.constraint_residuals),
            "converged": self.converged,
            "boundary_attained": self.boundary,
            "scanned": [list(s) for s in self.scanned],
        }


class _L2Problem:
    def __init__(self, phi, alpha, q, epsilon, grid):
        self.alpha, self.eps, self.grid, self.q = float(alpha), float(epsilon), grid, float(q)
        x, y = grid.columns
        d = delta_phi(phi, q, x, y)
        self.s_loss = d * d
        self.s_orth = y * phi.d1(x) * d
        self.s_E = phi.d1(x) ** 2 * d * d
        self.s_t = -x * phi.d1(x) * d
        self.w = f_q(phi, q)(x, y)

    def tilt(self, lam_loss, lam_orth, lambda1, g):
        F = -(lam_loss * self.s_loss + lam_orth * self.s_orth + lambda1 * self.s_E
              + g.real * self.s_t) / self.alpha
        d = np.abs(self.alpha + self.w * g)
        if np.any(d == 0):
            raise BranchCutError("alpha + f_q g vanishes on the grid")
        return gibbs_tilt(self.grid, F + np.log(d))

    def reduced(self, lam_loss, lam_orth, lambda1, g, level):
        _, rep = self.tilt(lam_loss, lam_orth, lambda1, g)
        return (
            K(self.alpha) + lam_loss * level + 0.5 * (1 + math.log(2)) + 0.5 * math.log(lambda1)
            + 0.5 * math.log(1 - self.q ** 2) - math.log(abs(g)) + self.eps * g.imag
            + self.alpha * rep.log_partition
        )

    def residuals(self, lam_loss, lam_orth, lambda1, g, level):
        nu, _ = self.tilt(lam_loss, lam_orth, lambda1, g)
        p, a, w = nu.weights, self.alpha, self.w
        d2 = np.abs(a + w * g) ** 2
        g2 = abs(g) ** 2
        return np.array([
            (level - p @ self.s_loss) if level is not None else 0.0,
            -(p @ self.s_orth),
            1.0 / (2 * lambda1) - p @ self.s_E,
            -g.real / g2 - p @ (self.s_t - a * w * (a + w * g.real) / d2),
            self.eps - g.imag / g2 + p @ (a * w * w * g.imag / d2),
        ]), nu

    def sweep(self, lam_loss, lam_orth, lambda1, g, theta, level):
        nu, _ = self.tilt(lam_loss, lam_orth, lambda1, g)
        p = nu.weights
        A = p @ self.s_E
        if not A > 0:
            raise FloatingPointError("tilt collapsed: <phi'^2 Delta^2> = 0")
        t = float(p @ self.s_t)
        g_t = solve_stieltjes(DiscreteMeasure(self.w, p, "gibbs"), self.alpha,
                              complex(t, self.eps), g0=g).g
        lambda1 = (1 - theta) * lambda1 + theta / (2 * A)
        g_new = (1 - theta) * g + theta * g_t
        if g_new.imag <= 0:
            g_new = complex(g_new.real, 0.5 * g.imag)
        # Newton steps on the linear-response of the constraint averages
        o = p @ self.s_orth
        var_o = p @ (self.s_orth - o) ** 2
        if var_o > 0:
            lam_orth += theta * self.alpha * o / var_o
        if level is not None:
            s = p @ self.s_loss
            var_s = p @ (self.s_loss - s) ** 2
            if var_s > 0:
                lam_loss += theta * self.alpha * (s - level) / var_s
        return lam_loss, lam_orth, lambda1, g_new


def _solve_l2_at_q(prob: _L2Problem, start, level, theta, max_sweeps):
    lam_loss, lam_orth, lambda1, g = start
    if level is None:
        lam_loss = 0.0
    for _ in range(max_sweeps):
        try:
            lam_loss, lam_orth, lambda1, g = prob.sweep(lam_loss, lam_orth, lambda1, g, theta, level)
        except (StieltjesConvergenceError, FloatingPointError, ValueError):
            break
        try:
            res, _ = prob.residuals(lam_loss, lam_orth, lambda1, g, level)
        except ValueError:
            return None
        if np.max(np.abs(res)) < 1e-8:
            break
    active = level is not None

    def unpack(v):
        if active:
            return v[0], v[1], v[2], complex(v[3], v[4])
        return 0.0, v[0], v[1], complex(v[2], v[3])

    def fun(v):
        ll, lo, l1, gg = unpack(v)
        n = 5 if active else 4
        if l1 <= 0 or gg.imag <= 0:
            return np.full(n, 1e6)
        try:
            res, _ = prob.residuals(ll, lo, l1, gg, level)
        except ValueError:
            return np.full(n, 1e6)
        return res if active else res[1:]

    v0 = [lam_orth, lambda1, g.real, g.imag]
    n0 = 1 if active else 0
    v, _, _ = newton_fd(fun, np.array(([lam_loss] if active else []) + v0), tol=1e-12,
                        valid=lambda v: v[n0 + 1] > 0 and v[n0 + 3] > 0)
    lam_loss, lam_orth, lambda1, g = unpack(v)
    if lambda1 <= 0 or g.imag <= 0:
        return None
    try:
        res, nu = prob.residuals(lam_loss, lam_orth, lambda1, g, level)
    except ValueError:
        return None
    return (lam_loss, lam_orth, lambda1, g), np.abs(res), nu


def solve_annealed_l2_at_q(
    phi: Activation,
    alpha: float,
    q: float,
    B: tuple[float, float],
    *,
    epsilon: float = 1e-6,
    grid: DiscreteMeasure | None = None,
    theta: float = 0.3,
    max_sweeps: int = 300,
    init=None,
    tol: float = 1e-6,
) -> L2AnnealedState:
    """Inner problem at fixed ``q``: stationary tilt meeting both constraints.

    The loss constraint is inactive when the free loss level falls inside the
    open interval ``B``; otherwise it is pinned to the nearest endpoint.
    """
    grid = gauss_hermite_2d(48) if grid is None else grid
    prob = _L2Problem(phi, alpha, q, epsilon, grid)
    start = init if init is not None else (0.0, 0.0, 0.5, complex(1.0, 0.5))
    out = _solve_l2_at_q(prob, start, None, theta, max_sweeps)
    if out is None:
        raise AnnealedConvergenceError(f"inner solve failed at q={q}")
    state, res, nu = out
    level = float(nu.weights @ prob.s_loss)
    lo, hi = B
    boundary = False
    if not lo < level < hi:
        level = lo if level <= lo else hi
        boundary = True
        out = _solve_l2_at_q(prob, state, level, theta, max_sweeps)
        if out is None:
            raise AnnealedConvergenceError(f"loss-constrained solve failed at q={q}")
        state, res, nu = out
    lam_loss, lam_orth, lambda1, g = state
    loss = float(nu.weights @ prob.s_loss)
    orth = float(nu.weights @ prob.s_orth)
    c_res = (abs(orth), max(lo - loss, loss - hi, 0.0) if not boundary else abs(loss - level))
    converged = bool(np.all(res <= tol))
    if not converged:
        raise AnnealedConvergenceError(f"inner residuals {res} at q={q}")
    reduced = prob.reduced(lam_loss, lam_orth, lambda1, g, level if boundary else 0.0)
    return L2AnnealedState(
        float(q),
        {"loss": float(lam_loss), "orthogonality": float(lam_orth), "lambda1": float(lambda1),
         "g_re": g.real, "g_im": g.imag},
        nu, float(reduced), (float(c_res[0]), float(c_res[1])), float(reduced), converged, boundary,
    )


def solve_annealed_l2(
    phi: Activation,
    alpha: float,
    B: tuple[float, float],
    Q: tuple[float, float],
    *,
    grid: DiscreteMeasure | None = None,
    coarse: int = 9,
    xtol: float = 1e-4,
    **kwargs,
) -> L2AnnealedState:
    """Maximize the restricted ``L2`` functional over ``q`` in the closed interval ``Q``.

    A coarse scan over ``Q`` finds the best bracket, refined by bounded
    golden-section search. Overlaps whose inner problem fails are skipped.

    Raises:
        InfeasibleError: the inner problem failed at every scanned ``q``.
    """
    q_lo, q_hi = Q
    if not -1 < q_lo < q_hi < 1:
        raise ValueError("Q must be an ordered sub-interval of (-1, 1)")
    if not B[0] < B[1]:
        raise ValueError("B must be ordered")
    grid = gauss_hermite_2d(48) if grid is None else grid
    cache: dict[float, L2AnnealedState | None] = {}

    def inner(q):
        q = float(q)
        if q not in cache:
            try:
                cache[q] = solve_annealed_l2_at_q(phi, alpha, q, B, grid=grid, **kwargs)
            except (AnnealedConvergenceError, StieltjesConvergenceError, ValueError):
                cache[q] = None
        return cache[q]

    qs = np.linspace(q_lo, q_hi, coarse)
    vals = np.array([s.complexity if (s := inner(q)) is not None else -np.inf for q in qs])
    if not np.any(np.isfinite(vals)):
        raise InfeasibleError(f"no feasible overlap in {Q}")
    i = int(np.argmax(vals))
    a, b = qs[max(i - 1, 0)], qs[min(i + 1, coarse - 1)]
    if b > a:
        res = optimize.minimize_scalar(
            lambda q: -s.complexity if (s := inner(q)) is not None else np.inf,
            bounds=(a, b), method="bounded", options={"xatol": xtol},
        )
        best_q = res.x if inner(res.x) is not None and -res.fun >= vals[i] else qs[i]
    else:
        best_q = qs[i]
    best = inner(best_q)
    scanned = tuple(sorted((q, s.complexity) for q, s in cache.items() if s is not None))
    return L2AnnealedState(
        best.q, best.multipliers, best.measure, best.complexity, best.constraint_residuals,
        best.reduced_value, best.converged, best.boundary, scanned,
    )
