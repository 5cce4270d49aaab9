"""Replica-symmetric quenched complexity of the single-index risk ``L1``.

The objective couples seven scalars ``(A, Â, a, â, C, Ĉ, ĉ)``, an overlap
``q`` and a tilt ``g(λ)`` through a four-dimensional Gaussian average of
``ln I(ξ)``, where ``I(ξ)`` is a one-dimensional complex integral over ``λ``.

Stationarity in the scalars reduces to moment identities under the
ξ-averaged Gibbs weight (the ``â`` and ``ĉ`` identities use ξ-derivative
moments rather than integration by parts), and stationarity in ``ν`` fixes
the tilt to ``g(λ) = α ln|1 + φ''(λ) G / α| - λ0 φ(λ)`` with ``G`` the
Stieltjes value at ``C``. The tilt is therefore carried by the complex number ``G`` and the
solver works on six or seven real unknowns.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from ._roots import newton_fd
from .activations import Activation
from .annealed import solve_annealed_l1
from .measures import DiscreteMeasure, gauss_hermite, pushforward
from .spectral import F_value, solve_stieltjes

ACCEPT_LEAK = 1e-6
HARD_LEAK = 1e-4
ACCEPT_RESIDUAL = 1e-5


class QuenchedConvergenceError(RuntimeError):
    pass


class ImaginaryLeakError(ArithmeticError):
    """The ξ-average of ``ln I`` kept an imaginary part above the hard limit."""


@dataclass(frozen=True)
class QuenchedParams:
    """Replica-symmetric parameter block.

    The tilt is ``g(λ) = α ln|1 + φ''(λ) G / α| - lambda0 φ(λ)``; see :meth:`tilt`.
    (The constant ``α ln α`` dropped here cancels in the objective.)
    ``c_hat`` may be negative, in which case ``sqrt(c_hat)`` is taken on the
    imaginary axis (the ξ-average is even in ``sqrt(c_hat)``).
    """

    q: float
    A: float
    a: float
    C: float
    A_hat: float
    a_hat: float
    C_hat: float
    c_hat: float
    G: complex
    lambda0: float = 0.0
    loss_interval: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if not self.A > self.a:
            raise ValueError("need A > a")
        if self.a_hat < 0:
            raise ValueError("a_hat must be nonnegative")
        vals = (self.A, self.a, self.C, self.A_hat, self.a_hat, self.C_hat, self.c_hat,
                self.G.real, self.G.imag, self.lambda0)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("parameters must be finite")

    def tilt(self, phi: Activation, alpha: float, lam):
        lam = np.asarray(lam, dtype=float)
        return alpha * np.log(np.abs(1.0 + phi.d2(lam) * self.G / alpha)) - self.lambda0 * phi(lam)

    def record(self) -> dict:
        d = asdict(self)
        d["G"] = [self.G.real, self.G.imag]
        d["loss_interval"] = None if self.loss_interval is None else list(self.loss_interval)
        return d


@dataclass(frozen=True)
class XiRule:
    """Quadrature for the standard Gaussian on ``R^4``; columns ``(ξ_q, ξ_a, ξ_c, ξ_c')``."""

    nodes: np.ndarray
    weights: np.ndarray
    label: str

    @classmethod
    def tensor(cls, k: int = 12) -> "XiRule":
        base = gauss_hermite(k)
        grids = np.meshgrid(*([base.nodes] * 4), indexing="ij")
        wgrids = np.meshgrid(*([base.weights] * 4), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        return cls(nodes, w / w.sum(), f"tensor{k}^4")

    @classmethod
    def sobol(cls, log2n: int = 14, seed: int = 0) -> "XiRule":
        from scipy.special import ndtri

        u = qmc.Sobol(4, scramble=True, seed=seed).random_base2(log2n)
        nodes = ndtri(u)
        return cls(nodes, np.full(len(nodes), 1.0 / len(nodes)), f"sobol2^{log2n}(seed={seed})")

    def reflected(self) -> "XiRule":
        """The rule with ``(ξ_c, ξ_c') -> (-ξ_c, -ξ_c')``."""
        nodes = self.nodes.copy()
        nodes[:, 2:] *= -1
        return XiRule(nodes, self.weights, self.label + "/reflected")


@dataclass(frozen=True)
class LambdaRule:
    """Trapezoid rule in the standardized variable ``x``, ``λ = sqrt(q) ξ_q + sqrt(1-q) x``."""

    k: int = 161
    half_width: float = 10.0

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.k)

    @property
    def h(self) -> float:
        return 2 * self.half_width / (self.k - 1)


@dataclass
class _XiAverage:
    mean_log_I: complex
    moments: dict
    moment_leak: float
    nu: DiscreteMeasure | None = None
    nu_leak: float = 0.0
    negative_mass: float = 0.0


def _u(params: QuenchedParams, alpha: float) -> complex:
    return complex(np.sqrt(complex(params.c_hat / (2 * alpha))))


def _unwrapped_log(params, alpha, h, xr, base, lam, dphi, S, shift):
    """Principal ``ln S`` unless some row sits near the cut; then follow ``sqrt(ĉ)`` from 0."""
    logS = np.log(S)
    risky = np.abs(logS.imag) > 2.5
    if not np.any(risky):
        return logS + shift
    rows = np.flatnonzero(risky)
    base, lam, dphi = (M if M.shape[0] == 1 else M[rows] for M in (base, lam, dphi))
    u_full = _u(params, alpha)
    ra = math.sqrt(params.a_hat / alpha)
    phase = prev = None
    for s in np.linspace(0.0, 1.0, 33):
        u = s * u_full
        r1 = ra * xr[rows, 1] + u * (xr[rows, 2] + 1j * xr[rows, 3])
        r2 = u * (xr[rows, 2] - 1j * xr[rows, 3])
        E = base + r1[:, None] * dphi + r2[:, None] * lam
        ang = np.angle(np.sum(np.exp(E - np.max(E.real, axis=1)[:, None]), axis=1))
        phase = ang if prev is None else phase + np.angle(np.exp(1j * (ang - prev)))
        prev = ang
    out = logS + shift
    out[rows] = np.log(np.abs(S[rows])) + shift[rows] + 1j * phase
    return out


def _xi_average(params: QuenchedParams, phi: Activation, alpha: float, xi: XiRule,
                lam_rule: LambdaRule, *, moments: bool = True, marginal: bool = False,
                track_branch: bool = False, chunk: int = 4096) -> _XiAverage:
    q = params.q
    x, h = lam_rule.x, lam_rule.h
    sq, s1q = math.sqrt(q), math.sqrt(1 - q)
    u = _u(params, alpha)
    ra = math.sqrt(params.a_hat / alpha)
    bA = (params.A_hat - params.a_hat) / (2 * alpha)
    bC = (params.C_hat - params.c_hat) / alpha

    xq, inverse = np.unique(xi.nodes[:, 0], return_inverse=True)
    lam_u = sq * xq[:, None] + s1q * x[None, :]
    dphi_u = phi.d1(lam_u)
    base_u = (-0.5 * x[None, :] ** 2 + params.tilt(phi, alpha, lam_u) / alpha
              + bA * dphi_u ** 2 + bC * dphi_u * lam_u)
    const_u = math.log(s1q) + q * xq ** 2 / (2 * (1 - q))
    if not np.all(np.isfinite(base_u)):
        raise FloatingPointError("non-finite integrand")
    need = moments or marginal
    if need and xq.size > 256:
        raise ValueError("moments need a rule with few distinct ξ_q values (tensor rule)")

    total_log = 0.0 + 0.0j
    mom = np.zeros(7, dtype=complex)
    nu_w = np.zeros(lam_u.shape, dtype=complex) if marginal else None
    if need:
        feats = np.stack([np.ones_like(lam_u), dphi_u, dphi_u ** 2, dphi_u * lam_u, lam_u,
                          phi(lam_u)], axis=2)
        groups = [np.flatnonzero(inverse == k) for k in range(xq.size)]
        blocks = [(k, rows[i:i + chunk]) for k, rows in enumerate(groups)
                  for i in range(0, rows.size, chunk)]
    else:
        order = np.argsort(inverse, kind="stable")
        blocks = [(None, order[i:i + chunk]) for i in range(0, order.size, chunk)]
    for k, rows in blocks:
        xr = xi.nodes[rows]
        w = xi.weights[rows]
        grp = inverse[rows] if k is None else k
        base = base_u[grp] if k is None else base_u[k][None, :]
        lam = lam_u[grp] if k is None else lam_u[k][None, :]
        dphi = dphi_u[grp] if k is None else dphi_u[k][None, :]
        r1 = ra * xr[:, 1] + u * (xr[:, 2] + 1j * xr[:, 3])
        r2 = u * (xr[:, 2] - 1j * xr[:, 3])
        E = base + r1[:, None] * dphi + r2[:, None] * lam
        shift = np.max(E.real, axis=1)
        P = np.exp(E - shift[:, None])
        if need:
            M = P @ feats[k]
            S = M[:, 0] * h
        else:
            S = np.sum(P, axis=1) * h
        if track_branch:
            logI = _unwrapped_log(params, alpha, h, xr, base, lam, dphi, S, shift)
        else:
            logI = np.log(S) + shift
        total_log += np.sum(w * (logI + const_u[grp]))
        if need:
            m = M[:, 1:] / M[:, :1]
            # direct ξ-derivatives of ln I, exact on the rule (no integration by parts)
            xa = xr[:, 1] * m[:, 0]
            xc = (xr[:, 2] + 1j * xr[:, 3]) * m[:, 0] + (xr[:, 2] - 1j * xr[:, 3]) * m[:, 3]
            mom += w @ np.stack([m[:, 1], m[:, 0] ** 2, m[:, 2], m[:, 0] * m[:, 3], m[:, 4],
                                 xa, xc], axis=1)
            if marginal:
                nu_w[k] += (w * h / S) @ P
    keys = ("A", "a", "C", "D", "L", "Xa", "Xc")
    out = _XiAverage(complex(total_log), {kk: float(v.real) for kk, v in zip(keys, mom)},
                     float(np.max(np.abs(mom.imag))))
    out.moments["Xc_complex"] = complex(mom[6])
    _effective_moments(out.moments, params, alpha)
    if marginal:
        wr = nu_w.real.ravel()
        neg = float(-np.sum(wr[wr < 0]))
        wr = np.clip(wr, 0.0, None)
        if not wr.sum() > 0:
            raise FloatingPointError("degenerate marginal weights")
        out.nu = DiscreteMeasure(lam_u.ravel(), wr / wr.sum(), "gibbs")
        out.nu_leak = float(np.max(np.abs(nu_w.imag)))
        out.negative_mass = neg
    return out


def _effective_moments(m: dict, params: QuenchedParams, alpha: float) -> None:
    """``a`` and ``D`` as the exact ``â`` and ``ĉ`` derivatives of the ξ-average.

    Under an exact Gaussian average they reduce to ``E<φ'>²`` and
    ``E<φ'><λ>``; on a finite rule they differ slightly, and using them keeps
    the stationarity equations consistent with the discrete objective.
    """
    if params.a_hat > 1e-10:
        m["a_eff"] = m["A"] - math.sqrt(alpha / params.a_hat) * m["Xa"]
    else:
        m["a_eff"] = m["a"]
    u = _u(params, alpha)
    if abs(u) > 1e-8:
        m["D_eff"] = m["C"] - float((m["Xc_complex"] / (4 * u)).real)
    else:
        m["D_eff"] = m["D"]


def inner_integral(xi, params: QuenchedParams, phi: Activation, alpha: float,
                   lam_rule: LambdaRule | None = None) -> tuple[complex, float]:
    """``I(ξ)`` at one point, returned as ``(value, shift)`` with ``I = value * exp(shift)``."""
    lam_rule = lam_rule or LambdaRule()
    xi = np.asarray(xi, dtype=float).reshape(4)
    q = params.q
    x = lam_rule.x
    lam = math.sqrt(q) * xi[0] + math.sqrt(1 - q) * x
    u = _u(params, alpha)
    d1 = phi.d1(lam)
    E = (-lam ** 2 / (2 * (1 - q)) + params.tilt(phi, alpha, lam) / alpha
         + (params.A_hat - params.a_hat) / (2 * alpha) * d1 ** 2
         + (params.C_hat - params.c_hat) / alpha * d1 * lam
         + math.sqrt(q) / (1 - q) * xi[0] * lam
         + math.sqrt(params.a_hat / alpha) * xi[1] * d1
         + u * (d1 * (xi[2] + 1j * xi[3]) + lam * (xi[2] - 1j * xi[3])))
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("non-finite integrand")
    shift = float(np.max(E.real))
    jac = math.sqrt(1 - q) * lam_rule.h
    return complex(np.sum(np.exp(E - shift)) * jac), shift


def induced_marginal(params: QuenchedParams, phi: Activation, alpha: float,
                     xi: XiRule | None = None, lam_rule: LambdaRule | None = None) -> DiscreteMeasure:
    """ξ-average of the normalized single-replica Gibbs weight, as a measure in ``λ``.

    The complex weights are averaged and their real part kept; the imaginary
    part cancels between ``ξ_c'`` and ``-ξ_c'``.
    """
    return _xi_average(params, phi, alpha, xi or XiRule.tensor(), lam_rule or LambdaRule(),
                       moments=False, marginal=True).nu


def _kappa_G(nu: DiscreteMeasure, phi: Activation, alpha: float, C: float, epsilon: float,
             g0: complex | None = None) -> tuple[float, complex]:
    law = pushforward(nu, phi.d2)
    z = complex(C, epsilon)
    G = solve_stieltjes(law, alpha, z, g0=g0).g
    return float(F_value(law, alpha, z, G).real), G


def _assemble(params: QuenchedParams, alpha: float, kappa_val: float, int_nu_g: float,
              mean_log_I: float) -> float:
    q, A, a, C = params.q, params.A, params.a, params.C
    return (
        0.5 * (math.log(alpha) - alpha * math.log(2 * math.pi))
        + kappa_val
        + 0.5 * (1 - alpha) * math.log(1 - q)
        + (1 - alpha * q) / (2 * (1 - q))
        - int_nu_g
        - 0.5 * (A * params.A_hat - a * params.a_hat)
        + C * (q * params.c_hat - params.C_hat)
        - 0.5 * math.log(A - a)
        - a / (2 * (A - a))
        + alpha * mean_log_I
    )


def quenched_objective(params: QuenchedParams, phi: Activation, alpha: float, *,
                       xi: XiRule | None = None, lam_rule: LambdaRule | None = None,
                       epsilon: float = 1e-6, track_branch: bool = True) -> tuple[float, float]:
    """Replica-symmetric objective at ``params`` with ``ν`` the induced marginal.

    Returns ``(value, imag_leak)``. The ξ-average uses the tensor rule unless
    ``xi`` is given; ``ν`` always comes from a tensor rule, which a quasi-random
    rule cannot provide (its ``ξ_q`` values are all distinct).

    Raises:
        ImaginaryLeakError: leak above ``1e-4``.
    """
    xi = xi or XiRule.tensor()
    lam_rule = lam_rule or LambdaRule()
    avg = _xi_average(params, phi, alpha, xi, lam_rule, moments=False, track_branch=track_branch)
    leak = abs(avg.mean_log_I.imag)
    if leak > HARD_LEAK:
        raise ImaginaryLeakError(f"imaginary part {leak:.2e} of the ξ-average of ln I")
    nu_rule = xi if xi.label.startswith("tensor") else XiRule.tensor()
    nu = induced_marginal(params, phi, alpha, nu_rule, lam_rule)
    kap, _ = _kappa_G(nu, phi, alpha, params.C, epsilon, g0=params.G)
    int_g = float(nu.weights @ params.tilt(phi, alpha, nu.nodes))
    return _assemble(params, alpha, kap, int_g, avg.mean_log_I.real), leak


@dataclass(frozen=True, eq=False)
class QuenchedSolution:
    """Converged replica-symmetric state.

    ``stationarity`` holds the central-difference gradient of the objective in
    ``(A, Â, a, â, C, Ĉ, ĉ)`` followed by the tilt residual
    ``max |g - g_ν|`` on the marginal nodes, ``g_ν`` being the tilt rebuilt
    from the Stieltjes value of the induced marginal. ``q`` is a supremum,
    not an extremum; its derivative is reported separately as ``dq``.
    """

    params: QuenchedParams
    complexity: float
    imag_leak: float
    stationarity: tuple[float, ...]
    residuals: tuple[float, ...]
    nu: DiscreteMeasure = field(repr=False)
    converged: bool
    q_boundary: bool
    dq: float
    xi_label: str
    lam_nodes: int
    loss: float
    q_values: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "params": self.params.record(),
            "complexity": self.complexity,
            "imag_leak": self.imag_leak,
            "stationarity": list(self.stationarity),
            "residuals": list(self.residuals),
            "converged": self.converged,
            "q_boundary": self.q_boundary,
            "dq": self.dq,
            "xi_grid": self.xi_label,
            "lambda_nodes": self.lam_nodes,
            "loss": self.loss,
            "q_scan": {repr(k): v for k, v in self.q_values.items()},
        }


class _Problem:
    """Stationarity system at fixed ``q``.

    Unknowns ``v = (d, a, Ĉ, ĉ, Re G, Im G[, λ0])`` with ``d = A - a``; the
    hatted variables follow as ``Â = -1/d + a/d²`` and ``â = a/d²``, which is
    better scaled than solving for ``(Â, â)`` directly when ``d`` is small.
    ``A`` and ``C`` are read off the moments of the induced Gibbs weight.
    """

    def __init__(self, phi, alpha, xi, lam_rule, epsilon, level=None):
        self.phi, self.alpha, self.xi, self.lam_rule = phi, alpha, xi, lam_rule
        self.epsilon, self.level = epsilon, level

    @staticmethod
    def params(q, v, A=None, C=0.0):
        d, a, C_hat, c_hat, gr, gi = v[:6]
        lam0 = v[6] if len(v) > 6 else 0.0
        A = a + d if A is None else A
        return QuenchedParams(q, A, A - d, C, -1.0 / d + a / d ** 2, a / d ** 2, C_hat, c_hat,
                              complex(gr, gi), lam0)

    def evaluate(self, q, v):
        p0 = self.params(q, v)
        avg = _xi_average(p0, self.phi, self.alpha, self.xi, self.lam_rule, marginal=True)
        m = avg.moments
        p = replace(p0, A=m["A"], a=m["a_eff"], C=m["C"]) if m["A"] > m["a_eff"] else p0
        _, G_nu = _kappa_G(avg.nu, self.phi, self.alpha, m["C"], self.epsilon, g0=p0.G)
        return p, avg, G_nu

    def residuals(self, q, v):
        try:
            _, avg, G_nu = self.evaluate(q, v)
        except (ValueError, FloatingPointError, ArithmeticError, RuntimeError):
            return np.full(len(v), 1e6)
        m = avg.moments
        r = [
            v[0] - (m["A"] - m["a_eff"]),
            v[1] - m["a_eff"],
            v[2] - q * v[3] + G_nu.real,
            q * m["C"] - m["D_eff"],
            v[4] - G_nu.real,
            v[5] - G_nu.imag,
        ]
        if len(v) > 6:
            r.append(m["L"] - self.level)
        return np.array(r)

    def solve(self, q, v0, tol, *, fixed_c_hat=False, maxiter=30):
        v0 = np.asarray(v0, dtype=float)
        valid = lambda v: v[0] > 1e-7 and v[1] >= 0 and v[5] > 0
        if fixed_c_hat:
            keep = np.array([j for j in range(len(v0)) if j != 3])

            def fun(w):
                full = v0.copy()
                full[keep] = w
                return self.residuals(q, full)[keep]

            w, norm, ok = newton_fd(fun, v0[keep], tol=tol, maxiter=maxiter,
                                    valid=lambda w: valid(np.insert(w, 3, v0[3])))
            out = v0.copy()
            out[keep] = w
            return out, norm, ok
        return newton_fd(lambda v: self.residuals(q, v), v0, tol=tol, maxiter=maxiter, valid=valid)

    def value(self, q, v):
        p, avg, _ = self.evaluate(q, v)
        kap, _ = _kappa_G(avg.nu, self.phi, self.alpha, p.C, self.epsilon, g0=p.G)
        int_g = float(avg.nu.weights @ p.tilt(self.phi, self.alpha, avg.nu.nodes))
        return _assemble(p, self.alpha, kap, int_g, avg.mean_log_I.real)


def _annealed_start(phi, alpha, constraint, bounds):
    kw = dict(constraint="interval", bounds=bounds) if constraint == "interval" else {}
    st = solve_annealed_l1(phi, alpha, **kw)
    w, d1 = st.nu.weights, phi.d1(st.nu.nodes)
    A = float(w @ d1 ** 2)
    a = float(w @ d1) ** 2
    g = complex(st.g.real, max(st.g.imag, 0.3))
    return np.array([A - a, a, -g.real, 0.0, g.real, g.imag]), st


def stationarity_gradient(params: QuenchedParams, phi: Activation, alpha: float, *,
                          xi: XiRule | None = None, lam_rule: LambdaRule | None = None,
                          epsilon: float = 1e-6, h: float = 1e-6) -> np.ndarray:
    """Central differences of the objective in ``(A, Â, a, â, C, Ĉ, ĉ, q)``.

    The tilt ``G`` is held fixed and ``ν`` follows the induced marginal.
    """
    names = ("A", "A_hat", "a", "a_hat", "C", "C_hat", "c_hat", "q")
    out = []
    for name in names:
        x0 = getattr(params, name)
        step = h * max(1.0, abs(x0))
        vals = []
        for s in (step, -step):
            vals.append(quenched_objective(replace(params, **{name: x0 + s}), phi, alpha,
                                           xi=xi, lam_rule=lam_rule, epsilon=epsilon,
                                           track_branch=False)[0])
        out.append((vals[0] - vals[1]) / (2 * step))
    return np.array(out)


DEFAULT_Q_SCAN = (0.5, 0.4, 0.3, 0.2, 0.15, 0.1, 0.06, 0.03, 0.01)


def solve_quenched_l1(
    phi: Activation,
    alpha: float,
    constraint: str = "unconstrained",
    *,
    bounds: tuple[float, float] | None = None,
    init: QuenchedParams | str = "from_annealed",
    xi: XiRule | None = None,
    lam_rule: LambdaRule | None = None,
    epsilon: float = 1e-6,
    q_scan=DEFAULT_Q_SCAN,
    q: float | None = None,
    tol: float = 1e-10,
    xtol: float = 1e-3,
) -> QuenchedSolution:
    """Stationary point of the quenched objective, maximized over ``q``.

    At each ``q`` a damped Newton solve (finite-difference Jacobian) enforces
    the scalar stationarity conditions together with the tilt closure
    ``G = G_ν``. The start is found at the first scan value with ``ĉ`` held
    at its initial value, then released. The scan runs in the given order,
    each solve warm-started from the last success; the best scan point is
    refined by a bounded Brent search between its converged neighbours.
    Pass ``q`` to skip the search.

    For an interval constraint the loss ``∫φ dν`` is pinned to the nearest
    endpoint whenever the free value falls outside, adding ``λ0`` as unknown.

    Raises:
        QuenchedConvergenceError: no stationary point on the scan. When the
            iterates drive ``A - a`` to zero the message says so; this is the
            generic outcome for bounded ``φ'`` at small ``α``.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    if constraint not in ("unconstrained", "interval"):
        raise ValueError(f"unknown constraint {constraint!r}")
    if constraint == "interval" and (bounds is None or not bounds[0] < bounds[1]):
        raise ValueError("interval needs ordered bounds")
    if phi.d2_bound == 0.0:
        raise ValueError("phi'' vanishes identically: stationarity forces A = a and the objective is -inf")
    xi = xi or XiRule.tensor()
    lam_rule = lam_rule or LambdaRule()
    scan = [float(q)] if q is not None else [float(s) for s in q_scan]
    if not all(0 < s < 1 for s in scan):
        raise ValueError("q values must lie in (0, 1)")

    if isinstance(init, QuenchedParams):
        v0 = np.array([init.A - init.a, init.a, init.C_hat, init.c_hat, init.G.real, init.G.imag])
    elif init == "from_annealed":
        v0, _ = _annealed_start(phi, alpha, constraint, bounds)
    else:
        raise ValueError(f"unknown init {init!r}")
    prob = _Problem(phi, alpha, xi, lam_rule, epsilon)

    def collapse_error(q_at, v):
        if v[0] < 1e-3:
            return QuenchedConvergenceError(
                f"no stationary point at q={q_at:g}: iterates drive A - a to {v[0]:.1e}"
            )
        return QuenchedConvergenceError(f"stationarity solve failed at q={q_at:g}")

    v, norm, ok = prob.solve(scan[0], v0, tol, fixed_c_hat=True)
    if ok:
        v, norm, ok = prob.solve(scan[0], v, tol)
    if not ok:
        raise collapse_error(scan[0], v)

    found: dict[float, np.ndarray] = {scan[0]: v}
    for s in scan[1:]:
        cand, norm, good = prob.solve(s, v, tol)
        if good:
            found[s], v = cand, cand
    values = {s: prob.value(s, vv) for s, vv in found.items()}
    q_star = max(values, key=values.get)
    v_star = found[q_star]
    ordered = sorted(found)
    j = ordered.index(q_star)
    interior = 0 < j < len(ordered) - 1
    if interior and q is None:
        lo_q, hi_q = ordered[j - 1], ordered[j + 1]
        cache: dict[float, tuple] = {}

        def neg(qq):
            cand, _, good = prob.solve(qq, v_star, tol)
            cache[qq] = (cand, good)
            return -prob.value(qq, cand) if good else math.inf

        res = optimize.minimize_scalar(neg, bounds=(lo_q, hi_q), method="bounded",
                                       options={"xatol": xtol})
        if res.x in cache and cache[res.x][1] and -res.fun > values[q_star]:
            q_star, v_star = float(res.x), cache[res.x][0]

    # loss constraint
    level = None
    p, avg, _ = prob.evaluate(q_star, v_star)
    if constraint == "interval" and not bounds[0] < avg.moments["L"] < bounds[1]:
        level = bounds[0] if avg.moments["L"] <= bounds[0] else bounds[1]
        prob.level = level
        v_star, norm, ok = prob.solve(q_star, np.append(v_star, 0.0), tol)
        if not ok:
            raise QuenchedConvergenceError(f"pinned loss solve failed (|r|={norm:.1e})")

    p, avg, G_nu = prob.evaluate(q_star, v_star)
    val, leak = quenched_objective(p, phi, alpha, xi=xi, lam_rule=lam_rule, epsilon=epsilon)
    grad = stationarity_gradient(p, phi, alpha, xi=xi, lam_rule=lam_rule, epsilon=epsilon)
    tilt_res = float(np.max(np.abs(p.tilt(phi, alpha, avg.nu.nodes)
                                   - replace(p, G=G_nu).tilt(phi, alpha, avg.nu.nodes))))
    stat = tuple(float(x) for x in grad[:7]) + (tilt_res,)
    res_vec = tuple(float(r) for r in prob.residuals(q_star, v_star))
    accepted = leak <= ACCEPT_LEAK and max(abs(x) for x in stat) <= ACCEPT_RESIDUAL
    if leak > ACCEPT_LEAK:
        warnings.warn(f"imaginary leak {leak:.1e} above {ACCEPT_LEAK}", RuntimeWarning, stacklevel=2)
    p = replace(p, loss_interval=None if bounds is None else (float(bounds[0]), float(bounds[1])))
    return QuenchedSolution(
        p, float(val), float(leak), stat, res_vec, avg.nu, bool(accepted),
        q is None and not interior, float(grad[7]), xi.label, lam_rule.k, float(avg.moments["L"]),
        {float(k): float(x) for k, x in sorted(values.items())},
    )
