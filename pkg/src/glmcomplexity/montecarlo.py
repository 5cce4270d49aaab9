"""Monte Carlo checks at finite ``n``.

Samples the conditioned Hessian ``H = (1/n) z Lambda(y) zᵀ - t I`` of the
empirical risk on the sphere, compares its spectrum with the predicted
limiting law, and checks the finite-``n`` Kac-Rice formula against brute-force
critical-point counting on the circle (``n = 2``).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .activations import Activation
from .measures import DiscreteMeasure, empirical, gauss_hermite, pushforward
from .spectral import atom_mass, density_curve, log_potential


@dataclass(frozen=True, eq=False)
class HessianSample:
    n: int
    m: int
    y: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    shift: float
    seed: int

    @property
    def bulk_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``(1/n) z Lambda zᵀ``, i.e. before the shift."""
        return self.eigenvalues + self.shift


@dataclass(frozen=True)
class VerificationReport:
    """Pooled-spectrum and log-determinant comparison.

    ``logdet_empirical`` is the mean cut statistic and ``logdet_predicted``
    the mean of the per-sample limits. The diagnostics (filled when
    requested) hold the mean uncut statistic ``(1/n) ln|det H|`` and the
    prediction with the same cutoff applied to the limiting law.
    """

    ks_distance: float
    logdet_empirical: float
    logdet_predicted: float
    cutoff_delta: float
    samples: int
    checks: dict
    logdet_uncut: float | None = None
    logdet_cut_predicted: float | None = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass(frozen=True)
class CutLogPotential:
    """``(1/n) sum ln max(|lambda_i|, n^-delta)`` and how many eigenvalues were cut."""

    value: float
    cut: int
    cutoff: float


def lambda_matrix(y, phi: Activation, n: int) -> np.ndarray:
    """``P D P`` with ``D = diag((n/m) phi''(y))`` and ``P`` projecting out ``phi'(y)``."""
    y = np.asarray(y, dtype=float)
    m = y.size
    d1 = phi.d1(y)
    norm = np.linalg.norm(d1)
    if norm == 0:
        raise ValueError("phi'(y) vanishes identically")
    v = d1 / norm
    D = (n / m) * phi.d2(y)
    Dv = D * v
    vDv = v @ Dv
    lam = np.diag(D) - np.outer(v, Dv) - np.outer(Dv, v) + vDv * np.outer(v, v)
    return 0.5 * (lam + lam.T)


def _projected(z: np.ndarray, v: np.ndarray) -> np.ndarray:
    return z - np.outer(z @ v, v)


def sample_matrices(n: int, m: int, phi: Activation, seed: int):
    """Draw ``(y, z)`` and return ``(y, z, A, shift)`` with ``A = (1/n) z Lambda zᵀ``."""
    if not m >= n >= 2:
        raise ValueError("need m >= n >= 2")
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(m)
    z = rng.standard_normal((n - 1, m))
    d1 = phi.d1(y)
    v = d1 / np.linalg.norm(d1)
    zp = _projected(z, v)
    # z P D P zᵀ / n, with (n/m) folded into D
    A = (zp * ((n / m) * phi.d2(y))) @ zp.T / n
    return y, z, 0.5 * (A + A.T), float(np.mean(y * d1))


def hessian_sample(n: int, m: int, phi: Activation, seed: int) -> HessianSample:
    """Eigenvalues of the conditioned Hessian for one draw of ``(y, z)``."""
    y, _, A, shift = sample_matrices(n, m, phi, seed)
    eig = np.linalg.eigvalsh(A - shift * np.eye(n - 1))
    return HessianSample(n, m, y, np.sort(eig), shift, seed)


def sup_cdf_distance(a, b) -> float:
    """Kolmogorov distance between the empirical CDFs of two samples."""
    a, b = np.sort(np.asarray(a)), np.sort(np.asarray(b))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def rank2_check(n: int, m: int | None, phi: Activation, seed: int) -> float:
    """Sup-CDF distance between the spectra of ``z Lambda zᵀ/n`` and ``z D zᵀ/n``.

    The two matrices differ by a perturbation of rank at most two, so the
    distance never exceeds ``2/(n-1)``.
    """
    m = 2 * n if m is None else m
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(m)
    z = rng.standard_normal((n - 1, m))
    D = (n / m) * phi.d2(y)
    d1 = phi.d1(y)
    v = d1 / np.linalg.norm(d1)
    zp = _projected(z, v)
    A = (zp * D) @ zp.T / n
    B = (z * D) @ z.T / n
    ea = np.linalg.eigvalsh(0.5 * (A + A.T))
    eb = np.linalg.eigvalsh(0.5 * (B + B.T))
    return sup_cdf_distance(ea, eb)


def empirical_log_potential(sample: HessianSample, delta: float = 0.3) -> CutLogPotential:
    """``(1/n) sum_i ln_eps |lambda_i|`` with ``ln_eps(x) = ln max(x, eps)``, ``eps = n^-delta``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    eps = sample.n ** (-delta)
    a = np.abs(sample.eigenvalues)
    cut = int(np.sum(a < eps))
    return CutLogPotential(float(np.sum(np.log(np.maximum(a, eps))) / sample.n), cut, eps)


def sample_kappa(sample: HessianSample, phi: Activation, cutoff: float | None = None) -> float:
    """Predicted log-potential for this draw: ``kappa(nu_y, t_phi(nu_y))`` at ``alpha = m/n``.

    With ``cutoff`` the logarithm is replaced by ``ln max(|x - t|, cutoff)``
    and integrated against the predicted density, which is the quantity that
    :func:`empirical_log_potential` estimates at finite ``n`` (times ``(n-1)/n``).
    """
    law = pushforward(empirical(sample.y), phi.d2)
    alpha = sample.m / sample.n
    if cutoff is None:
        return log_potential(law, alpha, sample.shift).value
    w = np.asarray(law.nodes)
    reach = 1.2 * max(np.max(np.abs(w)), 1e-12) * (1 + 1 / math.sqrt(alpha)) ** 2
    t = np.union1d(np.linspace(-reach, reach, 8001), sample.shift + np.linspace(-cutoff, cutoff, 801))
    sol = density_curve(law, alpha, t, 1e-7)
    rho = np.nan_to_num(sol.density)
    return float(np.trapezoid(rho * np.log(np.maximum(np.abs(t - sample.shift), cutoff)), t))


def predicted_cdf(phi: Activation, alpha: float, x, *, grid: DiscreteMeasure | None = None,
                  points: int = 6001, epsilon: float = 1e-7) -> np.ndarray:
    """CDF of the limiting law of ``z D zᵀ/m`` (Gaussian ``y``) at the points ``x``."""
    grid = gauss_hermite(128) if grid is None else grid
    law = pushforward(grid, phi.d2)
    w = np.asarray(law.nodes)
    x = np.asarray(x, dtype=float)
    if np.all(w == 0):
        return (x >= 0).astype(float)
    reach = 1.2 * np.max(np.abs(w)) * (1 + 1 / math.sqrt(alpha)) ** 2
    t = np.union1d(np.linspace(-reach, reach, points), np.linspace(-0.05, 0.05, 2001) * reach)
    sol = density_curve(law, alpha, t, epsilon)
    cdf = sol.cdf()
    mass0 = 0.0
    if np.min(w) <= 0 <= np.max(w):
        mass0 = max(atom_mass(law, alpha, 0.0), 0.0)
        if mass0 < 1e-6:
            mass0 = 0.0
    if mass0:
        cdf = cdf + mass0 * (t >= 0)
    return np.interp(x, t, cdf, left=0.0, right=float(cdf[-1]))


def ks_to_cdf(samples, cdf_values_sorted) -> float:
    """Kolmogorov distance between an empirical sample and a CDF evaluated at the sorted sample."""
    n = len(samples)
    i = np.arange(1, n + 1)
    F = np.asarray(cdf_values_sorted)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def esd_vs_prediction(
    n: int,
    m: int,
    phi: Activation,
    seeds,
    *,
    threshold: float = 0.05,
    delta: float = 0.3,
    grid: DiscreteMeasure | None = None,
    logdet_rtol: float | None = None,
    diagnostics: bool = False,
) -> VerificationReport:
    """Pool the spectra of ``(1/n) z Lambda zᵀ`` over ``seeds`` and compare with the prediction.

    Also reports the mean cut log-determinant of ``H`` against the mean of the
    per-sample predictions; with ``logdet_rtol`` their relative gap becomes
    a check. ``diagnostics`` adds the uncut statistic and the cutoff-matched
    prediction.
    """
    seeds = list(seeds)
    alpha = m / n
    pooled, logdet, pred, uncut, cut_pred = [], [], [], [], []
    degenerate = not phi.d2_bound > 0
    for s in seeds:
        hs = hessian_sample(n, m, phi, s)
        pooled.append(hs.bulk_eigenvalues)
        cut = empirical_log_potential(hs, delta)
        logdet.append(cut.value)
        if not degenerate:
            pred.append(sample_kappa(hs, phi))
        else:
            pred.append(math.log(abs(hs.shift)) * (n - 1) / n)
        if diagnostics:
            uncut.append(float(np.sum(np.log(np.abs(hs.eigenvalues))) / n))
            if degenerate:
                cut_pred.append(math.log(max(abs(hs.shift), cut.cutoff)) * (n - 1) / n)
            else:
                cut_pred.append(sample_kappa(hs, phi, cutoff=cut.cutoff) * (n - 1) / n)
    pooled = np.sort(np.concatenate(pooled))
    if np.all(phi.d2(np.linspace(-6, 6, 121)) == 0):
        ks = float(np.mean(np.abs(pooled) > 1e-10))
    else:
        ks = ks_to_cdf(pooled, predicted_cdf(phi, alpha, pooled, grid=grid))
    checks = {"ks": ks <= threshold}
    emp, prd = float(np.mean(logdet)), float(np.mean(pred))
    if logdet_rtol is not None:
        checks["logdet"] = abs(emp - prd) <= logdet_rtol * abs(prd)
    return VerificationReport(
        ks, emp, prd, float(delta), len(seeds), checks,
        float(np.mean(uncut)) if diagnostics else None,
        float(np.mean(cut_pred)) if diagnostics else None,
    )


def kac_rice_finite_n(
    n: int,
    m: int,
    phi: Activation,
    B: tuple[float, float] = (-math.inf, math.inf),
    mc_samples: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo estimate of the expected number of critical points with ``L1`` in ``B``.

    Uses the exact finite-``n`` Kac-Rice representation with one ``z`` draw
    per ``y`` draw. Returns the mean and its standard error.

    Raises:
        ValueError: no sample landed in ``B``.
    """
    if n not in (2, 3):
        raise ValueError("n must be 2 or 3")
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((mc_samples, m))
    z = rng.standard_normal((mc_samples, n - 1, m))
    vals = _kr_integrand(phi, y, z, n, B)
    if not np.any(vals != 0):
        raise ValueError("no effective sample in B")
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_samples))


def _kr_integrand(phi, y, z, n, B):
    """Kac-Rice integrand for batches ``y: (S, m)``, ``z: (S, n-1, m)``."""
    m = y.shape[-1]
    d1 = phi.d1(y)
    norm = np.linalg.norm(d1, axis=-1, keepdims=True)
    v = d1 / norm
    D = (n / m) * phi.d2(y)
    zp = z - np.einsum("sim,sm->si", z, v)[..., None] * v[:, None, :]
    A = np.einsum("sim,sm,sjm->sij", zp, D, zp) / n
    shift = np.mean(y * d1, axis=-1)
    H = A - shift[:, None, None] * np.eye(n - 1)
    det = np.abs(np.linalg.det(H))
    omega = 2 * math.pi ** (n / 2) / special.gamma(n / 2)
    dens = (2 * math.pi * norm[:, 0] ** 2 / m**2) ** (-(n - 1) / 2)
    loss = np.mean(phi(y), axis=-1)
    inside = (loss > B[0]) & (loss < B[1])
    return omega * dens * det * inside


def paired_kac_rice(phi: Activation, xi: np.ndarray, B=(-math.inf, math.inf), angles: int = 64,
                    offset: float = 0.0) -> float:
    """Kac-Rice estimate for ``n = 2`` using the given ensemble ``xi`` (shape ``(2, m)``).

    Evaluates the integrand at ``angles`` equispaced points of the circle with
    ``y = xiᵀ x(theta)`` and ``z = xiᵀ x(theta)⊥``; averaged over Gaussian
    ensembles it is unbiased for the expected count.
    """
    th = offset + 2 * math.pi * np.arange(angles) / angles
    x = np.stack([np.cos(th), np.sin(th)], axis=1)
    xp = np.stack([-np.sin(th), np.cos(th)], axis=1)
    y = x @ xi
    z = (xp @ xi)[:, None, :]
    return float(np.mean(_kr_integrand(phi, y, z, 2, B)))


def direct_count_circle(phi: Activation, xi, B=(-math.inf, math.inf), resolution: int = 100_000) -> int:
    """Number of critical points of ``L(theta) = mean phi(xi · x(theta))`` with ``L`` in ``B``.

    Sign changes of ``dL/dtheta`` on a uniform grid are refined by Brent's
    method to ``1e-10``. A root with ``|L''| < 1e-8`` triggers a warning.
    """
    if resolution < 100_000:
        raise ValueError("resolution must be at least 1e5")
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 2 or xi.shape[0] != 2:
        raise ValueError("xi must have shape (2, m)")

    def parts(th):
        th = np.asarray(th, dtype=float)
        c, s = np.cos(th), np.sin(th)
        u = np.multiply.outer(c, xi[0]) + np.multiply.outer(s, xi[1])
        up = np.multiply.outer(-s, xi[0]) + np.multiply.outer(c, xi[1])
        return u, up

    def dL(th):
        u, up = parts(th)
        return np.mean(phi.d1(u) * up, axis=-1)

    def d2L(th):
        u, up = parts(th)
        return float(np.mean(phi.d2(u) * up**2 - phi.d1(u) * u, axis=-1))

    def L(th):
        u, _ = parts(th)
        return float(np.mean(phi(u), axis=-1))

    th = 2 * math.pi * np.arange(resolution) / resolution
    d = dL(th)
    roots = list(th[d == 0])
    nxt = np.roll(d, -1)
    idx = np.nonzero((d != 0) & (nxt != 0) & (np.sign(d) != np.sign(nxt)))[0]
    for i in idx:
        a = th[i]
        b = th[i + 1] if i + 1 < resolution else 2 * math.pi
        roots.append(optimize.brentq(lambda t: float(dL(t)), a, b, xtol=1e-10))
    count = 0
    degenerate = False
    for r in roots:
        if B[0] < L(r) < B[1]:
            count += 1
            if abs(d2L(r)) < 1e-8:
                degenerate = True
    if degenerate:
        warnings.warn("degenerate critical point suspected", RuntimeWarning, stacklevel=2)
    return count


def kac_rice_vs_direct(phi: Activation, *, m: int = 6, ensembles: int = 200, angles: int = 256,
                       B=(-math.inf, math.inf), seed: int = 0) -> dict:
    """Brute-force circle counts and paired Kac-Rice estimates over the same ``n = 2`` ensembles.

    Returns both means with standard errors and the gap in combined
    standard errors (``nan`` when both spreads vanish).
    """
    rng = np.random.default_rng(seed)
    direct, kr = np.empty(ensembles), np.empty(ensembles)
    for e in range(ensembles):
        xi = rng.standard_normal((2, m))
        direct[e] = direct_count_circle(phi, xi, B)
        kr[e] = paired_kac_rice(phi, xi, B, angles=angles)
    se_d = direct.std(ddof=1) / math.sqrt(ensembles)
    se_k = kr.std(ddof=1) / math.sqrt(ensembles)
    comb = math.hypot(se_d, se_k)
    gap = abs(direct.mean() - kr.mean())
    return {
        "direct_mean": float(direct.mean()),
        "direct_se": float(se_d),
        "kac_rice_mean": float(kr.mean()),
        "kac_rice_se": float(se_k),
        "gap_in_se": float(gap / comb) if comb > 0 else (0.0 if gap < 1e-9 else math.inf),
        "counts": direct.astype(int).tolist(),
    }


def dump_eigenvalues(eigenvalues, path: str | Path) -> None:
    """Single-column CSV of eigenvalues."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eigenvalue"])
        for e in np.asarray(eigenvalues).ravel():
            writer.writerow([repr(float(e))])
