"""Discrete probability measures on R and R^2.

Measures are weighted node sets: Gauss-Hermite discretizations of the
standard Gaussian, empirical samples, or Gibbs tilts of a quadrature grid.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import roots_hermitenorm

from .activations import Activation

KINDS = ("quadrature", "empirical", "gibbs")


class DegenerateMeasureError(ValueError):
    """Raised when a functional is undefined on the given measure."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure ``sum_j weights[j] * delta(nodes[j])``.

    ``nodes`` has shape ``(N,)`` for ``dim == 1`` and ``(N, 2)`` for ``dim == 2``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "quadrature"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim == 2 and nodes.shape[1] == 1:
            nodes = nodes[:, 0]
        if nodes.ndim not in (1, 2) or (nodes.ndim == 2 and nodes.shape[1] != 2):
            raise ValueError(f"nodes must have shape (N,) or (N, 2), got {nodes.shape}")
        if weights.shape != (nodes.shape[0],):
            raise ValueError("one weight per node required")
        if nodes.shape[0] < 1:
            raise ValueError("a measure needs at least one node")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("nodes must be finite")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return 1 if self.nodes.ndim == 1 else 2

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def columns(self) -> tuple[np.ndarray, ...]:
        """Node coordinates as separate arrays, ready to unpack into ``f``."""
        return (self.nodes,) if self.dim == 1 else (self.nodes[:, 0], self.nodes[:, 1])


@dataclass(frozen=True)
class TiltReport:
    log_partition: float
    entropy_rel_gauss: float


def _normalized(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


def gauss_hermite(k: int) -> DiscreteMeasure:
    """``k``-node Gauss-Hermite discretization of the standard Gaussian."""
    if not 2 <= k <= 512:
        raise ValueError(f"k must satisfy 2 <= k <= 512, got {k}")
    x, w = roots_hermitenorm(k)
    # symmetrize against rounding in the eigen-solver
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return DiscreteMeasure(x, _normalized(w), "quadrature")


def gaussian_trapezoid(k: int = 401, half_width: float = 10.0) -> DiscreteMeasure:
    """Standard Gaussian on ``k`` equispaced nodes in ``[-half_width, half_width]``.

    The trapezoid rule converges geometrically in the node spacing for
    integrands analytic in a strip, which beats Gauss-Hermite when the
    integrand has complex singularities close to the real axis.
    """
    if k < 3 or k % 2 == 0:
        raise ValueError("k must be an odd integer >= 3")
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    x = np.linspace(-half_width, half_width, k)
    x = 0.5 * (x - x[::-1])
    return DiscreteMeasure(x, _normalized(np.exp(-0.5 * x * x)), "quadrature")


def gauss_hermite_2d(k: int = 48) -> DiscreteMeasure:
    """Tensor-product ``k x k`` discretization of the 2D standard Gaussian."""
    g = gauss_hermite(k)
    xx, yy = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    ww = np.outer(g.weights, g.weights)
    return DiscreteMeasure(np.column_stack([xx.ravel(), yy.ravel()]), _normalized(ww.ravel()))


def empirical(samples) -> DiscreteMeasure:
    """Uniform measure ``(1/m) sum_mu delta(y_mu)`` on the given samples."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("empirical measure needs at least one sample")
    m = s.shape[0]
    return DiscreteMeasure(s, np.full(m, 1.0 / m), "empirical")


def load_empirical_csv(path: str | Path) -> DiscreteMeasure:
    """Empirical measure from a one- or two-column CSV file (header optional)."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if i == 0 and not rows:
                    continue  # header
                raise
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] not in (1, 2):
        raise ValueError(f"{path}: expected one or two numeric columns")
    return empirical(data[:, 0] if data.shape[1] == 1 else data)


def _values(nu: DiscreteMeasure, f) -> np.ndarray:
    vals = f(*nu.columns) if callable(f) else f
    vals = np.broadcast_to(np.asarray(vals), (len(nu),))
    if not np.all(np.isfinite(vals)):
        raise ValueError("function is not finite on every node")
    return vals


def expectation(nu: DiscreteMeasure, f: Callable | np.ndarray) -> float | complex:
    """``sum_j w_j f(node_j)``; ``f`` is a vectorized callable or node values.

    The sum is correctly rounded, so odd integrands on symmetric grids give 0.
    """
    terms = nu.weights * _values(nu, f)
    if np.iscomplexobj(terms):
        return complex(math.fsum(terms.real), math.fsum(terms.imag))
    return math.fsum(terms)


def gibbs_tilt(
    base: DiscreteMeasure, log_weight: Callable | np.ndarray
) -> tuple[DiscreteMeasure, TiltReport]:
    """Tilt ``base`` by ``exp(log_weight)``.

    Returns the normalized tilted measure together with ``ln Z`` and the
    relative entropy ``H(tilted | base) = <log_weight> - ln Z``. The maximum of
    ``log_weight`` over nodes is subtracted before exponentiating.
    """
    F = np.asarray(_values(base, log_weight), dtype=float)
    shift = F.max()
    e = base.weights * np.exp(F - shift)
    z = e.sum()
    w = e / z
    log_z = shift + np.log(z)
    entropy = max(float(w @ F - log_z), 0.0)
    return DiscreteMeasure(base.nodes, _normalized(w), "gibbs"), TiltReport(float(log_z), entropy)


def pushforward(nu: DiscreteMeasure, h: Callable | np.ndarray) -> DiscreteMeasure:
    """Image measure of ``nu`` under ``h``: nodes ``h(node)``, same weights."""
    vals = np.asarray(_values(nu, h), dtype=float)
    return DiscreteMeasure(vals.copy(), nu.weights, nu.kind)


def t_phi(nu: DiscreteMeasure, phi: Activation) -> float:
    """``int x phi'(x) nu(dx)``."""
    if nu.dim != 1:
        raise ValueError("t_phi needs a 1D measure")
    return float(expectation(nu, lambda x: x * phi.d1(x)))


def e_phi(nu: DiscreteMeasure, phi: Activation) -> float:
    """``ln int phi'(x)^2 nu(dx)``."""
    if nu.dim != 1:
        raise ValueError("e_phi needs a 1D measure")
    moment = float(expectation(nu, lambda x: phi.d1(x) ** 2))
    if moment <= 0.0:
        raise DegenerateMeasureError("int phi'^2 d nu vanishes")
    return float(np.log(moment))
