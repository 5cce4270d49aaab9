import numpy as np
import pytest

from glmcomplexity.activations import builtin


@pytest.fixture(scope="session")
def tanh():
    return builtin("tanh")


@pytest.fixture(scope="session")
def linear():
    return builtin("linear")


@pytest.fixture(scope="session")
def half_square():
    return builtin("half_square")


def mp_density(x, ratio, scale=1.0):
    """Marchenko-Pastur density of ``scale * z zᵀ/m`` with ``n/m = ratio < 1``."""
    x = np.asarray(x, dtype=float) / scale
    lo, hi = (1 - np.sqrt(ratio)) ** 2, (1 + np.sqrt(ratio)) ** 2
    out = np.zeros_like(x)
    inside = (x > lo) & (x < hi)
    out[inside] = np.sqrt((hi - x[inside]) * (x[inside] - lo)) / (2 * np.pi * ratio * x[inside])
    return out / scale


def mp_stieltjes(z, ratio):
    """``∫ ρ(x)/(x - z) dx`` for the density above (scale 1), branch with Im g > 0."""
    z = complex(z)
    b = 1 - ratio - z
    root = np.sqrt(b * b - 4 * ratio * z)
    candidates = [(b + s * root) / (2 * ratio * z) for s in (1, -1)]
    return max(candidates, key=lambda g: g.imag)
