import math

import numpy as np
import pytest

from glmcomplexity.annealed import solve_annealed_l1
from glmcomplexity.measures import pushforward
from glmcomplexity.quenched import (
    ImaginaryLeakError,
    LambdaRule,
    QuenchedConvergenceError,
    QuenchedParams,
    XiRule,
    induced_marginal,
    inner_integral,
    quenched_objective,
    solve_quenched_l1,
    stationarity_gradient,
)
from glmcomplexity.spectral import solve_stieltjes

GENERIC = QuenchedParams(q=0.3, A=0.6, a=0.3, C=0.1, A_hat=0.5, a_hat=0.4, C_hat=0.2, c_hat=0.3,
                         G=complex(1.0, 0.5))
# converged state at alpha = 4 (12^4 rule, 161 lambda nodes); I(ξ) nearly vanishes on a surface
ALPHA4 = QuenchedParams(q=0.01, A=0.29316169488028276, a=0.24751198684048692, C=-0.13144679534284903,
                        A_hat=96.86773903331841, a_hat=118.77368417382705, C_hat=-3.697333222641525,
                        c_hat=-1.6955094881231267, G=complex(3.680378127760294, 2.1805831339723043))
SMALL = dict(xi=XiRule.tensor(8), lam_rule=LambdaRule(121))


def flat(q=1e-12, **kw):
    base = dict(q=q, A=1.0, a=0.0, C=0.0, A_hat=0.0, a_hat=0.0, C_hat=0.0, c_hat=0.0, G=0j)
    base.update(kw)
    return QuenchedParams(**base)


@pytest.fixture(scope="module")
def solved(tanh):
    return solve_quenched_l1(tanh, 4.0, q=0.5, **SMALL)


@pytest.mark.parametrize("kw", [{"q": 0.0}, {"q": 1.0}, {"A": 0.3, "a": 0.3}, {"a_hat": -1.0},
                                {"C": math.nan}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        flat(**kw)


def test_gaussian_inner_integral(tanh):
    for xi in ([0.0, 0.0, 0.0, 0.0], [1.3, -0.4, 2.0, -1.0]):
        val, shift = inner_integral(np.array(xi), flat(), tanh, 2.0)
        np.testing.assert_allclose(val * math.exp(shift), math.sqrt(2 * math.pi), rtol=1e-10)


def test_inner_integral_real_without_c_hat(tanh):
    p = QuenchedParams(q=0.3, A=0.6, a=0.3, C=0.1, A_hat=0.5, a_hat=0.4, C_hat=0.2, c_hat=0.0,
                       G=complex(1.0, 0.5))
    v1, s1 = inner_integral([0.2, 0.5, 1.0, -2.0], p, tanh, 2.0)
    v2, s2 = inner_integral([0.2, 0.5, -0.7, 0.3], p, tanh, 2.0)
    assert v1.imag == 0.0
    np.testing.assert_allclose(v1 * math.exp(s1), v2 * math.exp(s2), rtol=1e-14)


def test_inner_integral_against_monte_carlo(tanh):
    p, alpha = GENERIC, 2.0
    xi = np.array([0.4, -0.8, 0.6, 1.1])
    q = p.q
    lam = math.sqrt(q) * xi[0] + math.sqrt(1 - q) * np.random.default_rng(11).standard_normal(10**6)
    d1 = tanh.d1(lam)
    u = math.sqrt(p.c_hat / (2 * alpha))
    # the Gaussian part of the exponent is the sampling law; rest is the weight
    rest = (p.tilt(tanh, alpha, lam) / alpha + (p.A_hat - p.a_hat) / (2 * alpha) * d1**2
            + (p.C_hat - p.c_hat) / alpha * d1 * lam + math.sqrt(p.a_hat / alpha) * xi[1] * d1
            + u * (d1 * (xi[2] + 1j * xi[3]) + lam * (xi[2] - 1j * xi[3])))
    w = np.exp(rest) * math.sqrt(2 * math.pi * (1 - q)) * math.exp(q * xi[0] ** 2 / (2 * (1 - q)))
    val, shift = inner_integral(xi, p, tanh, alpha)
    I = val * math.exp(shift)
    se_r = w.real.std() / math.sqrt(w.size)
    se_i = w.imag.std() / math.sqrt(w.size)
    assert abs(I.real - w.real.mean()) <= 3 * se_r
    assert abs(I.imag - w.imag.mean()) <= 3 * se_i


def test_lambda_rule_converged(tanh):
    v1, s1 = inner_integral([0.4, -0.8, 0.6, 1.1], GENERIC, tanh, 2.0, LambdaRule(121))
    v2, s2 = inner_integral([0.4, -0.8, 0.6, 1.1], GENERIC, tanh, 2.0, LambdaRule(401))
    np.testing.assert_allclose(v1 * math.exp(s1), v2 * math.exp(s2), rtol=1e-10)


def test_no_leak_without_c_hat(tanh):
    p = QuenchedParams(q=0.3, A=0.6, a=0.3, C=0.1, A_hat=0.5, a_hat=0.4, C_hat=0.2, c_hat=0.0,
                       G=complex(1.0, 0.5))
    _, leak = quenched_objective(p, tanh, 2.0, **SMALL)
    assert leak == 0.0


def test_reflection_invariance(tanh):
    xi = XiRule.tensor(8)
    a, _ = quenched_objective(GENERIC, tanh, 2.0, xi=xi, lam_rule=LambdaRule(121))
    b, _ = quenched_objective(GENERIC, tanh, 2.0, xi=xi.reflected(), lam_rule=LambdaRule(121))
    assert abs(a - b) <= 1e-12


def test_tensor_and_sobol_agree(tanh):
    a, leak_a = quenched_objective(GENERIC, tanh, 2.0, xi=XiRule.tensor(12))
    b, leak_b = quenched_objective(GENERIC, tanh, 2.0, xi=XiRule.sobol(14, seed=0))
    assert abs(a - b) <= 1e-4
    assert leak_a <= 1e-6


def test_tensor_refinement_at_generic_point(tanh):
    a, _ = quenched_objective(GENERIC, tanh, 2.0, xi=XiRule.tensor(12))
    b, _ = quenched_objective(GENERIC, tanh, 2.0, xi=XiRule.tensor(16))
    assert abs(a - b) <= 1e-4


def test_hard_leak_error(tanh):
    with pytest.raises(ImaginaryLeakError):
        quenched_objective(ALPHA4, tanh, 4.0, xi=XiRule.sobol(14, seed=0))


def test_marginal_of_flat_params_is_gaussian(tanh):
    nu = induced_marginal(flat(), tanh, 2.0, **SMALL)
    np.testing.assert_allclose(nu.weights.sum(), 1.0, atol=1e-12)
    np.testing.assert_allclose(nu.weights @ nu.nodes, 0.0, atol=1e-10)
    np.testing.assert_allclose(nu.weights @ nu.nodes**2, 1.0, atol=1e-8)


def test_marginal_mass(tanh):
    nu = induced_marginal(GENERIC, tanh, 2.0, **SMALL)
    np.testing.assert_allclose(nu.weights.sum(), 1.0, atol=1e-12)
    assert np.all(nu.weights >= 0)


def test_sobol_rule_is_standard_gaussian():
    r = XiRule.sobol(14, seed=3)
    np.testing.assert_allclose(r.weights @ r.nodes, 0.0, atol=0.02)
    np.testing.assert_allclose(r.weights @ r.nodes**2, 1.0, atol=0.02)


def test_solution_is_accepted(solved):
    assert solved.converged
    assert solved.imag_leak <= 1e-6
    assert max(abs(s) for s in solved.stationarity) <= 1e-5
    assert max(abs(r) for r in solved.residuals) <= 1e-9


def test_recomputed_gradient(tanh, solved):
    grad = stationarity_gradient(solved.params, tanh, 4.0, **SMALL)
    # (A, Â, a, â, C, Ĉ, ĉ) vanish; the last entry is the q-derivative
    assert np.max(np.abs(grad[:7])) <= 1e-5
    np.testing.assert_allclose(grad[7], solved.dq, rtol=1e-6, atol=1e-8)


def test_marginal_consistency(tanh, solved):
    nu = induced_marginal(solved.params, tanh, 4.0, **SMALL)
    np.testing.assert_array_equal(nu.nodes, solved.nu.nodes)
    assert 0.5 * np.sum(np.abs(nu.weights - solved.nu.weights)) <= 1e-4
    p = solved.params
    G = solve_stieltjes(pushforward(nu, tanh.d2), 4.0, complex(p.C, 1e-6)).g
    np.testing.assert_allclose(G, p.G, atol=1e-8)


def test_jensen_at_fixed_overlap(tanh, solved):
    annealed = solve_annealed_l1(tanh, 4.0)
    assert solved.complexity <= annealed.complexity + 1e-6


def test_interval_constraint_holds(tanh):
    sol = solve_quenched_l1(tanh, 4.0, "interval", bounds=(0.0, 0.5), q=0.5, **SMALL)
    assert sol.converged
    assert 0.0 - 1e-6 <= sol.loss <= 0.5 + 1e-6


def test_record_fields(solved):
    rec = solved.record()
    for key in ("params", "complexity", "imag_leak", "stationarity", "residuals", "xi_grid",
                "lambda_nodes"):
        assert key in rec


def test_linear_activation_is_singular(linear):
    with pytest.raises(ValueError, match="-inf"):
        solve_quenched_l1(linear, 2.0)


def test_linear_objective_diverges_downward(linear):
    # on the solver's parametrization Â = -1/d + a/d², â = a/d², the objective falls like -1/d
    vals = []
    for d in (1e-1, 1e-2, 1e-3):
        a = 1.0 - d
        p = QuenchedParams(q=0.3, A=1.0, a=a, C=0.5, A_hat=-1 / d + a / d**2, a_hat=a / d**2,
                           C_hat=0.0, c_hat=0.0, G=1j)
        vals.append(quenched_objective(p, linear, 2.0, **SMALL)[0])
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0


def test_collapse_below_alpha_two(tanh):
    with pytest.raises(QuenchedConvergenceError, match="A - a"):
        solve_quenched_l1(tanh, 1.5, q=0.5, **SMALL)


def test_rejects_alpha_at_most_one(tanh):
    with pytest.raises(ValueError):
        solve_quenched_l1(tanh, 1.0)
