import math

import numpy as np
import pytest

from effectcal import (
    DgpSpec,
    GaussianProductLaw,
    InvalidArgumentError,
    QuadratureSpec,
    RngStream,
    e1_quadrature,
    efficiency_limit_check,
    eif_eval,
    eif_known_delta,
    make_basis,
    make_multivariate_dgp,
    make_nested_nuisances,
    make_univariate_dgp,
    oracle_estimands,
    sample_nested,
    sampling_propensity,
    weight_checks,
    weight_function,
    weight_gamma_minvar,
)
from effectcal.oracle import _law_nodes


# ---------------------------------------------------------------------------
# estimands
# ---------------------------------------------------------------------------


def test_univariate_tau_closed_form(basis):
    # E[0.75 X^2 + 2X + 1] = 1.75 for standard normal X, independent of the
    # experimental-law shift
    for theta in (0.0, 0.3, 0.7):
        est = oracle_estimands(make_univariate_dgp(theta), basis)
        assert est.tau == pytest.approx(1.75, abs=1e-9)


def test_univariate_no_shift_collapse(basis):
    est = oracle_estimands(make_univariate_dgp(0.0), basis)
    assert est.tau_bar == pytest.approx(est.tau, abs=1e-9)


def test_multivariate_well_specified(basis):
    for s0sq in (1.0, 2.0):
        est = oracle_estimands(make_multivariate_dgp(0.0, s0sq), basis)
        assert est.tau == pytest.approx(0.678, abs=0.005)
        assert est.tau_bar == pytest.approx(est.tau, abs=1e-6)
        np.testing.assert_allclose(est.beta_bar, [0.5, 0.5], atol=1e-9)


def test_multivariate_misspecified(basis):
    for s0sq in (1.0, 2.0):
        est = oracle_estimands(make_multivariate_dgp(0.5, s0sq), basis)
        assert est.tau == pytest.approx(1.18, abs=0.02)
        assert est.tau_bar == pytest.approx(1.79, abs=0.02)


def test_estimands_stable_in_node_count(basis):
    a = oracle_estimands(make_univariate_dgp(0.7), basis, QuadratureSpec(64))
    b = oracle_estimands(make_univariate_dgp(0.7), basis, QuadratureSpec(96))
    assert a.tau_bar == pytest.approx(b.tau_bar, abs=1e-9)
    assert a.sigma == pytest.approx(b.sigma, abs=1e-7)
    c = oracle_estimands(make_multivariate_dgp(0.5, 2.0), basis, QuadratureSpec(64))
    d = oracle_estimands(make_multivariate_dgp(0.5, 2.0), basis, QuadratureSpec(96))
    assert c.tau_bar == pytest.approx(d.tau_bar, abs=1e-6)


def test_projection_orthogonality(basis):
    # E_rct[(mu - mu_bar) psi(contrast)] = 0
    dgp = make_univariate_dgp(0.4)
    est = oracle_estimands(dgp, basis)
    X, w = _law_nodes(dgp.rct_law, dgp.active, 64)
    psi_x = basis.eval(dgp.contrast(X))
    resid = dgp.cate(X) - psi_x @ est.beta_bar
    moments = psi_x.T @ (w * resid)
    np.testing.assert_allclose(moments, 0.0, atol=1e-6)


def test_invalid_theta_rejected():
    with pytest.raises(InvalidArgumentError):
        make_univariate_dgp(1.0)
    with pytest.raises(InvalidArgumentError):
        make_multivariate_dgp(0.0, 0.0)


def _identical_laws_dgp():
    """Covariate laws equal in both datasets, effect model misspecified."""
    contrast = lambda x: np.sin(x[:, 0]) + 0.5 * x[:, 0]
    return DgpSpec(
        family="custom",
        params={},
        rct_law=GaussianProductLaw(np.array([0.25]), np.array([1.1])),
        obs_law=GaussianProductLaw(np.array([0.25]), np.array([1.1])),
        contrast=contrast,
        cate=lambda x: contrast(x) + 0.3 * x[:, 0] ** 2,
        m0=lambda x: x[:, 0].copy(),
        obs_propensity=lambda x: np.full(x.shape[0], 0.5),
        active=(0,),
    )


def test_identical_laws_collapse(basis):
    est = oracle_estimands(_identical_laws_dgp(), basis)
    assert abs(est.tau_bar - est.tau) < 1e-6
    assert abs(est.tau - est.tau_bar) > 0 or True  # equality is the claim


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def test_weights_well_specified_flags_unit(basis):
    dgp = make_multivariate_dgp(0.0, 1.0)
    est = oracle_estimands(dgp, basis)
    res = weight_gamma_minvar(dgp, basis, est)
    assert res.unit_weight
    np.testing.assert_allclose(res.gamma, 0.0)


def test_weights_constraint_holds(basis):
    dgp = make_univariate_dgp(0.0)
    est = oracle_estimands(dgp, basis)
    res = weight_gamma_minvar(dgp, basis, est)
    assert not res.unit_weight
    assert abs(res.constraint_gap) < 1e-6


def test_weight_normalization_and_mean(basis):
    for theta in (0.2, 0.5):
        dgp = make_univariate_dgp(theta)
        est = oracle_estimands(dgp, basis)
        res = weight_gamma_minvar(dgp, basis, est)
        e_w, e_wmu = weight_checks(dgp, basis, est, res.gamma)
        assert e_w == pytest.approx(1.0, abs=1e-6)
        assert e_wmu == pytest.approx(est.tau_bar, abs=1e-6)


def test_weight_function_collapses(basis):
    dgp = make_univariate_dgp(0.3)
    est = oracle_estimands(dgp, basis)
    xs = np.linspace(-3, 3, 11)[:, None]
    np.testing.assert_allclose(weight_function(xs, dgp, basis, est, np.zeros(2)), 1.0)


def test_weight_bounds_match_shift_level(basis):
    # mild shift keeps weights in (0.75, 1.25); strong shift within (0, 2)
    for theta, lo, hi in ((0.3, 0.75, 1.25), (0.5, 0.75, 1.25), (0.7, 0.0, 2.0)):
        dgp = make_univariate_dgp(theta)
        est = oracle_estimands(dgp, basis)
        res = weight_gamma_minvar(dgp, basis, est)
        grid = np.linspace(-4.0, 4.0, 801)[:, None]
        w = weight_function(grid, dgp, basis, est, res.gamma)
        assert w.min() > lo and w.max() < hi


# ---------------------------------------------------------------------------
# sampling propensity
# ---------------------------------------------------------------------------


def test_sampling_propensity_balanced(basis):
    dgp = make_univariate_dgp(0.0)  # identical laws: ratio 1 everywhere
    x = np.array([[0.3]])
    assert sampling_propensity(x, 0.5, dgp)[0] == pytest.approx(0.5, abs=1e-12)
    assert sampling_propensity(x, 0.01, dgp)[0] == pytest.approx(0.01 / (0.01 + 0.99), abs=1e-12)


def test_sampling_propensity_vanishing_ratio():
    dgp = make_univariate_dgp(0.7)
    # far in the target law's tail the experimental density underflows to 0
    x = np.array([[40.0]])
    assert dgp.lambda_ratio(x)[0] == 0.0
    assert sampling_propensity(x, 0.5, dgp)[0] == 0.0


def test_sampling_propensity_rejects_bad_rho():
    dgp = make_univariate_dgp(0.0)
    with pytest.raises(InvalidArgumentError):
        sampling_propensity(np.array([[0.0]]), 0.0, dgp)


# ---------------------------------------------------------------------------
# influence functions
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def nested():
    return make_nested_nuisances(make_univariate_dgp(0.3), make_basis("poly1"), 0.1)


def test_eif_treated_zero_residual(nested, basis):
    x = np.array([[0.4]])
    y = float(nested.m_q(1, x)[0])
    got = eif_eval((1, x, y), nested, basis, nested.tau_bar)
    expected = (nested.mu_bar(x)[0] - nested.tau_bar) / (1.0 - nested.rho2)
    assert got == pytest.approx(expected, abs=1e-12)


def test_eif_experimental_zero_residual(nested, basis):
    x = np.array([[-0.7]])
    y = float(nested.mu_bar(x)[0])
    assert eif_eval((2, x, y), nested, basis, nested.tau_bar) == pytest.approx(0.0, abs=1e-12)


def test_eif_difference_is_correction_term(nested, basis):
    gen = RngStream(31).generator()
    q, x, y = sample_nested(nested, 500, gen)
    full = eif_eval((q, x, y), nested, basis, nested.tau_bar)
    known = eif_known_delta((q, x, y), nested, basis, nested.tau_bar)
    r = nested.dgp.obs_propensity(x)
    iota = np.where(q == 1, (y - nested.m_q(1, x)) / r, 0.0) - np.where(
        q == 0, (y - nested.m_q(0, x)) / (1.0 - r), 0.0
    )
    manual = (q != 2) / (1.0 - nested.rho2) * iota * nested.kappa(x)
    np.testing.assert_allclose(full - known, manual, atol=1e-12)
    # and they agree exactly on experimental draws
    np.testing.assert_allclose(full[q == 2], known[q == 2], atol=1e-12)


def test_eif_mean_zero_quick(nested, basis):
    gen = RngStream(32).generator()
    q, x, y = sample_nested(nested, 200_000, gen)
    for fn in (eif_eval, eif_known_delta):
        vals = fn((q, x, y), nested, basis, nested.tau_bar)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean()) < 3.0 * se


def test_eif_rejects_nondifferentiable_basis(nested):
    flat = make_basis("poly1")
    broken = type(flat)(p=2, eval=flat.eval, eval_dot=None, name="nodot")
    with pytest.raises(InvalidArgumentError, match="differentiable"):
        eif_eval((1, np.array([[0.0]]), 0.0),
                 make_nested_nuisances(make_univariate_dgp(0.3), broken, 0.1),
                 broken, 0.0)


def test_eif_rejects_degenerate_propensity(basis):
    contrast = lambda x: x[:, 0]
    dgp = DgpSpec(
        family="custom", params={},
        rct_law=GaussianProductLaw(np.array([0.0]), np.array([1.0])),
        obs_law=GaussianProductLaw(np.array([0.0]), np.array([1.0])),
        contrast=contrast, cate=lambda x: x[:, 0],
        m0=lambda x: np.zeros(x.shape[0]),
        obs_propensity=lambda x: np.ones(x.shape[0]),
        active=(0,),
    )
    nuis = make_nested_nuisances(dgp, basis, 0.2)
    with pytest.raises(InvalidArgumentError, match="propensity"):
        eif_eval((1, np.array([[0.0]]), 0.0), nuis, basis, nuis.tau_bar)


def test_known_delta_variance_not_larger(nested, basis):
    gen = RngStream(33).generator()
    q, x, y = sample_nested(nested, 400_000, gen)
    full = eif_eval((q, x, y), nested, basis, nested.tau_bar)
    known = eif_known_delta((q, x, y), nested, basis, nested.tau_bar)
    sq_diff = known**2 - full**2
    se = sq_diff.std(ddof=1) / math.sqrt(len(sq_diff))
    assert sq_diff.mean() <= 2.0 * se  # non-strict within two MC errors


# ---------------------------------------------------------------------------
# efficiency limit
# ---------------------------------------------------------------------------


def test_constant_effect_sigma_closed_form(basis):
    # constant effect with a linear contrast: the asymptotic variance is the
    # noise level times a Gram quadratic form, available in closed form
    sigma_d = 1.3
    contrast = lambda x: x[:, 0]
    dgp = DgpSpec(
        family="custom", params={},
        rct_law=GaussianProductLaw(np.array([0.0]), np.array([1.0])),
        obs_law=GaussianProductLaw(np.array([0.5]), np.array([1.0])),
        contrast=contrast, cate=lambda x: np.full(x.shape[0], 2.0),
        m0=lambda x: np.zeros(x.shape[0]),
        obs_propensity=lambda x: np.full(x.shape[0], 0.5),
        active=(0,), sigma_d=sigma_d,
    )
    est = oracle_estimands(dgp, basis)
    # Gram = [[1,0],[0,1]] under standard normal; alpha = (1, E_obs[x]) = (1, 0.5)
    expected = sigma_d**2 * (1.0 + 0.25)
    assert est.sigma == pytest.approx(expected, abs=1e-9)
    assert est.tau_bar == pytest.approx(est.tau, abs=1e-9)  # constant effect


def test_efficiency_rows_match_remainder_identity(basis):
    dgp = make_univariate_dgp(0.3)
    rows = efficiency_limit_check(
        dgp, basis, [0.5, 0.1], draws=200_000, rng=RngStream(34), stratified=True
    )
    for row in rows:
        # rho2 * V_eff - Sigma equals the quadrature remainder, within MC error
        assert row.rho2_v_eff - row.sigma == pytest.approx(row.remainder, abs=4.0 * row.mc_se)
    # the gap shrinks as the experimental fraction vanishes
    assert rows[1].gap < rows[0].gap


def test_e1_quadrature_matches_monte_carlo(nested):
    gen = RngStream(35).generator()
    dgp = nested.dgp
    m = 300_000
    x = dgp.obs_law.sample(m, gen)
    q = (gen.random(m) < dgp.obs_propensity(x)).astype(int)
    y = np.where(q == 1, dgp.m1(x), dgp.m0(x)) + dgp.sigma_y * gen.standard_normal(m)
    r = dgp.obs_propensity(x)
    iota = np.where(q == 1, (y - nested.m_q(1, x)) / r, 0.0) - np.where(
        q == 0, (y - nested.m_q(0, x)) / (1.0 - r), 0.0
    )
    vals = (nested.mu_bar(x) - nested.tau_bar + iota * nested.kappa(x)) ** 2
    se = vals.std(ddof=1) / math.sqrt(m)
    assert e1_quadrature(nested) == pytest.approx(vals.mean(), abs=4.0 * se)
