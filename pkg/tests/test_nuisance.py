import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effectcal import (
    DegenerateArmError,
    ExperimentalData,
    InvalidArgumentError,
    ObservationalData,
    RngStream,
    fit_cate,
    fit_contrast_crossfit,
    fit_odds,
    fit_smoother,
    make_univariate_dgp,
    parse_contrast_learner,
    partition_folds,
    sample_multivariate,
    sample_univariate,
)
from effectcal.nuisance import poly_features


# ---------------------------------------------------------------------------
# contrast learners
# ---------------------------------------------------------------------------


def test_oracle_contrast_is_exact(uni_dgp):
    pair = sample_univariate(0.3, 50, 400, RngStream(1))
    folds = partition_folds(pair.obs.n, 3, RngStream(1, 1))
    fit = fit_contrast_crossfit(pair.obs, folds, parse_contrast_learner("oracle", uni_dgp))
    xs = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(fit.averaged(xs), 0.75 * xs[:, 0] ** 2 + 3 * xs[:, 0] + 1)


def test_ridge_contrast_constant_signal():
    # y == z exactly: contrast is 1 with no x dependence
    rng = RngStream(5).generator()
    x = rng.normal(size=(200, 1))
    z = (rng.random(200) < 0.5).astype(int)
    obs = ObservationalData(y=z.astype(float), z=z, x=x)
    folds = partition_folds(200, 2, RngStream(5, 1))
    fit = fit_contrast_crossfit(obs, folds, parse_contrast_learner("ridge_poly1"))
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(fit.averaged(xs), 1.0, atol=1e-6)


def _brute_nw(q, u, v):
    # literal kernel-regression oracle at the plug-in bandwidth
    h = 1.06 * np.std(u, ddof=1) * len(u) ** (-0.2)
    w = np.exp(-0.5 * ((q - u) / h) ** 2)
    return float(np.sum(w * v) / np.sum(w))


def test_kernel_contrast_near_truth_at_zero():
    pair = sample_univariate(0.0, 100, 200, RngStream(2))
    folds = partition_folds(pair.obs.n, 1, RngStream(2, 1))
    fit = fit_contrast_crossfit(pair.obs, folds, parse_contrast_learner("kernel_t"))
    got = float(fit.averaged(np.array([[0.0]]))[0])
    assert got == pytest.approx(1.0, abs=0.5)
    # and the learner agrees exactly with the literal per-arm oracle
    obs = pair.obs
    expected = _brute_nw(0.0, obs.x[obs.z == 1, 0], obs.y[obs.z == 1]) - _brute_nw(
        0.0, obs.x[obs.z == 0, 0], obs.y[obs.z == 0]
    )
    assert got == pytest.approx(expected, abs=1e-10)


def test_knn_contrast_multivariate_smoke():
    pair = sample_multivariate(0.0, 1.0, 60, 500, RngStream(3))
    folds = partition_folds(pair.obs.n, 2, RngStream(3, 1))
    fit = fit_contrast_crossfit(pair.obs, folds, parse_contrast_learner("knn_t"))
    preds = fit.averaged(pair.obs.x[:25])
    assert np.all(np.isfinite(preds))
    # contrast is bounded in (0, 1) for this design; knn averages of noisy
    # outcomes should still land in a generous band around it
    assert preds.mean() == pytest.approx(0.36, abs=0.6)


def test_crossfit_exclusion_bookkeeping(tiny_obs):
    folds = partition_folds(tiny_obs.n, 5, RngStream(9))
    fit = fit_contrast_crossfit(tiny_obs, folds, parse_contrast_learner("ridge_poly2"))
    for k in range(1, 6):
        train = fit.train_rows[k - 1]
        held_out = folds.indices(k)
        assert np.intersect1d(train, held_out).size == 0
        assert np.union1d(train, held_out).size == tiny_obs.n


def test_averaged_equals_mean_of_per_fold(tiny_obs):
    folds = partition_folds(tiny_obs.n, 4, RngStream(11))
    fit = fit_contrast_crossfit(tiny_obs, folds, parse_contrast_learner("ridge_poly2"))
    xs = RngStream(12).generator().normal(size=(100, 1))
    manual = np.mean([f(xs) for f in fit.per_fold], axis=0)
    np.testing.assert_allclose(fit.averaged(xs), manual, rtol=0, atol=1e-15)


def test_degenerate_arm_error_names_fold():
    x = np.arange(12, dtype=float)[:, None]
    z = np.zeros(12, dtype=int)
    z[:2] = 1  # only two treated rows overall; some training sets lose both
    obs = ObservationalData(y=x[:, 0], z=z, x=x)
    folds = partition_folds(12, 6, RngStream(1))
    with pytest.raises(DegenerateArmError, match="fold"):
        fit_contrast_crossfit(obs, folds, parse_contrast_learner("ridge_poly1"))


def test_kernel_contrast_rejects_multivariate():
    pair = sample_multivariate(0.0, 1.0, 30, 200, RngStream(4))
    folds = partition_folds(pair.obs.n, 1, RngStream(4, 1))
    with pytest.raises(InvalidArgumentError, match="univariate"):
        fit_contrast_crossfit(pair.obs, folds, parse_contrast_learner("kernel_t"))


def test_parse_learner_specs(uni_dgp):
    assert parse_contrast_learner("ridge_poly3").degree == 3
    assert parse_contrast_learner("oracle", uni_dgp).tag == "oracle"
    with pytest.raises(InvalidArgumentError):
        parse_contrast_learner("forest")
    with pytest.raises(InvalidArgumentError):
        parse_contrast_learner("oracle")  # no dgp


# ---------------------------------------------------------------------------
# effect-function learner
# ---------------------------------------------------------------------------


def _oracle_contrast(dgp, obs, k, seed=0):
    folds = partition_folds(obs.n, k, RngStream(seed, 77))
    return folds, fit_contrast_crossfit(obs, folds, parse_contrast_learner("oracle", dgp))


def test_cate_constant_response(uni_dgp):
    pair = sample_univariate(0.3, 40, 100, RngStream(6))
    _, contrast = _oracle_contrast(uni_dgp, pair.obs, 1)
    exp = ExperimentalData(d=np.full(pair.exp.n, 2.0), x=pair.exp.x)
    fit = fit_cate(exp, contrast, folds_exp=1)
    xs = RngStream(7).generator().normal(size=(50, 1))
    np.testing.assert_allclose(fit.predict(xs), 2.0, atol=1e-8)


def test_cate_exact_linear_signal(uni_dgp):
    pair = sample_univariate(0.3, 60, 100, RngStream(8))
    _, contrast = _oracle_contrast(uni_dgp, pair.obs, 1)
    d = contrast.averaged(pair.exp.x)
    exp = ExperimentalData(d=d, x=pair.exp.x)
    fit = fit_cate(exp, contrast, folds_exp=1, penalty=1e-8)
    np.testing.assert_allclose(fit.predict(pair.exp.x), d, atol=1e-6)


def test_cate_recovers_effect_scale_multivariate():
    dgp_pair = sample_multivariate(0.0, 1.0, 100, 2000, RngStream(9))
    from effectcal import make_multivariate_dgp

    dgp = make_multivariate_dgp(0.0, 1.0)
    _, contrast = _oracle_contrast(dgp, dgp_pair.obs, 1)
    fit = fit_cate(dgp_pair.exp, contrast, folds_exp=5, rng=RngStream(9, 3))
    mean_over_obs = float(fit.predict(dgp_pair.obs.x).mean())
    assert mean_over_obs == pytest.approx(0.678, abs=0.15)


def test_cate_huge_penalty_tends_to_mean(uni_dgp):
    pair = sample_univariate(0.3, 80, 100, RngStream(10))
    _, contrast = _oracle_contrast(uni_dgp, pair.obs, 1)
    fit = fit_cate(pair.exp, contrast, folds_exp=1, penalty=1e8)
    xs = RngStream(11).generator().normal(size=(30, 1))
    np.testing.assert_allclose(fit.predict(xs), pair.exp.d.mean(), atol=1e-4)


def test_cate_crossfit_predictions_are_out_of_fold(uni_dgp):
    pair = sample_univariate(0.3, 50, 100, RngStream(12))
    _, contrast = _oracle_contrast(uni_dgp, pair.obs, 1)
    fit = fit_cate(pair.exp, contrast, folds_exp=5, rng=RngStream(12, 3))
    infit = fit_cate(pair.exp, contrast, folds_exp=1)
    # out-of-fold predictions differ from in-sample ones on noisy data
    assert np.max(np.abs(fit.exp_predictions - infit.exp_predictions)) > 1e-6


# ---------------------------------------------------------------------------
# odds models
# ---------------------------------------------------------------------------


def test_odds_balanced_null_model():
    feats = np.zeros((200, 1))
    labels = np.concatenate([np.ones(100), np.zeros(100)])
    fit = fit_odds(feats, labels)
    np.testing.assert_allclose(fit.odds(feats), 1.0, atol=1e-6)


def test_odds_prior_ratio():
    feats = np.zeros((10_100, 1))
    labels = np.concatenate([np.ones(100), np.zeros(10_000)])
    fit = fit_odds(feats, labels)
    np.testing.assert_allclose(fit.odds(feats[:1]), 100.0, rtol=0.01)


def test_odds_recovers_gaussian_log_ratio():
    # class-conditional laws N(-theta, 1-theta) vs N(0,1), equal class sizes;
    # the analytic log-odds is quadratic with known coefficients
    theta = 0.3
    m = 500_000
    gen = RngStream(13).generator()
    x_exp = gen.normal(-theta, np.sqrt(1 - theta), m)
    x_obs = gen.normal(0.0, 1.0, m)
    x = np.concatenate([x_exp, x_obs])
    labels = np.concatenate([np.ones(m), np.zeros(m)])
    feats = np.column_stack([x, x**2])
    fit = fit_odds(feats, labels)
    b0 = -0.5 * np.log(1 - theta) - theta**2 / (2 * (1 - theta))
    b1 = -theta / (1 - theta)
    b2 = 0.5 - 1.0 / (2 * (1 - theta))
    got = fit.coefficients
    assert got[0] == pytest.approx(b0, rel=0.10)
    assert got[1] == pytest.approx(b1, rel=0.10)
    assert got[2] == pytest.approx(b2, rel=0.10)


def test_odds_scale_equivariance():
    gen = RngStream(14).generator()
    x = gen.normal(size=(400, 2))
    labels = (gen.random(400) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    fit1 = fit_odds(x, labels)
    fit2 = fit_odds(10.0 * x, labels)
    np.testing.assert_allclose(fit1.prob(x), fit2.prob(10.0 * x), atol=1e-6)


def test_odds_separation_flagged_not_fatal():
    # perfectly separated classes at a narrow margin drive the slope huge
    x = np.concatenate([np.full(50, -0.01), np.full(50, 0.01)])[:, None]
    labels = np.concatenate([np.zeros(50), np.ones(50)])
    fit = fit_odds(x, labels)
    assert fit.separation
    odds = fit.odds(x)
    assert np.all(np.isfinite(odds))
    assert odds.max() <= (1 - 1e-6) / 1e-6 + 1e-3


def test_odds_requires_both_classes():
    with pytest.raises(InvalidArgumentError):
        fit_odds(np.zeros((5, 1)), np.ones(5))


# ---------------------------------------------------------------------------
# smoother
# ---------------------------------------------------------------------------


def test_smoother_constant_response():
    u = np.linspace(0, 1, 50)
    fit = fit_smoother(u, np.full(50, 3.25))
    np.testing.assert_allclose(fit.predict(np.array([0.1, 0.9])), 3.25, atol=1e-12)


def test_smoother_identity_signal_matches_oracle():
    u = np.linspace(0, 1, 1000)
    fit = fit_smoother(u, u)
    got = float(fit.predict(np.array([0.5]))[0])
    assert got == pytest.approx(0.5, abs=0.01)
    assert got == pytest.approx(_brute_nw(0.5, u, u), abs=1e-12)


def test_smoother_degenerate_inputs():
    fit = fit_smoother(np.full(6, 2.0), np.arange(6.0))
    assert fit.degenerate
    np.testing.assert_allclose(fit.predict(np.array([0.0, 5.0])), 2.5)


def test_smoother_requires_five_pairs():
    with pytest.raises(InvalidArgumentError):
        fit_smoother(np.arange(4.0), np.arange(4.0))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=5, max_size=40),
    st.integers(0, 2**31 - 1),
)
def test_smoother_predictions_within_value_range(vs, seed):
    v = np.asarray(vs)
    gen = RngStream(seed).generator()
    u = gen.normal(size=v.shape[0])
    if np.std(u, ddof=1) == 0:
        return
    fit = fit_smoother(u, v)
    preds = fit.predict(gen.normal(scale=3.0, size=20))
    assert np.all(preds >= v.min() - 1e-9)
    assert np.all(preds <= v.max() + 1e-9)


def test_poly_features_degree_two():
    x = np.array([[1.0, 2.0]])
    feats = poly_features(x, 2)
    np.testing.assert_allclose(feats, [[1.0, 2.0, 1.0, 2.0, 4.0]])
