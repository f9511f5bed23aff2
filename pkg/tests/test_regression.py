import math

import mpmath
import numpy as np
import pytest

from rangecollect.core import NoiseModel, PrivatizedRecord, canonical_partition
from rangecollect.regression import (
    DegenerateSegment,
    IntervalRegressionDataset,
    KNNLearner,
    LearnerFailure,
    NonFinite,
    OLSLearner,
    WrongShape,
    conditional_mean_case1,
    conditional_mean_case2,
    fit_interval_regression,
    predict,
)

mpmath.mp.dps = 40


def _mp_left_mean(s, scale, kind):
    """E(eps | eps <= s) by high-precision quadrature."""
    s = mpmath.mpf(s)
    sc = mpmath.mpf(scale)
    if kind == "logistic":
        def pdf(x):
            e = mpmath.e ** (-x / sc)
            return e / (sc * (1 + e) ** 2)

        def cdf(x):
            return 1 / (1 + mpmath.e ** (-x / sc))
    else:
        def pdf(x):
            return mpmath.e ** (-(x / sc) ** 2 / 2) / (sc * mpmath.sqrt(2 * mpmath.pi))

        def cdf(x):
            return mpmath.ncdf(x / sc)

    lo = s - 60 * sc
    num = mpmath.quad(lambda x: x * pdf(x), [lo, s])
    den = cdf(s)
    return float(num / den)


def _mp_middle_mean(u, v, scale, kind):
    u, v = mpmath.mpf(u), mpmath.mpf(v)
    sc = mpmath.mpf(scale)
    if kind == "logistic":
        def pdf(x):
            e = mpmath.e ** (-x / sc)
            return e / (sc * (1 + e) ** 2)

        def cdf(x):
            return 1 / (1 + mpmath.e ** (-x / sc))
    else:
        def pdf(x):
            return mpmath.e ** (-(x / sc) ** 2 / 2) / (sc * mpmath.sqrt(2 * mpmath.pi))

        def cdf(x):
            return mpmath.ncdf(x / sc)
    num = mpmath.quad(lambda x: x * pdf(x), [u, v])
    den = cdf(v) - cdf(u)
    return float(num / den)


# ---------------------------------------------------------------------------
# conditional means against high-precision quadrature


@pytest.mark.parametrize("kind", ["logistic", "gaussian"])
@pytest.mark.parametrize("scale", [0.5, 1.0, 2.0])
def test_left_mean_matches_quadrature(kind, scale):
    nm = NoiseModel(kind, scale)
    for s in np.linspace(-8 * scale, 8 * scale, 17):
        oracle = _mp_left_mean(float(s), scale, kind)
        got = conditional_mean_case1(float(s), 1, nm)
        assert got == pytest.approx(oracle, abs=1e-8)


@pytest.mark.parametrize("kind", ["logistic", "gaussian"])
def test_right_mean_by_symmetry(kind):
    nm = NoiseModel(kind, 1.3)
    for s in [-3.0, -0.5, 0.0, 0.7, 4.0]:
        left = conditional_mean_case1(-s, 1, nm)
        right = conditional_mean_case1(s, 0, nm)
        assert right == pytest.approx(-left, abs=1e-12)


def test_standard_logistic_left_tail_at_zero():
    got = conditional_mean_case1(0.0, 1, NoiseModel("logistic", 1.0))
    assert abs(got - (-2 * math.log(2))) < 1e-10


def test_deep_tail_guard_logistic():
    nm = NoiseModel("logistic", 2.0)
    got = conditional_mean_case1(-80.0, 1, nm)
    assert got == pytest.approx(-82.0, abs=1e-6)  # limit s - scale
    assert np.isfinite(conditional_mean_case1(-1e6, 1, nm))


def test_deep_tail_gaussian_finite():
    nm = NoiseModel("gaussian", 2.0)
    got = conditional_mean_case1(-16.0, 1, nm)
    assert got == pytest.approx(-16.2427362244722, abs=1e-8)
    assert np.isfinite(conditional_mean_case1(-300.0, 1, nm))


@pytest.mark.parametrize("kind", ["logistic", "gaussian"])
def test_middle_mean_matches_quadrature(kind):
    nm = NoiseModel(kind, 1.5)
    for (u, v) in [(-2.0, 1.0), (-0.3, 0.1), (2.0, 6.0), (-9.0, -6.0)]:
        oracle = _mp_middle_mean(u, v, 1.5, kind)
        got = conditional_mean_case2(u, v, 0, 1, nm)
        assert got == pytest.approx(oracle, abs=1e-8)


def test_case2_reduces_to_case1_on_outer_segments():
    nm = NoiseModel("gaussian", 1.0)
    assert conditional_mean_case2(-1.0, 2.0, 1, 0, nm) == pytest.approx(
        conditional_mean_case1(-1.0, 1, nm), abs=1e-14)
    assert conditional_mean_case2(-1.0, 2.0, 0, 0, nm) == pytest.approx(
        conditional_mean_case1(2.0, 0, nm), abs=1e-14)


def test_symmetric_middle_is_zero():
    for kind in ("logistic", "gaussian"):
        nm = NoiseModel(kind, 2.0)
        assert conditional_mean_case2(-3.0, 3.0, 0, 1, nm) == pytest.approx(
            0.0, abs=1e-12)


def test_degenerate_middle_segment():
    nm = NoiseModel("gaussian", 0.01)
    with pytest.raises(DegenerateSegment):
        conditional_mean_case2(5.0, 5.000001, 0, 1, nm)
    with pytest.raises(ValueError):
        conditional_mean_case2(2.0, 1.0, 0, 1, nm)


# ---------------------------------------------------------------------------
# dataset construction and surrogate containment


def rec2(x, u, y, exact=None):
    part = canonical_partition([u])
    return PrivatizedRecord(anchors=(u,), topology="canonical", partition=part,
                            choice=part.locate(y), exact=exact,
                            features=(float(x),))


def rec3(x, u, v, y):
    part = canonical_partition([u, v])
    return PrivatizedRecord(anchors=(u, v), topology="canonical",
                            partition=part, choice=part.locate(y),
                            features=(float(x),))


def test_dataset_shape_errors():
    part = canonical_partition([0.0])
    bare = PrivatizedRecord(anchors=(0.0,), topology="canonical",
                            partition=part, choice=1)
    with pytest.raises(WrongShape):
        IntervalRegressionDataset.from_records([bare])
    with pytest.raises(WrongShape):
        IntervalRegressionDataset.from_records(
            [rec2(1.0, 0.0, -1.0),
             PrivatizedRecord(anchors=(0.0,), topology="canonical",
                              partition=part, choice=1,
                              features=(1.0, 2.0))])
    with pytest.raises(WrongShape):
        IntervalRegressionDataset.from_records([])


def test_surrogates_stay_inside_chosen_ranges():
    rng = np.random.default_rng(0)
    recs = []
    for _ in range(100):
        x = rng.uniform(-2, 2)
        y = 2.0 * x + rng.logistic(0, 1)
        if rng.random() < 0.5:
            recs.append(rec2(x, float(rng.uniform(-6, 6)), y))
        else:
            a, b = sorted(rng.uniform(-6, 6, 2))
            recs.append(rec3(x, float(a), float(b), y))
    fit_interval_regression(recs, OLSLearner(), NoiseModel("logistic", 1.0),
                            max_iter=30)  # containment asserted internally


def test_all_exact_matches_raw_least_squares():
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, 60)
    y = 1.0 + 3.0 * x + rng.normal(0, 0.5, 60)
    recs = [rec2(xi, 100.0, yi, exact=float(yi)) for xi, yi in zip(x, y)]
    rep = fit_interval_regression(recs, OLSLearner(),
                                  NoiseModel("gaussian", 0.5))
    A = np.column_stack([np.ones_like(x), x])
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(rep.model, beta, atol=1e-8)
    assert rep.converged


def test_surrogate_unbiased_at_truth():
    # at the true regression function, the imputed response averages to the
    # truth at each feature value
    rng = np.random.default_rng(2)
    nm = NoiseModel("logistic", 1.0)
    for x in [-2.0, -0.5, 0.0, 1.0, 2.5]:
        f = 2.0 * x  # truth
        n = 10 ** 5
        eps = rng.logistic(0, 1, n)
        u = rng.uniform(-8, 8, n) + f
        delta = (f + eps <= u).astype(int)
        surr = f + conditional_mean_case1(u - f, delta, nm)
        se = surr.std(ddof=1) / math.sqrt(n)
        assert abs(surr.mean() - f) < 3 * se + 1e-3


def test_linear_recovery():
    rng = np.random.default_rng(3)
    n = 1000
    x = rng.uniform(-3, 3, n)
    y = 1.0 * x + rng.logistic(0, 1, n)
    u = rng.logistic(0, 5, n)
    recs = [rec2(xi, float(ui), yi) for xi, yi, ui in zip(x, y, u)]
    rep = fit_interval_regression(recs, OLSLearner(),
                                  NoiseModel("logistic", 1.0), max_iter=40)
    beta_hat = rep.model[1]
    assert abs(beta_hat - 1.0) < 0.15
    preds = predict(rep, np.array([[0.0], [1.0]]))
    assert preds[1] - preds[0] == pytest.approx(beta_hat)


def test_misspecified_scale_still_reasonable():
    rng = np.random.default_rng(4)
    n = 600
    x = rng.uniform(-3, 3, n)
    y = 1.0 * x + rng.logistic(0, 1, n)
    u = rng.logistic(0, 5, n)
    recs = [rec2(xi, float(ui), yi) for xi, yi, ui in zip(x, y, u)]
    good = fit_interval_regression(recs, OLSLearner(),
                                   NoiseModel("logistic", 1.0), max_iter=40)
    off = fit_interval_regression(recs, OLSLearner(),
                                  NoiseModel("logistic", 2.0), max_iter=40)
    assert abs(off.model[1] - 1.0) < 2 * max(abs(good.model[1] - 1.0), 0.1)


def test_sigma_estimation_recovers_scale():
    rng = np.random.default_rng(5)
    n = 800
    x = rng.uniform(-3, 3, n)
    y = 0.5 * x + rng.normal(0, 1.5, n)
    u = rng.normal(0, 4, n)
    recs = [rec2(xi, float(ui), yi) for xi, yi, ui in zip(x, y, u)]
    rep = fit_interval_regression(recs, OLSLearner(),
                                  NoiseModel("gaussian", 3.0),
                                  estimate_sigma=True, max_iter=40)
    assert rep.sigma_hat == pytest.approx(1.5, abs=0.4)


def test_knn_quadratic_shape():
    rng = np.random.default_rng(6)
    n = 300
    x = rng.uniform(-2, 4, n)
    f = x ** 2 - 2 * x + 3
    y = f + rng.logistic(0, 1, n)
    recs = []
    for xi, yi in zip(x, y):
        a, b = sorted(rng.logistic(0, 5, 2) + 3.0)
        recs.append(rec3(float(xi), float(a), float(b), float(yi)))
    rep = fit_interval_regression(recs, KNNLearner(10),
                                  NoiseModel("logistic", 1.0), max_iter=25)
    grid = np.linspace(-1.5, 3.5, 21)[:, None]
    pred = predict(rep, grid)
    truth = grid.ravel() ** 2 - 2 * grid.ravel() + 3
    assert np.mean((pred - truth) ** 2) < 2.0


def test_fit_determinism_and_callback():
    rng = np.random.default_rng(7)
    recs = [rec2(float(x), float(u), float(2 * x + e))
            for x, u, e in zip(rng.uniform(-2, 2, 50),
                               rng.uniform(-6, 6, 50),
                               rng.logistic(0, 1, 50))]
    seen = []
    rep1 = fit_interval_regression(
        recs, OLSLearner(), NoiseModel("logistic", 1.0),
        callback=lambda it, y, f, m: seen.append(it))
    rep2 = fit_interval_regression(recs, OLSLearner(),
                                   NoiseModel("logistic", 1.0))
    np.testing.assert_array_equal(rep1.model, rep2.model)
    assert seen == list(range(1, rep1.iterations + 1))


def test_learner_failure_wrapped():
    class Broken:
        def fit(self, X, y):
            raise RuntimeError("boom")

        def predict(self, model, X):
            return np.zeros(len(X))

    recs = [rec2(0.0, 1.0, 0.5), rec2(1.0, 1.0, 2.0)]
    with pytest.raises(LearnerFailure):
        fit_interval_regression(recs, Broken(), NoiseModel("logistic", 1.0))
