import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from sklearn.base import clone

from kmle.exceptions import BoundaryMLE, OutOfSupport, ValidationError
from kmle.expfam import (
    DiagonalGaussian,
    KBregman,
    Poisson,
    SphericalGaussian,
    bregman_divergence,
    decomposition_residual,
    fit_mle,
    log_density,
    make_family,
)


def test_log_density_examples():
    sg = SphericalGaussian(1.0)
    assert log_density(sg, np.array([0.0]), np.array([0.0])) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    po = Poisson()
    assert log_density(po, np.array([0.0]), np.log([1.0])) == pytest.approx(-1.0, abs=1e-15)
    assert log_density(po, np.array([3.0]), np.log([2.0])) == pytest.approx(3 * math.log(2) - 2 - math.log(6), abs=1e-14)


def test_log_density_against_scipy(rng):
    sg = SphericalGaussian(2.5)
    dg = DiagonalGaussian([0.3, 4.0])
    po = Poisson()
    for _ in range(50):
        x, mu = rng.normal(size=2), rng.normal(size=2)
        want = stats.multivariate_normal(mu, 2.5 * np.eye(2)).logpdf(x)
        assert sg.log_density(x, sg.natural(mu)) == pytest.approx(want, rel=1e-12)
        want = stats.multivariate_normal(mu, np.diag([0.3, 4.0])).logpdf(x)
        assert dg.log_density(x, dg.natural(mu)) == pytest.approx(want, rel=1e-12)
        k, lam = rng.integers(0, 15, 3).astype(float), rng.uniform(0.1, 8, 3)
        want = stats.poisson(lam).logpmf(k).sum()
        assert po.log_density(k, po.natural(lam)) == pytest.approx(want, rel=1e-12)


def test_out_of_support():
    with pytest.raises(OutOfSupport):
        Poisson().log_density(np.array([-1.0]), np.array([0.0]))
    with pytest.raises(OutOfSupport):
        Poisson().log_density(np.array([1.5]), np.array([0.0]))
    with pytest.raises(OutOfSupport):
        Poisson().bregman_divergence(np.array([-2.0]), np.array([1.0]))


def test_divergence_examples():
    sg = SphericalGaussian(1.0)
    assert bregman_divergence(sg, np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 0.5
    assert bregman_divergence(Poisson(), np.array([2.0]), np.array([1.0])) == pytest.approx(2 * math.log(2) - 1, abs=1e-15)
    for fam, x in [(sg, np.array([0.3, -2.0])), (Poisson(), np.array([4.0, 0.0])),
                   (DiagonalGaussian([2.0, 3.0]), np.array([1.0, 1.0]))]:
        mu = np.where(x > 0, x, 1e-300) if fam.name == "poisson" else x
        assert bregman_divergence(fam, x, mu) == pytest.approx(0.0, abs=1e-12)


def test_divergence_nonnegative_bulk():
    rng = np.random.default_rng(77)
    n = 100_000
    x, mu = rng.normal(0, 3, (n, 2)), rng.normal(0, 3, (n, 2))
    d = 0.5 * np.sum((x - mu) ** 2, axis=1) / 1.7
    sg = SphericalGaussian(1.7)
    sample = rng.choice(n, 200, replace=False)
    for i in sample:
        assert sg.bregman_divergence(x[i], mu[i]) == pytest.approx(d[i], rel=1e-12, abs=1e-14)
    assert np.all(d >= 0)
    k = rng.integers(0, 30, n).astype(float)
    lam = rng.uniform(0.05, 30, n)
    po = Poisson()
    dp = np.array([po.bregman_divergence(np.array([a]), np.array([b])) for a, b in zip(k, lam)])
    assert np.all(dp >= -1e-12)
    assert np.all(dp[np.abs(k - lam) > 1e-6] > 0)


@pytest.mark.parametrize("fam", [SphericalGaussian(0.4), DiagonalGaussian([1.0, 2.0, 0.5])])
def test_decomposition_gaussian(fam, rng):
    for _ in range(1000):
        assert decomposition_residual(fam, rng.normal(0, 4, 3), rng.normal(0, 3, 3)) <= 1e-10


def test_decomposition_poisson_grid():
    po = Poisson()
    for x in range(21):
        for theta in np.linspace(-2, 2, 41):
            assert decomposition_residual(po, np.array([float(x)]), np.array([theta])) <= 1e-10


def test_decomposition_at_mean(rng):
    sg = SphericalGaussian(1.3)
    theta = rng.normal(size=3)
    x = sg.mean(theta)
    assert abs(sg.log_density(x, theta) - sg.log_b(x)) <= 1e-12
    assert decomposition_residual(sg, x, theta) <= 1e-12


def test_fit_mle_examples():
    sg = SphericalGaussian(1.0)
    assert sg.mean(fit_mle(sg, [np.array([1.0]), np.array([3.0])])) == pytest.approx([2.0])
    po = Poisson()
    theta = fit_mle(po, [np.array([v]) for v in (0.0, 1.0, 2.0, 3.0)])
    assert po.mean(theta) == pytest.approx([1.5]) and theta == pytest.approx([math.log(1.5)])
    with pytest.raises(BoundaryMLE):
        fit_mle(po, [np.array([0.0]), np.array([0.0])])


def test_score_equation_zero_at_mle(rng):
    items = rng.poisson(3.0, size=(25, 2)).astype(float)
    po = Poisson()
    theta = po.fit_mle(items)
    assert np.allclose(sum(po.score(x, theta) for x in items), 0.0, atol=1e-10)


def test_poisson_hessian_finite_difference():
    po = Poisson()
    x = np.array([4.0])
    for theta in (-1.5, 0.0, 0.7, 2.0):
        h = 1e-5
        fd = -(po.score(x, np.array([theta + h])) - po.score(x, np.array([theta - h])))[0] / (2 * h)
        assert fd == pytest.approx(math.exp(theta), rel=1e-6)
        assert po.variance(np.array([theta]))[0, 0] == pytest.approx(math.exp(theta), rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_gaussian_divergence_is_half_squared_distance(x, mu):
    x, mu = np.array(x), np.array(mu)
    d = SphericalGaussian(1.0).bregman_divergence(x, mu)
    assert d >= 0
    assert d == pytest.approx(0.5 * np.sum((x - mu) ** 2), rel=1e-9, abs=1e-9)


def test_make_family():
    assert isinstance(make_family("poisson"), Poisson)
    assert make_family("spherical_gaussian", sigma2=2.0).sigma2 == 2.0
    with pytest.raises(ValidationError):
        make_family("gamma")
    with pytest.raises(ValidationError):
        SphericalGaussian(0.0)


def test_loglik_matrix_matches_pointwise(rng):
    for fam, x in [(SphericalGaussian(0.8), rng.normal(size=(10, 3))),
                   (Poisson(), rng.poisson(2.0, (10, 3)).astype(float))]:
        thetas = [fam.natural(np.abs(rng.normal(size=3)) + 0.5) for _ in range(4)]
        mat = fam.loglik_matrix(list(x), thetas)
        want = np.array([[fam.log_density(r, t) for t in thetas] for r in x])
        assert np.allclose(mat, want, rtol=1e-12, atol=1e-12)


class TestKBregman:
    def test_params_round_trip(self):
        est = KBregman(n_clusters=3, family="poisson", random_state=0)
        assert est.get_params()["n_clusters"] == 3
        assert clone(est).get_params() == est.get_params()

    def test_fit_predict_transform(self, rng):
        x = np.vstack([rng.normal(-5, 1, (30, 2)), rng.normal(5, 1, (30, 2))])
        est = KBregman(n_clusters=2, random_state=1).fit(x)
        assert est.labels_.shape == (60,)
        assert np.array_equal(est.predict(x), est.labels_)
        d = est.transform(x)
        assert d.shape == (60, 2)
        assert np.array_equal(np.argmin(d, axis=1), est.labels_)
        assert est.score(x) == pytest.approx(est.loglik_trace_[-1], rel=1e-12)
        assert est.certificate_.tau_stable and est.certificate_.theta_stable
        assert np.array_equal(est.fit_predict(x), est.labels_)

    def test_poisson_counts(self, rng):
        x = np.vstack([rng.poisson(1.0, (40, 3)), rng.poisson(12.0, (40, 3))]).astype(float) + 1
        est = KBregman(n_clusters=2, family="poisson", random_state=3).fit(x)
        assert len(set(est.labels_[:40])) == 1 and len(set(est.labels_[40:])) == 1

    def test_bad_init_shape(self, rng):
        with pytest.raises(ValidationError):
            KBregman(n_clusters=2, init=np.zeros((3, 2))).fit(rng.normal(size=(10, 2)))
