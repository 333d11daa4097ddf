import numpy as np
import pytest

from kmle import metrics
from kmle.data import Assignment
from kmle.engine import (
    FitResult,
    StopReason,
    StopRule,
    check_partial_maximum,
    loglik_matrix,
    rescue_empty_clusters,
    run_kmle,
    tau_step,
    theta_step,
)
from kmle.exceptions import DegenerateCluster, NonFinite, SingularSigma, ValidationError
from kmle.expfam import SphericalGaussian
from kmle.kvars import VarFamily
from kmle.synth import GenSpec, gen_dataset


def test_tau_step_examples():
    assert tau_step([[-1, -2], [-3, -0.5]]).labels.tolist() == [0, 1]
    assert tau_step([[-1, -1]]).labels.tolist() == [0]
    assert tau_step(np.random.default_rng(0).normal(size=(7, 1))).labels.tolist() == [0] * 7


def test_tau_step_rejects_nonfinite():
    with pytest.raises(NonFinite):
        tau_step([[0.0, np.nan]])
    with pytest.raises(NonFinite):
        tau_step([[-np.inf, 0.0]])


def test_theta_step_gaussian_mean():
    fam = SphericalGaussian(1.0)
    items = [np.array([0.0, 0.0]), np.array([2.0, 2.0]), np.array([5.0, 5.0])]
    params = theta_step(items, Assignment([0, 0, 1], 2), fam)
    assert np.allclose(fam.mean(params[0]), [1.0, 1.0])


def test_theta_step_empty_cluster_raises():
    fam = SphericalGaussian(1.0)
    with pytest.raises(DegenerateCluster) as err:
        theta_step([np.zeros(1), np.ones(1)], Assignment([0, 0], 2), fam)
    assert err.value.cluster == 1


def test_rescue_takes_worst_fit_item():
    ll = np.array([[-1.0, -5.0], [-9.0, -20.0], [-2.0, -8.0]])
    fixed = rescue_empty_clusters(Assignment([0, 0, 0], 2), ll)
    assert fixed.labels.tolist() == [0, 1, 0]


def test_rescue_skips_singletons():
    # item 2 fits worst but is alone in cluster 1
    ll = np.array([[-1.0, -9.0, -9.0], [-2.0, -9.0, -9.0], [-9.0, -50.0, -9.0]])
    fixed = rescue_empty_clusters(Assignment([0, 0, 1], 3), ll)
    assert fixed.labels.tolist() == [0, 2, 1]


def test_rescue_enabled_in_run():
    fam = SphericalGaussian(1.0)
    items = [np.array([x]) for x in (0.0, 0.1, 0.2, 10.0)]
    res = run_kmle(items, fam, 2, [np.array([0.1]), np.array([100.0])])
    assert sorted(res.assignment.sizes.tolist()) == [1, 3]
    assert res.labels[3] != res.labels[0]
    with pytest.raises(DegenerateCluster):
        run_kmle(items, fam, 2, [np.array([0.1]), np.array([100.0])], strict=True)


def test_single_item_var_cluster_singular():
    ds, _, _ = gen_dataset(GenSpec(m=2, p=1, t=30, k=1, n_per_cluster=1, seed=1))
    # a constant series has zero residual covariance after fitting
    const = np.ones((1, 2, 30))
    fam = VarFamily(np.concatenate([ds.series, const]), 0)
    with pytest.raises(SingularSigma) as err:
        theta_step([0, 1], Assignment([0, 1], 2), fam)
    assert err.value.cluster == 1


def test_stop_rule_validation():
    with pytest.raises(ValidationError):
        StopRule("loglik", 0.0, 10)
    with pytest.raises(ValidationError):
        StopRule("loglik", float("nan"), 10)
    with pytest.raises(ValidationError):
        StopRule("loglik", 1e-6, 0)
    with pytest.raises(ValueError):
        StopRule("other", 1e-6, 10)
    rule = StopRule()
    assert (rule.mode.value, rule.epsilon, rule.max_iters) == ("loglik", 1e-6, 200)


def _blobs(seed):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-10, 1, (20, 2)), rng.normal(10, 1, (20, 2))])
    return x, np.repeat([0, 1], 20), rng


def test_k1_single_iteration():
    x, _, _ = _blobs(0)
    res = run_kmle(list(x), SphericalGaussian(), 1, [np.zeros(2)])
    assert res.iters == 1
    assert res.stop_reason is StopReason.LABEL_FIXED_POINT
    assert res.certificate.tau_stable and res.certificate.theta_stable


@pytest.mark.parametrize("seed", range(5))
def test_separated_blobs_recovered(seed):
    x, truth, rng = _blobs(seed)
    init = [x[rng.integers(0, 20)], x[20 + rng.integers(0, 20)]]
    fam = SphericalGaussian()
    res = run_kmle(list(x), fam, 2, [fam.natural(c) for c in init])
    # oracle: nearest true blob centre
    nearest = np.argmin([[np.sum((p - c) ** 2) for c in ([-10, -10], [10, 10])] for p in x], axis=1)
    assert np.array_equal(nearest, truth)
    assert metrics.ari(truth, res.labels) == 1.0


@pytest.mark.parametrize("mode", ["loglik", "param"])
def test_trace_ascent_and_no_repeats(mode):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 2)) * 3
    fam = SphericalGaussian(2.0)
    res = run_kmle(list(x), fam, 4, [fam.natural(c) for c in x[:4]], StopRule(mode, 1e-9, 200),
                   record_history=True)
    tr = np.asarray(res.trace)
    assert np.all(tr[1:] >= tr[:-1] - 1e-9 * np.maximum(1, np.abs(tr[:-1])))
    assert len(set(res.history)) == len(res.history) <= res.iters
    assert len(tr) == res.iters


def test_max_iters_truncation_reports_honestly():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(200, 2))
    fam = SphericalGaussian()
    res = run_kmle(list(x), fam, 5, [fam.natural(c) for c in x[:5]], StopRule("loglik", 1e-6, 1))
    assert res.stop_reason is StopReason.MAX_ITERS
    assert res.iters == 1
    assert not (res.certificate.tau_stable and res.certificate.theta_stable)


def test_hand_built_fixed_point():
    items = [np.array([v]) for v in (0.0, 0.5, 1.0, 6.0, 6.5, 7.0)]
    fam = SphericalGaussian()
    params = [fam.natural(np.array([0.0])), fam.natural(np.array([7.0]))]
    # run the two steps by hand until nothing changes
    labels = None
    for _ in range(20):
        new = tau_step(loglik_matrix(items, fam, params))
        if labels is not None and new == labels:
            break
        labels = new
        params = theta_step(items, labels, fam)
    res = FitResult(assignment=labels, params=params, trace=[0.0], iters=1,
                    stop_reason=StopReason.LABEL_FIXED_POINT)
    cert = check_partial_maximum(items, fam, res)
    assert cert.tau_stable and cert.theta_stable and bool(cert)
    assert labels.labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_idempotent_at_fixed_point():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(40, 2)) * 4
    fam = SphericalGaussian()
    res = run_kmle(list(x), fam, 3, [fam.natural(c) for c in x[:3]])
    again = run_kmle(list(x), fam, 3, res.params)
    assert again.iters == 1
    assert again.assignment == res.assignment
    assert max(np.linalg.norm(a - b) for a, b in zip(again.params, res.params)) <= 1e-6


def test_run_kmle_argument_checks():
    fam = SphericalGaussian()
    with pytest.raises(ValidationError):
        run_kmle([np.zeros(1)], fam, 0, [])
    with pytest.raises(ValidationError):
        run_kmle([np.zeros(1)], fam, 2, [np.zeros(1)])
