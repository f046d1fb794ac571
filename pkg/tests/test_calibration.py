import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from hsbw import (
    DomainError,
    NoiseCovarianceSet,
    NumericalError,
    RegionPanel,
    SchemaError,
    between_state_covariance,
    calibrate,
    calibrate_correlated,
    calibrate_heterogeneous,
    calibrate_homogeneous,
    replicate_noise_covariance,
    signal_covariance,
)
from hsbw.calibration import treated_covariance


def scalar_panel(values, states=None):
    n = len(values)
    states = states or [f"s{i}" for i in range(n)]
    return RegionPanel(states, [str(i) for i in range(n)], [1] * n, np.zeros(n),
                       np.asarray(values, dtype=float)[:, None], ["w"])


def replicate(panel, W):
    return RegionPanel(panel.state_id, panel.region_id, panel.treatment, panel.outcome, W,
                       panel.covariate_names)


# ----------------------------------------------------------------------
# replicate noise covariance


def test_identical_replicates_give_zero(rng):
    p = make_panel(rng)
    ns = replicate_noise_covariance([p, p, p], p)
    assert not ns.raw_per_unit.any()
    assert not ns.pooled.any()


def test_replicate_prefactor():
    p = scalar_panel([0.0])
    reps = [replicate(p, np.array([[1.0]])), replicate(p, np.array([[-1.0]]))]
    ns = replicate_noise_covariance(reps, p)
    assert ns.raw_per_unit[0, 0, 0] == pytest.approx(4.0)
    assert ns.replicate_count == 2 and ns.scale_factor == 4.0


def test_prefactor_constant_80():
    p = scalar_panel([0.0])
    reps = [replicate(p, np.array([[1.0]]))] * 80
    ns = replicate_noise_covariance(reps, p)
    assert ns.raw_per_unit[0, 0, 0] == pytest.approx(4 / 80 * 80)
    assert 4 / ns.replicate_count == 0.05


def test_replicate_errors(rng):
    p = make_panel(rng)
    with pytest.raises(DomainError):
        replicate_noise_covariance([p], p)
    other = p.subset(np.arange(p.n) > 0)
    with pytest.raises(SchemaError):
        replicate_noise_covariance([p, other], p)


def test_replicates_align_by_key(rng):
    p = make_panel(rng)
    reps = [replicate(p, p.covariates + rng.normal(0, 0.1, p.covariates.shape)) for _ in range(4)]
    a = replicate_noise_covariance(reps, p)
    perm = rng.permutation(p.n)
    shuffled = [r.subset(perm) for r in reps]
    b = replicate_noise_covariance(shuffled, p)
    np.testing.assert_array_equal(a.raw_per_unit, b.raw_per_unit)


def test_pooled_is_treated_mean(rng):
    p = make_panel(rng)
    reps = [replicate(p, p.covariates + rng.normal(0, 0.1, p.covariates.shape)) for _ in range(5)]
    ns = replicate_noise_covariance(reps, p)
    np.testing.assert_allclose(ns.pooled, ns.raw_per_unit[p.treated_mask].mean(axis=0))
    assert np.allclose(ns.pooled, ns.pooled.T, atol=1e-10)


# ----------------------------------------------------------------------
# signal covariance


def test_signal_zero_noise(rng):
    p = make_panel(rng)
    sx, rep = signal_covariance(p, np.zeros((3, 3)))
    np.testing.assert_allclose(sx, treated_covariance(p.treated().covariates), atol=1e-14)
    assert not rep.repaired


def test_signal_scalar_subtraction():
    p = scalar_panel([1.0, -1.0, 1.0, -1.0])  # variance 1 with divisor n
    p2 = scalar_panel(np.array([1.0, -1.0, 1.0, -1.0]) * np.sqrt(2))
    sx, _ = signal_covariance(p2, [[0.5]])
    assert sx[0, 0] == pytest.approx(1.5)
    assert treated_covariance(p.covariates)[0, 0] == pytest.approx(1.0)


def test_signal_negative_clipped():
    p = scalar_panel(np.array([1.0, -1.0]) * np.sqrt(0.3))
    sx, rep = signal_covariance(p, [[0.5]])
    assert sx[0, 0] == 0.0
    assert rep.clipped == pytest.approx((-0.2,))


# ----------------------------------------------------------------------
# homogeneous


def test_homogeneous_zero_noise_is_identity(rng):
    p = make_panel(rng)
    sx, _ = signal_covariance(p, np.zeros((3, 3)))
    cal = calibrate_homogeneous(p, sx, np.zeros((3, 3)))
    np.testing.assert_array_equal(cal.X_hat, p.treated().covariates)
    assert cal.kind == "homogeneous"


def test_homogeneous_zero_deviation():
    p = scalar_panel([2.0, -2.0, 0.0])
    cal = calibrate_homogeneous(p, [[1.0]], [[1.0]])
    assert cal.X_hat[2, 0] == pytest.approx(0.0)


def test_homogeneous_half_shrink():
    p = scalar_panel([2.0, -2.0])
    cal = calibrate_homogeneous(p, [[1.0]], [[1.0]])
    np.testing.assert_allclose(cal.X_hat[:, 0], [1.0, -1.0])


def test_kind_is_immutable(rng):
    p = make_panel(rng)
    cal = calibrate_homogeneous(p, np.eye(3), 0.1 * np.eye(3))
    with pytest.raises(AttributeError):
        cal.kind = "heterogeneous"
    with pytest.raises(ValueError):
        cal.X_hat[0, 0] = 1.0


def test_homogeneous_singular_gets_ridge():
    p = RegionPanel(["a", "b"], ["1", "1"], [1, 1], [0, 0], [[1.0, 1.0], [2.0, 2.0]], ["u", "v"])
    sx = np.array([[1.0, 1.0], [1.0, 1.0]])
    cal = calibrate_homogeneous(p, sx, np.array([[1e-14, 0], [0, 0]]))
    assert cal.repair.ridge == 1e-10
    assert np.isfinite(cal.X_hat).all()


def test_homogeneous_singular_after_ridge_raises():
    p = RegionPanel(["a", "b"], ["1", "1"], [1, 1], [0, 0], [[1.0, 1.0], [2.0, 2.0]], ["u", "v"])
    big = np.array([[1e8, 1e8], [1e8, 1e8]])
    with pytest.raises(NumericalError, match="condition number"):
        calibrate_homogeneous(p, big, np.array([[1e-300, 0], [0, 0]]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), noise=st.floats(0.01, 2.0))
def test_homogeneous_mean_and_contraction(seed, noise):
    r = np.random.default_rng(seed)
    p = make_panel(r, n_treated_states=8)
    sn = noise * np.diag(r.uniform(0.2, 1.0, 3))
    sx, _ = signal_covariance(p, sn)
    cal = calibrate_homogeneous(p, sx, sn)
    W = p.treated().covariates
    np.testing.assert_allclose(cal.X_hat.mean(axis=0), W.mean(axis=0), atol=1e-10)
    Sw = treated_covariance(W)
    Sx = treated_covariance(cal.X_hat)
    np.testing.assert_allclose(Sx, cal.kappa.T @ Sw @ cal.kappa, atol=1e-10)
    assert np.linalg.eigvalsh(Sw - Sx).min() >= -1e-8
    assert np.all(np.diag(Sx) <= np.diag(Sw) + 1e-10)


# ----------------------------------------------------------------------
# heterogeneous


def test_heterogeneous_equal_sizes_match_homogeneous(rng):
    p = make_panel(rng)
    n1 = p.n1
    raw = np.stack([np.diag(rng.uniform(0.1, 0.5, 3)) for _ in range(n1)])
    sx, _ = signal_covariance(p, raw.mean(axis=0))
    het = calibrate_heterogeneous(p, sx, raw, np.full(n1, 900.0))
    hom = calibrate_homogeneous(p, sx, raw.mean(axis=0))
    np.testing.assert_allclose(het.X_hat, hom.X_hat, atol=1e-12, rtol=0)


def test_heterogeneous_scalar_division():
    ns = NoiseCovarianceSet.from_raw(np.array([[[100 / 400.0]]]), [True], [[400.0]])
    assert ns.pooled_star[0, 0] == pytest.approx(100.0)
    assert ns.per_unit_scaled[0, 0, 0] == pytest.approx(0.25)


def test_heterogeneous_larger_sample_shrinks_less():
    p = scalar_panel([1.0, 1.0, -1.0, -1.0])
    raw = np.full((4, 1, 1), 0.5)
    cal = calibrate_heterogeneous(p, [[1.0]], raw, [400.0, 10000.0, 400.0, 10000.0])
    dev = np.abs(cal.X_hat[:, 0] - cal.treated_mean[0])
    assert dev[1] > dev[0]
    assert dev[3] > dev[2]


def test_heterogeneous_rejects_bad_sizes():
    p = scalar_panel([1.0, 2.0])
    with pytest.raises(DomainError):
        calibrate_heterogeneous(p, [[1.0]], np.ones((2, 1, 1)), [10.0, 0.0])


def test_heterogeneous_zero_noise_identity(rng):
    p = make_panel(rng)
    raw = np.zeros((p.n1, 3, 3))
    het = calibrate_heterogeneous(p, np.eye(3), raw, rng.uniform(300, 2000, p.n1))
    np.testing.assert_array_equal(het.X_hat, p.treated().covariates)


# ----------------------------------------------------------------------
# between-state covariance and correlated adjustment


def test_between_zero_when_identical():
    p = scalar_panel([0.0, 0.0, 0.0, 0.0], states=["a", "a", "b", "b"])
    sb, _ = between_state_covariance(p)
    assert sb[0, 0] == 0.0


def test_between_single_pair():
    p = scalar_panel([1.0, 1.0], states=["a", "a"])
    sb, _ = between_state_covariance(p, center=[0.0])
    assert sb[0, 0] == pytest.approx(1.0)


def test_between_needs_multi_region_state():
    with pytest.raises(DomainError):
        between_state_covariance(scalar_panel([1.0, 2.0]))


def test_between_vanishes_for_independent_data():
    r = np.random.default_rng(11)
    vals = []
    for _ in range(200):
        W = r.normal(3.0, 1.0, 400)
        p = scalar_panel(W, states=[f"s{i // 4}" for i in range(400)])
        sb, rep = between_state_covariance(p)
        # undo the eigenvalue clip so the average is of the raw estimate
        vals.append(sb.item() + sum(rep.clipped))
    vals = np.asarray(vals)
    # centering at the sample mean biases each pair product by -1/n
    bound = 3 * vals.std(ddof=1) / np.sqrt(vals.size) + 1 / 400
    assert abs(vals.mean()) <= bound


def test_between_matches_pairwise_loop(rng):
    p = make_panel(rng, n_treated_states=5)
    tp = p.treated()
    d = tp.covariates - tp.covariates.mean(axis=0)
    acc = np.zeros((3, 3))
    count = 0
    for s in np.unique(tp.state_id):
        idx = np.flatnonzero(tp.state_id == s)
        for i in idx:
            for j in idx:
                if i != j:
                    acc += np.outer(d[i], d[j])
                    count += 1
    expected = acc / count
    w, V = np.linalg.eigh(expected)
    expected = (V * np.maximum(w, 0)) @ V.T
    np.testing.assert_allclose(between_state_covariance(p)[0], expected, atol=1e-12)


def test_correlated_zero_between_is_homogeneous(rng):
    p = make_panel(rng)
    sn = 0.3 * np.eye(3)
    sx, _ = signal_covariance(p, sn)
    cor = calibrate_correlated(p, sx, sn, np.zeros((3, 3)))
    hom = calibrate_homogeneous(p, sx, sn)
    np.testing.assert_allclose(cor.X_hat, hom.X_hat, atol=1e-12, rtol=0)
    assert cor.kind == "correlated"


def test_correlated_tiny_between_close_to_homogeneous(rng):
    p = make_panel(rng)
    sn = 0.3 * np.eye(3)
    sx, _ = signal_covariance(p, sn)
    cor = calibrate_correlated(p, sx, sn, 1e-13 * np.eye(3))
    hom = calibrate_homogeneous(p, sx, sn)
    np.testing.assert_allclose(cor.X_hat, hom.X_hat, atol=1e-11)


def test_correlated_singleton_state_is_homogeneous():
    p = scalar_panel([2.0, 1.0, -3.0], states=["a", "b", "b"])
    cor = calibrate_correlated(p, [[1.0]], [[1.0]], [[0.5]])
    hom = calibrate_homogeneous(p, [[1.0]], [[1.0]])
    assert cor.X_hat[0, 0] == pytest.approx(hom.X_hat[0, 0], abs=1e-12)


def test_correlated_two_region_block():
    # W = (2, 0), mean 1 after centering -> deviations (1, -1)
    p = scalar_panel([2.0, 0.0], states=["a", "a"])
    cor = calibrate_correlated(p, [[1.0]], [[1.0]], [[0.5]])
    Sx = np.array([[1.0, 0.5], [0.5, 1.0]])
    Sw = np.array([[2.0, 0.5], [0.5, 2.0]])
    expected = 1.0 + Sx @ np.linalg.inv(Sw) @ np.array([1.0, -1.0])
    np.testing.assert_allclose(cor.X_hat[:, 0], expected, atol=1e-12)


def test_correlated_indefinite_names_state():
    p = scalar_panel([2.0, 0.0, 1.0], states=["a", "b", "b"])
    with pytest.raises(NumericalError, match="'b'"):
        calibrate_correlated(p, [[1.0]], [[0.01]], [[5.0]])


@pytest.mark.parametrize("kind", ["homogeneous", "heterogeneous", "correlated"])
def test_zero_noise_identity_all_kinds(rng, kind):
    p = make_panel(rng, with_sizes=True)
    ns = NoiseCovarianceSet.from_raw(np.zeros((p.n, 3, 3)), p.treated_mask, p.sample_sizes)
    cal = calibrate(p, ns, kind)
    np.testing.assert_array_equal(cal.X_hat, p.treated().covariates)


def test_calibrate_pipeline_psd_outputs(rng):
    p = make_panel(rng, with_sizes=True)
    reps = [replicate(p, p.covariates + rng.normal(0, 0.3, p.covariates.shape)) for _ in range(10)]
    ns = replicate_noise_covariance(reps, p)
    for kind in ("homogeneous", "heterogeneous", "correlated"):
        cal = calibrate(p, ns, kind)
        assert np.linalg.eigvalsh(cal.signal_cov).min() >= -1e-12
        assert np.allclose(cal.signal_cov, cal.signal_cov.T, atol=1e-10)
        if cal.between_cov is not None:
            assert np.linalg.eigvalsh(cal.between_cov).min() >= -1e-12
