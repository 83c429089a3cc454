import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from webfps.features import (
    FeatureTransform, apply_pca, apply_scaler, equal_frequency_bins, fit_pca, fit_scaler, gain_ratio_importance,
    importance_report, varimax_contribution, varimax_rotate,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


# ------------------------------------------------------------------ scaler


def test_scaler_single_row():
    p = fit_scaler([[2.0, 5.0]])
    assert p.min.tolist() == [2, 5] and p.max.tolist() == [2, 5]
    assert apply_scaler([7.0, 1.0], p).tolist() == [0.0, 0.0]


def test_scaler_column_range():
    p = fit_scaler([[0.0], [10.0]])
    assert (p.min[0], p.max[0]) == (0, 10)
    assert apply_scaler([5.0], p)[0] == 0.5
    assert apply_scaler([-3.0], p)[0] == 0.0
    assert apply_scaler([99.0], p)[0] == 1.0


def test_scaler_matches_column_scan():
    X = np.random.default_rng(3).normal(size=(100, 7))
    p = fit_scaler(X)
    for j in range(7):
        col = [X[i, j] for i in range(100)]
        lo = hi = col[0]
        for v in col:
            lo, hi = min(lo, v), max(hi, v)
        assert (p.min[j], p.max[j]) == (lo, hi)


def test_scaler_errors():
    with pytest.raises(ValueError):
        fit_scaler(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        apply_scaler([1.0, 2.0], fit_scaler([[1.0, 2.0, 3.0]]))


@settings(max_examples=200)
@given(arrays(float, (6, 3), elements=finite), arrays(float, 3, elements=st.floats(-1e9, 1e9)))
def test_scaler_output_in_unit_box(X, x):
    out = apply_scaler(x, fit_scaler(X))
    assert np.all((out >= 0) & (out <= 1))


# --------------------------------------------------------------------- PCA


def test_pca_line_is_rank_one():
    t = np.linspace(0, 1, 20)
    X = np.column_stack([t, 2 * t + 1])
    pca = fit_pca(X)
    assert pca.k == 1
    np.testing.assert_allclose(pca.explained_variance_ratio, [1.0])


def test_pca_isotropic_needs_both():
    X = np.random.default_rng(0).normal(size=(5000, 2))
    pca = fit_pca(X, 0.95)
    assert pca.k == 2
    assert pca.explained_variance_ratio[0] == pytest.approx(0.5, abs=0.03)


def test_pca_full_reconstruction():
    X = np.random.default_rng(1).normal(size=(30, 5))
    pca = fit_pca(X, variance_target=1.0, k_max=5)
    assert pca.k == 5
    Z = apply_pca(X, pca)
    np.testing.assert_allclose(Z @ pca.components, X - X.mean(axis=0), atol=1e-8)


def test_pca_zero_variance_warns():
    with pytest.warns(RuntimeWarning):
        pca = fit_pca(np.ones((5, 3)))
    assert pca.k == 0


def test_pca_cap_flagged():
    X = np.random.default_rng(2).normal(size=(50, 10))
    pca = fit_pca(X, 0.95, k_max=3)
    assert pca.k == 3 and pca.capped


def test_pca_sign_convention():
    X = np.random.default_rng(4).normal(size=(40, 6))
    for row in fit_pca(X, 1.0).components:
        assert row[np.argmax(np.abs(row))] > 0


def test_apply_pca_examples():
    X = np.random.default_rng(5).normal(size=(25, 4))
    pca = fit_pca(X, 1.0)
    np.testing.assert_allclose(apply_pca(pca.mean, pca), np.zeros(pca.k), atol=1e-12)
    e0 = apply_pca(pca.mean + pca.components[0], pca)
    np.testing.assert_allclose(e0, np.eye(pca.k)[0], atol=1e-12)
    x = np.random.default_rng(6).normal(size=4)
    naive = [sum(pca.components[i, j] * (x[j] - pca.mean[j]) for j in range(4)) for i in range(pca.k)]
    np.testing.assert_allclose(apply_pca(x, pca), naive, atol=1e-12)
    with pytest.raises(ValueError):
        apply_pca(np.zeros(3), pca)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 30), st.integers(2, 8), st.integers(0, 10_000))
def test_pca_invariants(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.1, 3, size=d)
    pca = fit_pca(X, 0.95, k_max=d)
    C = pca.components
    np.testing.assert_allclose(C @ C.T, np.eye(pca.k), atol=1e-8)
    r = pca.explained_variance_ratio
    assert np.all((r >= 0) & (r <= 1)) and np.all(np.diff(r) <= 1e-12) and r.sum() <= 1 + 1e-9
    assert r.sum() >= 0.95 - 1e-12 or pca.capped
    # vectors in the component span round-trip
    z = rng.normal(size=pca.k)
    x = pca.mean + z @ C
    np.testing.assert_allclose(apply_pca(x, pca), z, atol=1e-8)


# ----------------------------------------------------------------- varimax


def test_varimax_single_column_unchanged():
    A = np.random.default_rng(0).normal(size=(6, 1))
    np.testing.assert_array_equal(varimax_rotate(A), A)


def test_varimax_axis_aligned_fixed_point():
    A = np.array([[0.9, 0], [0.7, 0], [0, 0.8], [0, -0.5]])
    out = varimax_rotate(A)
    np.testing.assert_allclose(np.abs(out), np.abs(A), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 25), st.integers(2, 6), st.integers(0, 10_000), st.booleans())
def test_varimax_is_orthogonal_and_keeps_communality(d, k, seed, normalize):
    A = np.random.default_rng(seed).normal(size=(d, k))
    L, R = varimax_rotate(A, normalize=normalize, return_rotation=True)
    np.testing.assert_allclose(R.T @ R, np.eye(k), atol=1e-8)
    assert np.max(np.abs((L**2).sum(axis=1) - (A**2).sum(axis=1))) < 1e-8


def test_varimax_contribution_shares(records):
    X = np.vstack([r.features.values for r in records])
    t = FeatureTransform.fit(X, [str(i) for i in range(X.shape[1])])
    c = varimax_contribution(t.pca)
    assert c.shape == (X.shape[1],) and np.all(c >= 0)
    assert c.sum() == pytest.approx(1.0)


# -------------------------------------------------------------- gain ratio


def test_equal_frequency_bins_ties_share_a_bin():
    assert equal_frequency_bins(np.array([5, 5, 5, 5]), 4).tolist() == [0, 0, 0, 0]
    assert equal_frequency_bins(np.arange(10.0), 5).tolist() == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]


def test_gain_ratio_perfect_and_constant():
    y = np.arange(40.0)
    X = np.column_stack([y, np.full(40, 3.0)])
    g = gain_ratio_importance(X, y, bins=10)
    assert g[0] == pytest.approx(1.0)
    assert g[1] == 0.0


def test_gain_ratio_hand_example():
    # x bins {1,1,1}->0, {2}->1; y bins {1,2}->0, {3,4}->1
    # IG = 1 - 3/4 H(2/3,1/3); split entropy H(3/4,1/4)
    g = gain_ratio_importance(np.array([[1.0], [1.0], [1.0], [2.0]]), np.array([1.0, 2.0, 3.0, 4.0]), bins=2)
    assert g[0] == pytest.approx(0.3836885465963443, rel=1e-9)


def test_gain_ratio_needs_enough_samples():
    with pytest.raises(ValueError):
        gain_ratio_importance(np.zeros((3, 1)), np.zeros(3), bins=10)


def test_gain_ratio_monotone_invariance():
    rng = np.random.default_rng(7)
    X = rng.uniform(0.1, 5, size=(200, 3))
    y = X[:, 0] * 3 + rng.normal(size=200)
    base = gain_ratio_importance(X, y)
    X2 = X.copy()
    X2[:, 0] = X2[:, 0] ** 2
    np.testing.assert_allclose(gain_ratio_importance(X2, y), base)
    assert np.all((base >= 0) & (base <= 1))


# --------------------------------------------------------------- transform


def test_transform_json_roundtrip(tmp_path, records, manifest):
    X = np.vstack([r.features.values for r in records])
    t = FeatureTransform.fit(X, manifest.feature_names, manifest_version=manifest.version)
    t.save(tmp_path / "t.json")
    back = FeatureTransform.load(tmp_path / "t.json")
    assert back.k == t.k and back.feature_names == t.feature_names
    np.testing.assert_array_equal(back.transform(X), t.transform(X))


def test_importance_report_csv(tmp_path, records, manifest):
    X = np.vstack([r.features.values for r in records])
    y = X[:, 0]
    t = FeatureTransform.fit(X, manifest.feature_names)
    rep = importance_report(X, y, t)
    rep.write_csv(tmp_path / "imp.csv")
    lines = (tmp_path / "imp.csv").read_text().splitlines()
    assert lines[0] == "feature,varimax_contribution,gain_ratio"
    assert len(lines) == manifest.dimension + 1
    assert rep.gain_ratio[manifest.index("dom.nodes")] == pytest.approx(1.0)
