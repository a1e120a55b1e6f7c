import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genesig.data import (
    ExpressionMatrix,
    LabelVector,
    NormalizationStats,
    class_counts_ok,
    interpolate,
    load_expression,
    read_expression,
    smote_balance,
    stratified_kfold,
    write_expression,
    write_labels,
    zscore_apply,
    zscore_fit,
)
from genesig.errors import ConfigError, DataFormatError, InsufficientSamplesError, MissingGeneError


def _toy():
    return ExpressionMatrix(np.array([[1.5, -2.0], [0.0, 3.25], [1e-7, 42.0]]), ("TP53", "ESR1"), ("a", "b", "c"))


def test_round_trip(tmp_path):
    X = _toy()
    for name in ("x.csv", "x.tsv"):
        write_expression(X, tmp_path / name)
        back = read_expression(tmp_path / name)
        assert back.gene_names == X.gene_names and back.sample_ids == X.sample_ids
        np.testing.assert_array_equal(back.values, X.values)


def test_sample_ids_stay_strings(tmp_path):
    (tmp_path / "x.csv").write_text("id,G1\n001,1\n2,2\n")
    assert read_expression(tmp_path / "x.csv").sample_ids == ("001", "2")


def test_missing_label_drops_sample(tmp_path, caplog):
    X = _toy()
    write_expression(X, tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("sample_id,label\na,Basal\nc,LumA\n")
    with caplog.at_level(logging.WARNING):
        Xl, y = load_expression(tmp_path / "x.csv", tmp_path / "y.csv")
    assert Xl.sample_ids == ("a", "c")
    assert y.class_names == ("Basal", "LumA")
    assert "dropped 1 sample" in caplog.text


def test_duplicate_gene_is_named(tmp_path):
    (tmp_path / "x.csv").write_text("id,TP53,TP53\na,1,2\n")
    with pytest.raises(DataFormatError, match="TP53"):
        read_expression(tmp_path / "x.csv")


def test_duplicate_sample(tmp_path):
    (tmp_path / "x.csv").write_text("id,G1\na,1\na,2\n")
    with pytest.raises(DataFormatError, match="'a'"):
        read_expression(tmp_path / "x.csv")


def test_non_numeric_cell_position(tmp_path):
    (tmp_path / "x.csv").write_text("id,G1,G2\na,1,2\nb,3,oops\n")
    with pytest.raises(DataFormatError) as info:
        read_expression(tmp_path / "x.csv")
    msg = str(info.value)
    assert "oops" in msg and "3" in msg and "G2" in msg


def test_missing_gene_lookup():
    with pytest.raises(MissingGeneError) as info:
        _toy().select_genes(["ESR1", "ERBB2"])
    assert info.value.genes == ["ERBB2"]


def test_labels_written_and_read(tmp_path):
    X = _toy()
    y = LabelVector(np.array([1, 0, 1]), ("Her2", "LumB"))
    write_expression(X, tmp_path / "x.csv")
    write_labels(X.sample_ids, y, tmp_path / "y.csv")
    _, back = load_expression(tmp_path / "x.csv", tmp_path / "y.csv", class_names=("Her2", "LumB"))
    np.testing.assert_array_equal(back.labels, y.labels)


def test_zscore_examples():
    stats = zscore_fit(np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]))
    Z = zscore_apply(np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]), stats)
    np.testing.assert_allclose(Z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    np.testing.assert_array_equal(Z[:, 1], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(zscore_apply(stats.mean, stats), [0.0, 0.0])


def test_zscore_stats_round_trip():
    stats = zscore_fit(np.random.default_rng(0).normal(size=(10, 3)))
    back = NormalizationStats.from_dict(stats.to_dict())
    np.testing.assert_array_equal(back.mean, stats.mean)
    np.testing.assert_array_equal(back.std, stats.std)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 30), st.integers(1, 6))
def test_zscore_refit_is_standard(seed, n, g):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, g)) * rng.uniform(0.1, 100, size=g) + rng.normal(0, 50, size=g)
    Z = zscore_apply(X, zscore_fit(X))
    again = zscore_fit(Z)
    np.testing.assert_allclose(again.mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(again.std, 1.0, atol=1e-12)


def test_smote_midpoint():
    np.testing.assert_array_equal(interpolate([0.0, 0.0], [1.0, 1.0], 0.5), [0.5, 0.5])


def test_smote_balanced_is_noop():
    X = np.arange(12.0).reshape(6, 2)
    y = np.array([0, 1, 2, 0, 1, 2])
    Xb, yb = smote_balance(X, y)
    np.testing.assert_array_equal(Xb, X)
    np.testing.assert_array_equal(yb, y)


def _check_segments(X, y, Xb, yb, info):
    n = len(X)
    np.testing.assert_array_equal(Xb[:n], X)
    assert len(info) == len(Xb) - n
    for row, (c, a, b, lam) in zip(Xb[n:], info):
        assert y[a] == c and y[b] == c and a != b
        assert 0.0 <= lam <= 1.0
        assert np.max(np.abs(row - (X[a] + lam * (X[b] - X[a])))) <= 1e-12


def test_smote_cohort_sizes_and_segments():
    rng = np.random.default_rng(0)
    sizes = (142, 67, 434, 194)
    y = np.concatenate([np.full(n, c) for c, n in enumerate(sizes)])
    X = rng.normal(size=(len(y), 8)) + y[:, None]
    Xb, yb, info = smote_balance(X, y, seed=1, return_info=True)
    assert np.bincount(yb).tolist() == [434] * 4
    _check_segments(X, y, Xb, yb, info)


def test_smote_points_on_some_segment_brute_force():
    rng = np.random.default_rng(2)
    y = np.array([0] * 6 + [1] * 2)
    X = rng.normal(size=(8, 3))
    Xb, yb = smote_balance(X, y, seed=4)
    for s in Xb[8:]:
        members = X[y == 1]
        a, b = members
        lam = np.dot(s - a, b - a) / np.dot(b - a, b - a)
        assert -1e-12 <= lam <= 1 + 1e-12
        assert np.max(np.abs(a + lam * (b - a) - s)) <= 1e-12


def test_smote_singleton_class():
    with pytest.raises(InsufficientSamplesError):
        smote_balance(np.zeros((4, 2)), np.array([0, 0, 0, 1]))


def test_smote_keeps_label_vector_type():
    y = LabelVector(np.array([0, 0, 0, 1, 1]), ("A", "B"))
    _, yb = smote_balance(np.random.default_rng(0).normal(size=(5, 2)), y)
    assert isinstance(yb, LabelVector) and yb.counts().tolist() == [3, 3]


def test_folds_exact_stratification():
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    plan = stratified_kfold(y, 2, seed=0)
    for f in plan.folds:
        assert np.bincount(y[f]).tolist() == [2, 2]


def test_folds_reject_bad_k():
    y = np.array([0, 0, 0, 1, 1, 1])
    with pytest.raises(ConfigError):
        stratified_kfold(y, 1)
    with pytest.raises(ConfigError):
        stratified_kfold(y, 4)


def test_folds_deterministic():
    y = np.random.default_rng(0).integers(0, 3, size=50)
    a, b = stratified_kfold(y, 5, seed=3), stratified_kfold(y, 5, seed=3)
    assert all(np.array_equal(p, q) for p, q in zip(a.folds, b.folds))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=2, max_size=5), st.integers(2, 10), st.integers(0, 1000))
def test_folds_partition_and_balance(sizes, k, seed):
    k = min(k, min(sizes))
    y = np.random.default_rng(seed).permutation(np.concatenate([np.full(n, c) for c, n in enumerate(sizes)]))
    plan = stratified_kfold(y, k, seed)
    allidx = np.concatenate(plan.folds)
    assert sorted(allidx.tolist()) == list(range(len(y)))
    assert class_counts_ok(plan, y)
    lens = [len(f) for f in plan.folds]
    assert max(lens) - min(lens) <= 1
    train, test = plan.split(0)
    assert not set(train) & set(test) and len(train) + len(test) == len(y)
