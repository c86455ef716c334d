"""Confusion counts, metric summaries, seed aggregation and log FDR."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sonoscope.errors import DegenerateError, EmptyError, LabelError, ShapeError
from sonoscope.metrics import (
    ConfusionMatrix,
    MetricsReport,
    aggregate,
    confusion,
    log_fdr,
    multiclass_mcc,
    summary,
)


def mcc_from_samples(y_true, y_pred, k):
    """Covariance form on one-hot indicators, summed over classes."""
    x = np.eye(k)[y_true]
    y = np.eye(k)[y_pred]
    xc, yc = x - x.mean(axis=0), y - y.mean(axis=0)
    den = math.sqrt((xc * xc).sum() * (yc * yc).sum())
    return 0.0 if den == 0 else float((xc * yc).sum() / den)


def samples_from_counts(counts):
    t, p = np.nonzero(counts)
    reps = counts[t, p]
    return np.repeat(t, reps), np.repeat(p, reps)


count_matrices = st.integers(2, 6).flatmap(
    lambda k: arrays(np.int64, (k, k), elements=st.integers(0, 30))).filter(lambda c: c.sum() > 0)


class TestConfusion:
    def test_hand_count(self):
        cm = confusion([0, 0, 1, 1], [0, 1, 1, 1], 2)
        np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 2]])
        assert cm.total == 4 and cm.n_classes == 2

    def test_perfect_is_diagonal(self):
        y = [0, 1, 2, 3, 3, 2]
        np.testing.assert_array_equal(confusion(y, y, 4).counts, np.diag([1, 1, 2, 2]))

    def test_row_sums_are_supports(self):
        rng = np.random.default_rng(0)
        t, p = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
        np.testing.assert_array_equal(confusion(t, p, 4).counts.sum(axis=1), np.bincount(t, minlength=4))

    @pytest.mark.parametrize("t, p", [([0, 4], [0, 1]), ([0, 1], [0, -1])])
    def test_label_out_of_range(self, t, p):
        with pytest.raises(LabelError):
            confusion(t, p, 4)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([0, 1], [0], 2)

    def test_normalized_rows(self):
        cm = ConfusionMatrix(np.array([[3, 1, 0], [0, 0, 0], [2, 2, 4]]))
        norm = cm.normalized()
        np.testing.assert_allclose(norm.sum(axis=1), [1, 0, 1])
        np.testing.assert_allclose(norm[0], [0.75, 0.25, 0])


class TestSummary:
    def test_two_by_two_example(self):
        rep = summary(ConfusionMatrix(np.array([[1, 1], [0, 2]])))
        assert rep.accuracy == 0.75
        assert rep.mcc == pytest.approx(1 / math.sqrt(3), abs=1e-12)
        assert round(rep.mcc, 3) == 0.577
        assert rep.mcc == pytest.approx(mcc_from_samples(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2))
        # precision (1, 2/3), recall (1/2, 1), supports (2, 2)
        assert rep.precision == pytest.approx(5 / 6)
        assert rep.recall == 0.75
        assert rep.f1 == pytest.approx(0.5 * (2 / 3) + 0.5 * 0.8)

    def test_diagonal(self):
        rep = summary(ConfusionMatrix(np.diag([5, 3, 7, 1])))
        assert rep.values() == dict(accuracy=1.0, precision=1.0, recall=1.0, f1=1.0, mcc=1.0)

    def test_single_predicted_class(self):
        counts = np.zeros((4, 4), dtype=np.int64)
        counts[:, 2] = 10
        rep = summary(ConfusionMatrix(counts))
        assert rep.mcc == 0.0 and rep.accuracy == 0.25
        # classes never predicted get precision 0 by convention
        assert rep.precision == pytest.approx(0.25 * 0.25)

    def test_empty(self):
        with pytest.raises(EmptyError):
            summary(ConfusionMatrix(np.zeros((4, 4), dtype=np.int64)))

    def test_weighted_recall_is_accuracy_1000(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(2, 7))
            counts = rng.integers(0, 50, (k, k))
            counts[0, 0] += 1
            rep = summary(ConfusionMatrix(counts))
            assert rep.recall == pytest.approx(rep.accuracy, abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(count_matrices)
    def test_mcc_matches_sample_covariance(self, counts):
        t, p = samples_from_counts(counts)
        assert multiclass_mcc(counts) == pytest.approx(mcc_from_samples(t, p, counts.shape[0]), abs=1e-9)

    @settings(max_examples=300, deadline=None)
    @given(count_matrices)
    def test_bounds(self, counts):
        rep = summary(ConfusionMatrix(counts))
        for name in ("accuracy", "precision", "recall", "f1"):
            assert 0.0 <= getattr(rep, name) <= 1.0 + 1e-12
        assert -1.0 - 1e-12 <= rep.mcc <= 1.0 + 1e-12
        diagonal = not (counts - np.diag(np.diag(counts))).any()
        if not diagonal:
            assert rep.mcc < 1.0 - 1e-12
        elif np.count_nonzero(np.diag(counts)) > 1:
            assert rep.mcc == pytest.approx(1.0, abs=1e-12)
        else:
            assert rep.mcc == 0.0  # a single populated class has degenerate marginals

    @settings(max_examples=100, deadline=None)
    @given(count_matrices, st.randoms())
    def test_class_permutation_invariance(self, counts, rnd):
        perm = list(range(counts.shape[0]))
        rnd.shuffle(perm)
        a = summary(ConfusionMatrix(counts)).values()
        b = summary(ConfusionMatrix(counts[np.ix_(perm, perm)])).values()
        for name in a:
            assert a[name] == pytest.approx(b[name], abs=1e-12)


def _report(acc, **kw):
    vals = dict(precision=acc, recall=acc, f1=acc, mcc=acc)
    vals.update(kw)
    return MetricsReport(accuracy=acc, **vals)


class TestAggregate:
    def test_two_runs(self):
        agg = aggregate([_report(0.6), _report(0.7)])
        assert agg.accuracy == pytest.approx(0.65)
        assert agg.std["accuracy"] == pytest.approx(math.sqrt(0.005), abs=1e-12)
        assert round(agg.std["accuracy"], 4) == 0.0707
        assert agg.n_runs == 2

    def test_single_run(self):
        agg = aggregate([_report(0.8, mcc=0.5)])
        assert agg.values() == _report(0.8, mcc=0.5).values()
        assert set(agg.std.values()) == {0.0}

    def test_identical_runs(self):
        agg = aggregate([_report(0.9)] * 3)
        assert set(agg.std.values()) == {0.0}

    def test_per_class_mean(self):
        cms = [np.array([[2, 0], [1, 1]]), np.array([[2, 0], [0, 2]])]
        agg = aggregate(summary(ConfusionMatrix(c)) for c in cms)
        np.testing.assert_allclose(agg.per_class["recall"], [1.0, 0.75])

    def test_empty(self):
        with pytest.raises(EmptyError):
            aggregate([])

    def test_dict_shape(self):
        d = aggregate([_report(0.6), _report(0.7)]).to_dict()
        assert set(d) == {"mean", "std", "n_runs", "per_class"}
        assert list(d["mean"]) == ["accuracy", "precision", "recall", "f1", "mcc"]


def two_clouds(separation, n=40, seed=0):
    """Two 2-D classes; the within-class offsets are the same for every separation."""
    rng = np.random.default_rng(seed)
    offsets = rng.standard_normal((n, 2)) * 0.1
    offsets -= offsets.mean(axis=0)
    x = np.vstack([offsets + [-separation / 2, 0], offsets + [separation / 2, 0]])
    return x, np.repeat([0, 1], n)


class TestLogFdr:
    def test_analytic_two_class(self):
        x, y = two_clouds(3.0)
        offsets = x[:40] - x[:40].mean(axis=0)
        s_w = 2 * offsets.T @ offsets
        # equal class sizes: S_B = 2 n (d/2)^2 e1 e1^T
        s_b = np.zeros((2, 2))
        s_b[0, 0] = 2 * 40 * 1.5 ** 2
        ridge = 1e-6 * np.trace(s_w) / 2
        expected = math.log1p(np.trace(np.linalg.solve(s_w + ridge * np.eye(2), s_b)))
        assert log_fdr(x, y) == pytest.approx(expected, rel=1e-10)

    def test_monotone_in_separation(self):
        scores = [log_fdr(*two_clouds(d)) for d in (0.5, 1.0, 2.0, 4.0, 8.0)]
        assert all(a < b for a, b in zip(scores, scores[1:]))

    def test_identical_classes(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal((30, 4))
        x = np.vstack([base, base])
        assert log_fdr(x, np.repeat([0, 1], 30)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_similarity_invariance(self, seed):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(4), 25)
        x = rng.standard_normal((100, 6)) + y[:, None] * rng.standard_normal(6)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        a = 3.7 * q
        assert abs(log_fdr(x @ a.T, y) - log_fdr(x, y)) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_general_linear_map(self, seed):
        # the isotropic ridge does not follow a general map; the drift is O(ridge * cond)
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(4), 25)
        x = rng.standard_normal((100, 6)) + y[:, None] * rng.standard_normal(6)
        a = rng.standard_normal((6, 6)) + 3 * np.eye(6)
        assert abs(log_fdr(x @ a.T, y) - log_fdr(x, y)) < 1e-3

    def test_more_dims_than_samples(self):
        rng = np.random.default_rng(2)
        y = np.repeat([0, 1, 2, 3], 5)
        x = rng.standard_normal((20, 512)) + y[:, None]
        score = log_fdr(x, y)
        assert np.isfinite(score) and score > 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 5), st.integers(1, 8))
    def test_nonnegative(self, seed, k, dim):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(k), 3)
        assert log_fdr(rng.standard_normal((y.size, dim)), y) >= 0

    def test_single_class(self):
        with pytest.raises(DegenerateError):
            log_fdr(np.zeros((5, 3)), np.zeros(5))

    def test_singleton_class(self):
        with pytest.raises(DegenerateError):
            log_fdr(np.random.default_rng(0).standard_normal((5, 3)), [0, 0, 0, 0, 1])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            log_fdr(np.zeros((5, 3)), [0, 1])
