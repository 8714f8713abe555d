import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from codaadapt.errors import ValidationError
from codaadapt.metrics import ConfusionMatrix, confusion_matrix, metrics_from_confusion, metrics_report

from oracles import metrics_literal


def _check_against_oracle(counts, tol=1e-12):
    rep = metrics_from_confusion(counts)
    lit = metrics_literal(np.asarray(counts).tolist())
    assert rep.accuracy == pytest.approx(lit["accuracy"], abs=tol)
    assert rep.macro_f1 == pytest.approx(lit["macro_f1"], abs=tol)
    assert np.allclose(rep.precision, lit["precision"], rtol=0, atol=tol)
    assert np.allclose(rep.recall, lit["recall"], rtol=0, atol=tol)
    assert np.allclose(rep.f1, lit["f1"], rtol=0, atol=tol)


def test_diagonal_is_perfect():
    rep = metrics_from_confusion(np.diag([5, 7, 9]))
    assert rep.accuracy == 1.0 and rep.macro_f1 == 1.0


def test_worked_example():
    counts = [[50, 0, 0], [10, 30, 10], [0, 0, 50]]
    rep = metrics_from_confusion(counts)
    assert rep.accuracy == pytest.approx(130 / 150, abs=1e-15)
    # precision 50/60, 1, 50/60; recall 1, 0.6, 1
    f1 = [2 * (5 / 6) / (5 / 6 + 1), 2 * 0.6 / 1.6, 2 * (5 / 6) / (5 / 6 + 1)]
    assert rep.f1.tolist() == pytest.approx(f1, abs=1e-15)
    assert rep.macro_f1 == pytest.approx(sum(f1) / 3, abs=1e-15)
    _check_against_oracle(counts)


def test_random_matrices_match_oracle():
    rng = np.random.default_rng(0)
    for i in range(1000):
        k = int(rng.integers(2, 6))
        counts = rng.integers(0, 50, size=(k, k))
        if i % 7 == 0:
            counts[rng.integers(k)] = 0  # class without support
        if i % 11 == 0:
            counts[:, rng.integers(k)] = 0  # class never predicted
        if counts.sum() == 0:
            counts[0, 0] = 1
        _check_against_oracle(counts)


def test_zero_division_convention():
    rep = metrics_from_confusion([[4, 0, 0], [3, 0, 0], [0, 0, 0]])
    assert rep.precision.tolist() == pytest.approx([4 / 7, 0.0, 0.0])
    assert rep.recall.tolist() == [1.0, 0.0, 0.0]
    assert rep.f1[1] == 0.0 and rep.f1[2] == 0.0


def test_empty_matrix_rejected():
    with pytest.raises(ValidationError):
        metrics_from_confusion(np.zeros((3, 3), dtype=int))


def test_confusion_from_labels():
    cm = confusion_matrix([0, 1, 2, 2, 1], [0, 2, 2, 1, 1], 3)
    assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 1], [0, 1, 1]]
    assert cm.total == 5
    with pytest.raises(ValidationError):
        confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(ValidationError):
        ConfusionMatrix(np.array([[1, -1], [0, 1]]))


def test_report_dict_schema():
    d = metrics_report([0, 1, 2], [0, 1, 1], 3).to_dict(["a", "b", "c"])
    assert set(d) == {"accuracy", "macro_f1", "num_samples", "class_names", "precision", "recall", "f1", "confusion"}
    assert d["class_names"] == ["a", "b", "c"] and d["num_samples"] == 3


@settings(max_examples=200, deadline=None)
@given(arrays(np.int64, (3, 3), elements=st.integers(0, 30)), st.permutations([0, 1, 2]))
def test_permutation_equivariance(counts, perm):
    if counts.sum() == 0:
        counts[0, 0] = 1
    perm = np.asarray(perm)
    a = metrics_from_confusion(counts)
    b = metrics_from_confusion(counts[np.ix_(perm, perm)])
    assert b.accuracy == pytest.approx(a.accuracy, abs=1e-15)
    assert b.macro_f1 == pytest.approx(a.macro_f1, abs=1e-12)
    assert np.allclose(b.f1, a.f1[perm], atol=1e-15)
    assert np.allclose(b.precision, a.precision[perm], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.int64, (4, 4), elements=st.integers(0, 100)))
def test_accuracy_is_trace_over_total(counts):
    if counts.sum() == 0:
        return
    rep = metrics_from_confusion(counts)
    assert rep.accuracy == np.trace(counts) / counts.sum()
    assert 0.0 <= rep.macro_f1 <= 1.0
