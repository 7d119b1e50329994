import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rplnet.errors import ContractError
from rplnet.metrics import (
    ScoreTable,
    aupr,
    aupr_known,
    aupr_unknown,
    auroc,
    closed_accuracy,
    f1_at_threshold,
    histogram_rows,
    openness,
    write_histogram_csv,
)


# -- independent O(n^2) oracles ---------------------------------------------

def auroc_pairwise_oracle(known, unknown):
    total = 0.0
    for k in known:
        for u in unknown:
            total += 1.0 if k > u else (0.5 if k == u else 0.0)
    return total / (len(known) * len(unknown))


def aupr_sweep_oracle(scores, positives):
    """Average precision via an explicit threshold sweep over unique scores."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = positives.sum()
    total = 0.0
    prev_tp = 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        taken = scores >= t
        tp = float((taken & positives).sum())
        precision = tp / taken.sum()
        total += precision * (tp - prev_tp)
        prev_tp = tp
    return total / n_pos


# -- AUROC -------------------------------------------------------------------

def test_auroc_perfect_separation():
    assert auroc([2.0, 3.0], [1.0]) == pytest.approx(1.0)


def test_auroc_interleaved_is_half():
    assert auroc([1.0, 3.0], [2.0]) == pytest.approx(0.5)


def test_auroc_all_tied_is_half():
    assert auroc([1.0, 1.0], [1.0, 1.0]) == pytest.approx(0.5)


def test_auroc_reversed_is_zero():
    assert auroc([0.0], [1.0, 2.0]) == pytest.approx(0.0)


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for trial in range(30):
        known = rng.choice([-2.0, -1.0, 0.0, 1.0, 2.0], size=rng.integers(1, 40))
        unknown = rng.choice([-2.0, -1.0, 0.0, 1.0, 2.0], size=rng.integers(1, 40))
        assert abs(auroc(known, unknown) - auroc_pairwise_oracle(known, unknown)) <= 1e-12


def test_auroc_empty_side_rejected():
    with pytest.raises(ContractError):
        auroc([], [1.0])


@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=20),
    st.lists(st.floats(-10, 10), min_size=1, max_size=20),
)
@settings(max_examples=60, deadline=None)
def test_auroc_antisymmetry(known, unknown):
    a = auroc(known, unknown)
    b = auroc(unknown, known)
    assert a + b == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=15),
       st.lists(st.floats(-5, 5), min_size=1, max_size=15))
@settings(max_examples=60, deadline=None)
def test_auroc_invariant_under_monotone_transform(known, unknown):
    f = lambda xs: [3.0 * x + np.tanh(x) for x in xs]  # strictly increasing
    assert auroc(f(known), f(unknown)) == pytest.approx(auroc(known, unknown), abs=1e-9)


# -- AUPR --------------------------------------------------------------------

def test_aupr_perfect_ranking():
    assert aupr([3.0, 2.0, 1.0], [True, True, False]) == pytest.approx(1.0)


def test_aupr_single_positive_ranked_last():
    assert aupr([3.0, 2.0, 1.0], [False, False, True]) == pytest.approx(1.0 / 3.0)


def test_aupr_matches_sweep_oracle():
    rng = np.random.default_rng(1)
    for trial in range(40):
        n = int(rng.integers(3, 60))
        scores = rng.choice(np.linspace(-1, 1, 9), size=n)
        positives = rng.random(n) < 0.4
        if positives.all() or not positives.any():
            continue
        assert abs(aupr(scores, positives) - aupr_sweep_oracle(scores, positives)) <= 1e-12


def test_aupr_degenerate_rejected():
    with pytest.raises(ContractError):
        aupr([1.0, 2.0], [True, True])


def table(known_scores, unknown_scores, preds=None, trues=None, posterior=None):
    n_k, n_u = len(known_scores), len(unknown_scores)
    return ScoreTable(
        is_known=np.array([True] * n_k + [False] * n_u),
        score=np.array(list(known_scores) + list(unknown_scores), dtype=np.float64),
        pred=np.array(preds if preds is not None else [0] * (n_k + n_u)),
        true_label=np.array(trues if trues is not None else [0] * n_k + [-1] * n_u),
        posterior=posterior,
    )


def test_aupr_known_and_unknown_are_complementary_views():
    t = table([3.0, 2.0], [1.0, 0.0])
    assert aupr_known(t) == pytest.approx(1.0)
    assert aupr_unknown(t) == pytest.approx(1.0)


# -- closed accuracy / openness ---------------------------------------------

def test_closed_accuracy_hand():
    t = table([1.0, 1.0, 1.0, 1.0], [], preds=[0, 1, 2, 2], trues=[0, 1, 0, 2])
    assert closed_accuracy(t) == pytest.approx(0.75)


def test_closed_accuracy_rejects_unknown_rows():
    with pytest.raises(ContractError):
        closed_accuracy(table([1.0], [0.0]))


def test_openness_reference_values():
    assert openness(15, 30) == pytest.approx(1.0 - np.sqrt(30.0 / 45.0))
    assert openness(15, 100) == pytest.approx(1.0 - np.sqrt(30.0 / 115.0))
    assert openness(5, 5) == pytest.approx(0.0)


def test_openness_monotone_in_test_classes():
    vals = [openness(6, t) for t in range(6, 30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_openness_invalid_args():
    with pytest.raises(ContractError):
        openness(10, 5)


# -- macro F1 ----------------------------------------------------------------

def macro_f1_oracle(pred, true, classes):
    f1s = []
    for c in classes:
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        f1s.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    return sum(f1s) / len(f1s)


def test_f1_all_correct_confident():
    post = np.array([[0.9, 0.1], [0.1, 0.9]])
    t = table([1.0, 1.0], [], preds=[0, 1], trues=[0, 1], posterior=post)
    assert f1_at_threshold(t, 0.5) == pytest.approx(2.0 / 3.0)  # unknown class F1=0


def test_f1_threshold_rejects_low_confidence():
    post = np.array([[0.9, 0.1], [0.55, 0.45], [0.52, 0.48]])
    t = table([1.0, 1.0], [1.0], preds=[0, 0, 0], trues=[0, 0, -1], posterior=post)
    # threshold 0.6: rows 2,3 rejected -> pred = [0, -1, -1]
    expected = macro_f1_oracle([0, -1, -1], [0, 0, -1], [0, 1, -1])
    assert f1_at_threshold(t, 0.6) == pytest.approx(expected)


def test_f1_matches_oracle_on_random_tables():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, c = int(rng.integers(5, 40)), int(rng.integers(2, 5))
        logits = rng.standard_normal((n, c))
        post = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        trues = rng.integers(-1, c, size=n)
        t = ScoreTable(
            is_known=trues != -1,
            score=post.max(axis=1),
            pred=post.argmax(axis=1),
            true_label=trues,
            posterior=post,
        )
        thr = float(rng.uniform(0.1, 0.9))
        pred = [int(p.argmax()) if p.max() >= thr else -1 for p in post]
        expected = macro_f1_oracle(pred, trues.tolist(), list(range(c)) + [-1])
        assert f1_at_threshold(t, thr) == pytest.approx(expected, abs=1e-12)


def test_f1_requires_normalized_posterior():
    post = np.array([[0.9, 0.3]])
    t = table([1.0], [], preds=[0], trues=[0], posterior=post)
    with pytest.raises(ContractError):
        f1_at_threshold(t, 0.1)


def test_f1_requires_posterior_columns():
    with pytest.raises(ContractError):
        f1_at_threshold(table([1.0], []), 0.1)


# -- ScoreTable invariants ---------------------------------------------------

def test_score_table_rejects_nan_scores():
    with pytest.raises(ContractError):
        ScoreTable(
            is_known=np.array([True]),
            score=np.array([np.nan]),
            pred=np.array([0]),
            true_label=np.array([0]),
        )


def test_score_table_rejects_inconsistent_flags():
    with pytest.raises(ContractError):
        ScoreTable(
            is_known=np.array([True]),
            score=np.array([1.0]),
            pred=np.array([0]),
            true_label=np.array([-1]),
        )


# -- histogram / purity ------------------------------------------------------

def test_histogram_conserves_counts_and_covers_range():
    rng = np.random.default_rng(3)
    scores = rng.standard_normal(500)
    rows = histogram_rows(scores, bins=16)
    assert sum(n for _, _, n in rows) == 500
    assert rows[0][0] == pytest.approx(scores.min())
    assert rows[-1][1] == pytest.approx(scores.max())


def test_histogram_csv_round_trip(tmp_path):
    path = tmp_path / "hist.csv"
    scores = np.array([0.0, 0.5, 1.0, 1.0])
    write_histogram_csv(path, scores, bins=4)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["bin_lo", "bin_hi", "count"]
    assert sum(int(r[2]) for r in rows[1:]) == 4


def test_metric_functions_are_pure():
    known = np.array([1.0, 2.0, 3.0])
    unknown = np.array([0.0, 0.5])
    kc, uc = known.copy(), unknown.copy()
    auroc(known, unknown)
    aupr(np.concatenate([known, unknown]), np.array([1, 1, 1, 0, 0], dtype=bool))
    assert np.array_equal(known, kc) and np.array_equal(unknown, uc)
