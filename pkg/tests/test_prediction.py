import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbcin import numeric as nm
from kbcin.numeric import Tensor
from kbcin.prediction import (
    PairPrediction, bce_loss, f1_from_confusion, f1_metrics, init_predictor_params, macro_f1, predict_scores,
    round2,
)

# (neg F1, pos F1, macro F1) rows of the published comparison table
TABLE_ROWS = [
    ("KAG", 86.35, 58.18, 72.26),
    ("Adapted", 88.18, 64.53, 76.36),
    ("ECPE-2D", 94.96, 55.50, 75.23),
    ("RankCP", 97.30, 33.00, 65.15),
    ("RoBERTa-Base", 88.74, 64.28, 76.51),
    ("RoBERTa-Large", 87.89, 66.23, 77.06),
    ("KEC", 88.85, 66.55, 77.70),
    ("KBCIN", 89.65, 68.59, 79.12),
]


def zero_params(in_dim, hidden):
    p = init_predictor_params(in_dim, hidden, np.random.default_rng(0))
    return {k: nm.parameter(np.zeros_like(v.data)) for k, v in p.items()}


def test_zero_weights_give_half():
    out = predict_scores(Tensor(np.random.default_rng(1).standard_normal((4, 6))), zero_params(6, (5, 3)))
    assert out.data.tolist() == [0.5] * 4


def test_rows_scored_independently():
    p = init_predictor_params(6, (5,), np.random.default_rng(2))
    x = np.random.default_rng(3).standard_normal((4, 6))
    base = predict_scores(Tensor(x), p).data
    x[0] += 10.0
    moved = predict_scores(Tensor(x), p).data
    assert moved[0] != base[0]
    assert np.array_equal(moved[1:], base[1:])


def test_layer_by_layer_oracle():
    p = init_predictor_params(4, (3, 3), np.random.default_rng(4))
    for k in p:
        if k.endswith(".b"):
            p[k].data[:] = 0.1
    x = np.random.default_rng(5).standard_normal((2, 4))
    out = predict_scores(Tensor(x), p).data
    for r in range(2):
        h = list(x[r])
        for layer in range(3):
            W, b = p[f"mlp.{layer}.W"].data, p[f"mlp.{layer}.b"].data
            h = [math.fsum(h[a] * W[a, j] for a in range(len(h))) + b[j] for j in range(W.shape[1])]
            if layer < 2:
                h = [v if v > 0 else 0.01 * v for v in h]
        assert abs(out[r] - 1 / (1 + math.exp(-h[0]))) < 1e-14


def test_width_mismatch():
    with pytest.raises(nm.DimensionError):
        predict_scores(Tensor(np.ones((2, 5))), init_predictor_params(4, (3,), np.random.default_rng(0)))


def test_bce_closed_form():
    assert abs(bce_loss(Tensor([0.5]), [1]).item() - math.log(2)) < 1e-15


def test_bce_perfect_scores():
    assert bce_loss(Tensor([1.0, 0.0, 1.0]), [1, 0, 1]).item() < 1e-6


def test_bce_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    z = nm.parameter(rng.standard_normal(7))
    labels = rng.integers(0, 2, size=7)
    for w in (1.0, 2.5):
        assert nm.grad_check(lambda: bce_loss(nm.sigmoid(z), labels, w), [z], eps=1e-6) < 1e-6


def test_bce_segments_average_per_sample():
    s = Tensor([0.2, 0.7, 0.9, 0.4, 0.6])
    y = [0, 1, 1, 0, 0]
    joint = bce_loss(s, y, segments=[(0, 2), (2, 5)]).item()
    a = bce_loss(Tensor([0.2, 0.7]), y[:2]).item()
    b = bce_loss(Tensor([0.9, 0.4, 0.6]), y[2:]).item()
    assert joint == pytest.approx((a + b) / 2, rel=1e-14)


@pytest.mark.parametrize("name, neg, pos, macro", TABLE_ROWS)
def test_macro_from_published_rows(name, neg, pos, macro):
    assert macro_f1(neg, pos) == macro


def test_macro_of_mll_row_is_its_exact_mean():
    # published as 71.59; the mean of 94.68 and 48.48 is exactly 71.58
    assert macro_f1(94.68, 48.48) == 71.58


def test_hand_confusion():
    m = f1_from_confusion({"tp": 2, "fp": 1, "fn": 1, "tn": 6})
    assert m["pos_f1"] == 66.67
    # mirrored: tp=6, fp=1, fn=1
    assert m["neg_f1"] == round2(100 * 12 / 14) == 85.71
    assert m["macro_f1"] == 76.19


def test_f1_metrics_thresholding():
    preds = [PairPrediction("d", 3, i, s, y) for i, (s, y) in
             enumerate([(0.9, 1), (0.5, 1), (0.7, 0), (0.2, 1), (0.1, 0), (0.49, 0)])]
    m = f1_metrics(preds)
    assert m["counts"] == {"tp": 2, "fp": 1, "fn": 1, "tn": 2}


def test_zero_division_gives_zero():
    preds = [PairPrediction("d", 0, 0, 0.1, 0)]
    m = f1_metrics(preds)
    assert m["pos_f1"] == 0.0 and m["neg_f1"] == 100.0


def test_empty_predictions_rejected():
    with pytest.raises(ValueError):
        f1_metrics([])


def test_all_positive_bound_on_published_test_counts():
    pos, neg = 1767, 5330
    preds = [PairPrediction("d", 0, 0, 0.9, 1)] * pos + [PairPrediction("d", 0, 0, 0.9, 0)] * neg
    m = f1_metrics(preds)
    precision = pos / (pos + neg)
    assert precision == 1767 / 7097
    assert m["pos_f1"] == round2(100 * 2 * precision / (precision + 1))
    assert m["neg_f1"] == 0.0


def test_round2_ties_to_even():
    assert round2(0.125) == 0.12
    assert round2(0.375) == 0.38
    # exact means 72.265 and 76.355 on the decimal values
    assert macro_f1(86.35, 58.18) == 72.26
    assert macro_f1(88.18, 64.53) == 76.36


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.randoms())
def test_metrics_invariants(pairs, rnd):
    preds = [PairPrediction("d", 0, i, s, y) for i, (s, y) in enumerate(pairs)]
    m = f1_metrics(preds)
    shuffled = preds[:]
    rnd.shuffle(shuffled)
    assert f1_metrics(shuffled) == m
    assert m["macro_f1"] == macro_f1(m["neg_f1"], m["pos_f1"])
    assert abs(m["macro_f1"] - (m["neg_f1"] + m["pos_f1"]) / 2) <= 0.005 + 1e-12
