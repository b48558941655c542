import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ambigen import metrics
from ambigen.errors import ConfigError, NotCalculableError

# 7-sample, 5-class worked example: probabilistic labels and predictions
LABELS = np.array([
    [0.00, 0.40, 0.00, 0.60, 0.00],
    [0.45, 0.00, 0.55, 0.00, 0.00],
    [0.00, 0.30, 0.00, 0.70, 0.00],
    [0.35, 0.00, 0.00, 0.65, 0.00],
    [0.00, 0.00, 0.50, 0.00, 0.50],
    [0.20, 0.00, 0.00, 0.80, 0.00],
    [0.00, 0.40, 0.00, 0.00, 0.60],
])
PREDICTIONS = np.array([
    [0.10, 0.45, 0.05, 0.25, 0.15],
    [0.40, 0.45, 0.10, 0.02, 0.03],
    [0.03, 0.60, 0.20, 0.10, 0.07],
    [0.45, 0.05, 0.10, 0.35, 0.05],
    [0.06, 0.07, 0.30, 0.20, 0.37],
    [0.30, 0.03, 0.02, 0.60, 0.05],
    [0.10, 0.35, 0.06, 0.04, 0.45],
])


def test_top_pair_on_worked_example_is_five_sevenths():
    assert abs(metrics.top_pair_accuracy(LABELS, PREDICTIONS) - 5.0 / 7.0) < 1e-12


def test_top_k_on_worked_example_matches_direct_table_walk():
    # independent walk of the table using the stated tie rules
    def argmax_low_tie(row):
        best = 0
        for i in range(1, len(row)):
            if row[i] > row[best]:
                best = i
        return best

    hard = np.array([argmax_low_tie(r) for r in LABELS])
    for k in (1, 2):
        expected = 0
        for r, label in zip(PREDICTIONS, hard):
            ranked = sorted(range(len(r)), key=lambda i: (-r[i], i))[:k]
            expected += label in ranked
        got = metrics.top_k_accuracy(PREDICTIONS, hard, k)
        assert abs(got - expected / 7.0) < 1e-12


def test_top_k_trivial_cases():
    pred = np.eye(4)
    labels = np.arange(4)
    assert metrics.top_k_accuracy(pred, labels, 1) == 1.0
    rng = np.random.default_rng(0)
    pred = rng.dirichlet(np.ones(4), size=20)
    labels = rng.integers(0, 4, size=20)
    assert metrics.top_k_accuracy(pred, labels, 4) == 1.0


def test_top_k_validates_inputs():
    with pytest.raises(ConfigError):
        metrics.top_k_accuracy(np.empty((0, 3)), np.empty(0, dtype=int), 1)
    with pytest.raises(ConfigError):
        metrics.top_k_accuracy(np.eye(3), np.arange(3), 0)


def test_top_pair_perfect_predictions():
    assert metrics.top_pair_accuracy(LABELS, LABELS) == 1.0


def test_top_pair_uniform_prediction_tie_rule():
    # uniform predictions always pick {0, 1} under the low-index tie rule
    uniform = np.full((7, 5), 0.2)
    expected = np.mean([metrics.label_top_pair(r) == (0, 1) for r in LABELS])
    assert abs(metrics.top_pair_accuracy(LABELS, uniform) - expected) < 1e-12


def test_top_pair_not_calculable_rows():
    with pytest.raises(NotCalculableError):
        metrics.label_top_pair(np.array([1.0, 0.0, 0.0]))
    with pytest.raises(NotCalculableError):
        metrics.label_top_pair(np.array([0.4, 0.3, 0.3]))
    with pytest.raises(NotCalculableError):
        metrics.top_pair_accuracy(np.array([[0.5, 0.25, 0.25]]),
                                  np.array([[0.6, 0.2, 0.2]]))


def test_mean_entropy_closed_forms():
    assert metrics.mean_entropy(np.eye(5)) == 0.0
    assert abs(metrics.mean_entropy(np.full((3, 10), 0.1)) - np.log(10)) < 1e-12


def test_mean_entropy_matches_high_precision_value():
    # sample-4 prediction row evaluated at 50-digit precision
    got = metrics.mean_entropy(PREDICTIONS[4:5])
    assert abs(got - 1.4059056105127282809) < 1e-12


def test_mean_entropy_empty():
    with pytest.raises(ConfigError):
        metrics.mean_entropy(np.empty((0, 3)))


# ---------------------------------------------------------------------------
# AUC-ROC
# ---------------------------------------------------------------------------

def brute_force_auc(pos, neg):
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def test_auc_trivial_cases():
    assert metrics.auc_roc([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert metrics.auc_roc([1.0, 2.0], [1.0, 2.0]) == 0.5


def test_auc_matches_pairwise_oracle_with_ties():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        n_pos = int(rng.integers(1, 30))
        n_neg = int(rng.integers(1, 30))
        # coarse integer grid forces plenty of ties
        pos = rng.integers(0, 6, size=n_pos).astype(float)
        neg = rng.integers(0, 6, size=n_neg).astype(float)
        assert abs(metrics.auc_roc(pos, neg) - brute_force_auc(pos, neg)) < 1e-12


def test_auc_complement_identity():
    rng = np.random.default_rng(5)
    pos = rng.normal(size=40)
    neg = rng.normal(size=25)
    assert metrics.auc_roc(pos, neg) + metrics.auc_roc(neg, pos) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=20),
       st.lists(st.integers(-5, 5), min_size=1, max_size=20))
def test_auc_invariant_under_monotone_transform(pos, neg):
    pos = np.array(pos, dtype=float)
    neg = np.array(neg, dtype=float)
    base = metrics.auc_roc(pos, neg)
    # strictly increasing transform applied jointly preserves ranks exactly
    assert metrics.auc_roc(3 * pos + 1, 3 * neg + 1) == base
    assert metrics.auc_roc(np.exp(pos / 5), np.exp(neg / 5)) == base


def test_auc_rejects_empty_or_nonfinite():
    with pytest.raises(ConfigError):
        metrics.auc_roc([], [1.0])
    with pytest.raises(ConfigError):
        metrics.auc_roc([np.nan], [1.0])


def test_top_pair_never_exceeds_top2():
    rng = np.random.default_rng(77)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        pairs = [sorted(rng.choice(6, size=2, replace=False)) for _ in range(n)]
        labels = np.zeros((n, 6))
        for i, (a, b) in enumerate(pairs):
            p = rng.uniform(0.3, 0.7)
            labels[i, a], labels[i, b] = p, 1 - p
        pred = rng.dirichlet(np.ones(6), size=n)
        hard = labels.argmax(axis=1)
        tp = metrics.top_pair_accuracy(labels, pred)
        t2 = metrics.top_k_accuracy(pred, hard, 2)
        assert tp <= t2 + 1e-12
