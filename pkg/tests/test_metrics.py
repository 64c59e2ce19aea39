import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pat.metrics import auc
from pat.tensor import ContractError


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_worked_example():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert pairwise_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_perfect_and_ties():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 0, 1]) == 0.5


def test_single_class():
    with pytest.raises(ContractError):
        auc([0.1, 0.2], [1, 1])


def test_length_mismatch():
    with pytest.raises(ContractError):
        auc([0.1, 0.2], [1])


def test_matches_oracle_on_many_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        # coarse grid forces plenty of ties
        scores = rng.integers(0, int(rng.integers(2, 20)), n) / 7.0
        assert auc(scores, labels) == pairwise_auc(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=60))
def test_properties(pairs):
    scores = np.array([p[0] for p in pairs], dtype=float)
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        return
    a = auc(scores, labels)
    assert a == pairwise_auc(scores, labels)
    assert auc(-scores, labels) == pytest.approx(1 - a)
    assert auc(scores, 1 - labels) == pytest.approx(1 - a)
    assert auc(np.exp(scores / 3), labels) == a
