import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tanmt.corpus import ParallelPair, TokenSeq
from tanmt.errors import ConfigError
from tanmt.ibm1 import TTable, corpus_log_likelihood, model1_score, train_ibm1


def pair(src, tgt):
    return ParallelPair(TokenSeq(tuple(src), "X"), TokenSeq(tuple(tgt), "Z"))


def cipher_corpus(seed, n=100, v=20, one_token=False):
    rng = np.random.default_rng(seed)
    key = rng.permutation(v)
    out = []
    for i in range(n):
        s = [i % v] if one_token else rng.integers(0, v, size=int(rng.integers(3, 8)))
        out.append(pair([int(t) for t in s], [int(key[t]) for t in s]))
    return out, key


def test_single_pair_fixed_point():
    t = train_ibm1([pair([0], [1])], 10, n_src=1, n_tgt=2)
    a, null = t.prob(1, 0), t.prob(1, None)
    assert a >= 0.5
    # alignment posteriors for the lone target token split over {a, null}
    assert a / (a + null) + null / (a + null) == pytest.approx(1.0)
    assert t.prob(0, 0) == 0.0


def test_uniform_start():
    t = TTable.uniform(4, 5)
    np.testing.assert_allclose(t.t, 0.2)
    pairs, _ = cipher_corpus(0, 10)
    t1 = train_ibm1(pairs, 1, 20, 20)
    assert t1.history[0] == pytest.approx(corpus_log_likelihood(TTable.uniform(20, 20), pairs))


@pytest.mark.parametrize("one_token", [True, False])
def test_cipher_key_recovery(one_token):
    pairs, key = cipher_corpus(1, one_token=one_token)
    t = train_ibm1(pairs, 20, 20, 20)
    assert np.mean(t.t[:, :20].argmax(axis=0) == key) >= 0.9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_likelihood_monotone_and_columns_normalized(seed):
    rng = np.random.default_rng(seed)
    pairs = [pair(rng.integers(0, 6, int(rng.integers(1, 5))), rng.integers(0, 7, int(rng.integers(1, 5))))
             for _ in range(15)]
    t = train_ibm1(pairs, 20, 6, 7)
    assert np.diff(t.history).min() >= -1e-9
    np.testing.assert_allclose(t.column_sums(), 1.0, atol=1e-9)
    assert t.t.min() >= 0.0


def test_empty_corpus_and_bad_iterations():
    with pytest.raises(ConfigError):
        train_ibm1([], 5)
    with pytest.raises(ConfigError):
        train_ibm1([pair([0], [0])], 0)


def test_uniform_table_scores_one_over_v():
    t = TTable.uniform(10, 8)
    for src, tgt in [((1,), (2,)), ((1, 2, 3), (4, 5)), ((9,) * 6, (0,))]:
        assert model1_score(t, src, tgt) == pytest.approx(1 / 8, abs=1e-12)


def test_single_token_direct_formula():
    t = TTable(np.zeros((3, 3)))
    t.t[1, 0] = 1.0
    assert model1_score(t, (0,), (1,)) == pytest.approx(0.5, abs=1e-8)
    # a token never seen in training falls back to the floor
    assert 0 < model1_score(t, (0,), (2,)) < 1e-8


def test_score_bounds_and_order_invariance():
    pairs, _ = cipher_corpus(2)
    t = train_ibm1(pairs, 5, 20, 20)
    rng = np.random.default_rng(0)
    for _ in range(30):
        src = tuple(int(x) for x in rng.integers(0, 20, 5))
        tgt = tuple(int(x) for x in rng.integers(0, 20, 4))
        s = model1_score(t, src, tgt)
        assert 0 < s <= 1
        assert model1_score(t, tuple(rng.permutation(src)), tgt) == pytest.approx(s, rel=1e-12)
    with pytest.raises(ValueError):
        model1_score(t, (1,), ())


def test_save_load_round_trip(tmp_path):
    pairs, _ = cipher_corpus(3, 30)
    t = train_ibm1(pairs, 3, 20, 20, "X", "Z")
    t.save(tmp_path / "t.tsv")
    back = TTable.load(tmp_path / "t.tsv")
    np.testing.assert_array_equal(back.t, t.t)
    assert (back.src_name, back.tgt_name) == ("X", "Z")
    assert math.isclose(model1_score(back, (1, 2), (3,)), model1_score(t, (1, 2), (3,)))
