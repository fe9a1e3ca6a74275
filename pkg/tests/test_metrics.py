from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionrec.metrics import bleu, hit_rate_at_k, ndcg_at_k, rouge, tokenize
from oracles import oracle_bleu, oracle_hit_rate, oracle_ndcg, oracle_rouge1, oracle_rouge_l


def _single(ranking, target):
    return {"u": ranking}, {"u": target}


def test_hit_rate_basics():
    rankings, targets = _single(["a", "b", "c", "d"], "c")
    assert hit_rate_at_k(rankings, targets, 3) == 1.0
    assert hit_rate_at_k(rankings, targets, 2) == 0.0
    assert hit_rate_at_k(rankings, targets, 4) == 1.0


def test_hit_rate_averages_over_users():
    rankings = {"u1": ["a", "b"], "u2": ["b", "a"], "u3": ["c", "a"]}
    targets = {"u1": "a", "u2": "a", "u3": "a"}
    assert hit_rate_at_k(rankings, targets, 1) == pytest.approx(1 / 3)
    assert hit_rate_at_k(rankings, targets, 2) == 1.0


def test_ndcg_discount_at_rank_two():
    rankings, targets = _single(["a", "b", "c"], "b")
    value = ndcg_at_k(rankings, targets, 3)
    assert value == pytest.approx(1.0 / math.log2(3.0), abs=1e-12)
    assert round(value, 5) == 0.63093


def test_ndcg_top_hit_is_one_and_miss_is_zero():
    rankings, targets = _single(["a", "b", "c"], "a")
    assert ndcg_at_k(rankings, targets, 3) == 1.0
    rankings, targets = _single(["a", "b", "c"], "z")
    assert ndcg_at_k(rankings, targets, 3) == 0.0


def test_ranking_metric_argument_errors():
    rankings, targets = _single(["a", "b"], "a")
    with pytest.raises(ValueError):
        hit_rate_at_k(rankings, targets, 0)
    with pytest.raises(ValueError):
        hit_rate_at_k(rankings, {}, 1)
    with pytest.raises(ValueError):
        hit_rate_at_k(rankings, {"other": "a"}, 1)
    with pytest.raises(ValueError):
        ndcg_at_k(rankings, targets, 3)  # ranking shorter than k


def test_bleu_worked_example():
    value = bleu("the cat".split(), "the cat sat".split(), max_n=2)
    assert value == pytest.approx(math.exp(1.0 - 3.0 / 2.0), abs=1e-12)
    assert round(value, 5) == 0.60653


def test_bleu_identical_and_disjoint():
    tokens = "a b c d".split()
    assert bleu(tokens, tokens) == pytest.approx(1.0, abs=1e-12)
    assert bleu("x y".split(), "a b".split()) == 0.0
    assert bleu([], "a".split()) == 0.0


def test_bleu_brevity_penalty_is_one_for_long_candidates():
    candidate = "a b c a b c a".split()
    reference = "a b c".split()
    assert bleu(candidate, reference, max_n=1) == pytest.approx(3.0 / 7.0, abs=1e-12)


def test_bleu_clips_candidate_side_counts():
    # "the" appears twice in the candidate, once in the reference: clipped to 1.
    value = bleu("the the".split(), "the cat sat".split(), max_n=1)
    assert value == pytest.approx(math.exp(1.0 - 3.0 / 2.0) * (1.0 / 2.0), abs=1e-12)


def test_bleu_empty_reference_rejected():
    with pytest.raises(ValueError):
        bleu("a".split(), [])


def test_rouge_worked_example():
    candidate = "a b c".split()
    reference = "a x c".split()
    assert rouge(candidate, reference, "rouge1") == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert rouge(candidate, reference, "rougeL") == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_rouge_edge_cases():
    tokens = "a b c".split()
    assert rouge(tokens, tokens, "rouge1") == 1.0
    assert rouge(tokens, tokens, "rougeL") == 1.0
    assert rouge([], tokens, "rouge1") == 0.0
    assert rouge("x".split(), tokens, "rougeL") == 0.0
    with pytest.raises(ValueError):
        rouge(tokens, [], "rouge1")
    with pytest.raises(ValueError):
        rouge(tokens, tokens, "rouge2")


def test_rouge1_uses_reference_denominator():
    # overlap 1, reference length 4
    assert rouge("a".split(), "a b c d".split(), "rouge1") == 0.25


def test_tokenize_lowercases_and_splits():
    assert tokenize("The  Cat\nsat") == ["the", "cat", "sat"]


def _random_ranking_case(rng):
    n_items = int(rng.integers(2, 12))
    items = [f"i{j}" for j in range(n_items)]
    ranking = [items[j] for j in rng.permutation(n_items)]
    target = items[int(rng.integers(n_items))] if rng.random() < 0.8 else "absent"
    return ranking, target


def test_ranking_metrics_match_bruteforce_on_random_cases():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n_users = int(rng.integers(1, 6))
        rankings, targets = {}, {}
        min_len = None
        for u in range(n_users):
            ranking, target = _random_ranking_case(rng)
            rankings[f"u{u}"] = ranking
            targets[f"u{u}"] = target
            min_len = len(ranking) if min_len is None else min(min_len, len(ranking))
        k = int(rng.integers(1, min_len + 1))
        assert hit_rate_at_k(rankings, targets, k) == pytest.approx(
            oracle_hit_rate(rankings, targets, k), abs=1e-12
        )
        assert ndcg_at_k(rankings, targets, k) == pytest.approx(
            oracle_ndcg(rankings, targets, k), abs=1e-12
        )


def test_text_metrics_match_bruteforce_on_random_cases():
    rng = np.random.default_rng(43)
    alphabet = ["a", "b", "c", "d"]
    for _ in range(200):
        candidate = [alphabet[int(rng.integers(4))] for _ in range(int(rng.integers(0, 9)))]
        reference = [alphabet[int(rng.integers(4))] for _ in range(int(rng.integers(1, 9)))]
        max_n = int(rng.integers(1, 5))
        assert bleu(candidate, reference, max_n) == pytest.approx(
            oracle_bleu(candidate, reference, max_n), abs=1e-9
        )
        assert rouge(candidate, reference, "rouge1") == pytest.approx(
            oracle_rouge1(candidate, reference), abs=1e-12
        )
        assert rouge(candidate, reference, "rougeL") == pytest.approx(
            oracle_rouge_l(candidate, reference), abs=1e-12
        )


@st.composite
def _ranked_users(draw):
    n_items = draw(st.integers(min_value=3, max_value=10))
    items = [f"i{j}" for j in range(n_items)]
    n_users = draw(st.integers(min_value=1, max_value=4))
    rankings, targets = {}, {}
    for u in range(n_users):
        rankings[f"u{u}"] = draw(st.permutations(items))
        targets[f"u{u}"] = draw(st.sampled_from(items + ["absent"]))
    return rankings, targets, n_items


@given(_ranked_users())
@settings(max_examples=60, deadline=None)
def test_hit_rate_and_ndcg_are_nondecreasing_in_k(case):
    rankings, targets, n_items = case
    hr_prev, ndcg_prev = 0.0, 0.0
    for k in range(1, n_items + 1):
        hr = hit_rate_at_k(rankings, targets, k)
        nd = ndcg_at_k(rankings, targets, k)
        assert hr >= hr_prev
        assert nd >= ndcg_prev
        assert nd <= hr + 1e-12
        hr_prev, ndcg_prev = hr, nd


@given(
    st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
    st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
)
@settings(max_examples=80, deadline=None)
def test_text_metrics_stay_in_unit_interval(candidate, reference):
    assert 0.0 <= bleu(candidate, reference) <= 1.0
    assert 0.0 <= rouge(candidate, reference, "rouge1") <= 1.0
    assert 0.0 <= rouge(candidate, reference, "rougeL") <= 1.0
