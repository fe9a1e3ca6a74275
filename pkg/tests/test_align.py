from __future__ import annotations

import math

import numpy as np
import pytest

from fusionrec.align import (
    COLLABORATIVE,
    SEMANTIC,
    AlignmentBatch,
    AlignmentExample,
    AlignmentNetwork,
    alignment_loss,
    build_alignment_dataset,
    decode,
    encode,
    gradient_check,
    init_alignment,
    reconstruction_loss,
    recommendation_loss,
    total_loss,
    total_loss_and_gradients,
    train_alignment,
    unified_item_embedding,
)
from fusionrec.cf import CfConfig, item_embedding, train_cf
from fusionrec.data import TrainingInstance
from fusionrec.errors import DataError, TrainingError
from fusionrec.gradcheck import max_relative_gradient_error
from fusionrec.semantic import fallback_embed


def _net_from_matrices(alpha=0.5, beta=0.2, dim=3, decoder_scale=1.0):
    eye = np.eye(dim)
    params = {
        "enc_c.w": eye.copy(), "enc_c.b": np.zeros(dim),
        "enc_s.w": eye.copy(), "enc_s.b": np.zeros(dim),
        "dec_c.w": decoder_scale * eye, "dec_c.b": np.zeros(dim),
        "dec_s.w": decoder_scale * eye, "dec_s.b": np.zeros(dim),
    }
    return AlignmentNetwork(dim, dim, dim, alpha, beta, params)


def _random_batch(net, rng, n_groups=2, triples=2):
    groups = []
    for g in range(n_groups):
        size = g + 1
        groups.append(
            [
                (rng.normal(scale=0.5, size=net.collab_dim), rng.normal(scale=0.5, size=net.sem_dim))
                for _ in range(size)
            ]
        )
    trip = [
        (
            rng.normal(scale=0.5, size=net.collab_dim),
            rng.normal(scale=0.5, size=net.collab_dim),
            rng.normal(scale=0.5, size=net.collab_dim),
        )
        for _ in range(triples)
    ]
    return AlignmentBatch(groups=groups, triples=trip)


def test_alignment_loss_uses_nested_means():
    net = _net_from_matrices()
    zeros = np.zeros(3)
    groups = [
        [(np.array([1.0, 0.0, 0.0]), zeros), (np.array([1.0, 1.0, 1.0]), zeros)],
        [(np.array([2.0, 1.0, 0.0]), zeros)],
    ]
    # inner means (1+3)/2 and 5, averaged across the two sequences
    assert alignment_loss(net, groups) == 3.5
    # a flat mean over the three pairs would give 3.0 instead
    assert alignment_loss(net, [[pair for group in groups for pair in group]]) == 3.0
    assert alignment_loss(net, []) == 0.0


def test_reconstruction_loss_weights_the_two_autoencoders():
    net = _net_from_matrices(alpha=0.5, beta=0.2, decoder_scale=0.0)
    groups = [[(np.array([1.0, 1.0, 0.0]), np.array([2.0, 1.0, 0.0]))]]
    # zero decoders reproduce nothing, so the residuals are the inputs
    assert reconstruction_loss(net, groups) == 2.0
    net.beta = 0.0  # silence the semantic term to see the item term alone
    assert reconstruction_loss(net, groups) == 1.0
    net.alpha, net.beta = 1.0, 1.0
    assert reconstruction_loss(net, groups) == 7.0
    assert reconstruction_loss(net, []) == 0.0


def test_alpha_beta_must_be_positive():
    with pytest.raises(ValueError, match="alpha and beta"):
        _net_from_matrices(alpha=0.0)
    with pytest.raises(ValueError, match="alpha and beta"):
        _net_from_matrices(beta=0.0)
    with pytest.raises(ValueError, match="alpha and beta"):
        _net_from_matrices(alpha=1.2)


def test_recommendation_loss_matches_closed_form():
    net = _net_from_matrices()
    x = np.array([math.log(9.0), 0.0, 0.0])
    triples = [(x, np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))]
    # sigmoid(ln 9) = 0.9 on the positive and 0.9 again on the flipped negative
    assert recommendation_loss(net, triples) == pytest.approx(-2.0 * math.log(0.9), rel=1e-12)
    assert recommendation_loss(net, []) == 0.0


def test_recommendation_loss_is_clamped_at_saturation():
    net = _net_from_matrices()
    x = np.array([100.0, 0.0, 0.0])
    e = np.array([1.0, 0.0, 0.0])
    loss = recommendation_loss(net, [(x, e, e)])
    assert math.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-7) - math.log(1.0 - 1e-7), rel=1e-9)


def test_total_loss_is_the_unweighted_sum():
    net = init_alignment(5, 7, 4, 0.5, 0.2, rng=np.random.default_rng(1))
    batch = _random_batch(net, np.random.default_rng(2))
    expected = (
        alignment_loss(net, batch.groups)
        + reconstruction_loss(net, batch.groups)
        + recommendation_loss(net, batch.triples)
    )
    assert total_loss(net, batch) == expected
    loss, _ = total_loss_and_gradients(net, batch)
    assert loss == pytest.approx(expected, rel=1e-12)
    zero_net = _net_from_matrices(decoder_scale=0.0)
    zero_net.params["enc_c.w"][...] = 0.0
    trip = [(np.ones(3), np.ones(3), np.ones(3))] * 3
    assert total_loss(zero_net, AlignmentBatch([], trip)) == pytest.approx(
        6.0 * math.log(2.0), rel=1e-15
    )
    assert total_loss(net, AlignmentBatch([], [])) == 0.0


def test_gradients_match_finite_differences():
    net = init_alignment(5, 7, 4, 0.5, 0.2, rng=np.random.default_rng(1))
    batch = _random_batch(net, np.random.default_rng(2))
    assert gradient_check(net, batch) <= 1e-4
    assert gradient_check(net, AlignmentBatch([], [])) == 0.0


def test_gradient_check_catches_a_corrupted_gradient():
    net = init_alignment(5, 7, 4, 0.5, 0.2, rng=np.random.default_rng(1))
    batch = _random_batch(net, np.random.default_rng(2))
    _, grads = total_loss_and_gradients(net, batch)
    flat = grads["enc_c.w"].reshape(-1)
    flat[np.argmax(np.abs(flat))] *= 1.5
    worst = max_relative_gradient_error(lambda: total_loss(net, batch), net.params, grads)
    assert worst > 1e-2


def test_training_reduces_the_objective():
    rng = np.random.default_rng(5)
    net = init_alignment(6, 9, 4, 0.5, 0.2, rng=rng)
    dataset = [
        AlignmentExample(
            user=f"u{i}",
            pairs=[(rng.normal(size=6), rng.normal(size=9)) for _ in range(3)],
            triples=[(rng.normal(size=6), rng.normal(size=6), rng.normal(size=6))],
        )
        for i in range(8)
    ]
    out = train_alignment(net, dataset, epochs=30, batch_size=4, learning_rate=1e-3,
                          rng=np.random.default_rng(0))
    assert out is net
    assert len(net.training_log) == 30
    assert net.training_log[-1] < net.training_log[0]


def test_training_is_deterministic_and_zero_rate_is_a_noop():
    rng = np.random.default_rng(5)
    dataset = [
        AlignmentExample(
            user=f"u{i}",
            pairs=[(rng.normal(size=4), rng.normal(size=6))],
            triples=[(rng.normal(size=4), rng.normal(size=4), rng.normal(size=4))],
        )
        for i in range(5)
    ]
    nets = [
        train_alignment(
            init_alignment(4, 6, 3, 0.5, 0.2, rng=np.random.default_rng(1)),
            dataset, epochs=4, batch_size=2, learning_rate=1e-3,
            rng=np.random.default_rng(2),
        )
        for _ in range(2)
    ]
    for name in nets[0].params:
        assert np.array_equal(nets[0].params[name], nets[1].params[name])
    assert nets[0].training_log == nets[1].training_log

    frozen = init_alignment(4, 6, 3, 0.5, 0.2, rng=np.random.default_rng(1))
    before = {name: arr.copy() for name, arr in frozen.params.items()}
    train_alignment(frozen, dataset, epochs=2, batch_size=2, learning_rate=0.0,
                    rng=np.random.default_rng(2))
    for name in before:
        assert np.array_equal(frozen.params[name], before[name])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_training_raises():
    rng = np.random.default_rng(5)
    dataset = [
        AlignmentExample(
            user=f"u{i}",
            pairs=[(rng.normal(size=4), rng.normal(size=6))],
            triples=[],
        )
        for i in range(6)
    ]
    net = init_alignment(4, 6, 3, 0.5, 0.2, rng=np.random.default_rng(1))
    with pytest.raises(TrainingError, match="non-finite alignment loss"):
        train_alignment(net, dataset, epochs=4, batch_size=2, learning_rate=1e18,
                        rng=np.random.default_rng(2))


def test_encode_decode_contracts():
    net = _net_from_matrices()
    vec = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(encode(net, COLLABORATIVE, vec), vec)
    assert np.array_equal(decode(net, SEMANTIC, vec), vec)
    with pytest.raises(ValueError, match="unknown modality"):
        encode(net, "textual", vec)
    with pytest.raises(ValueError, match="unknown modality"):
        decode(net, "textual", vec)
    with pytest.raises(ValueError, match="does not match"):
        encode(net, COLLABORATIVE, np.ones(5))
    with pytest.raises(ValueError, match="empty group"):
        alignment_loss(net, [[]])


def test_build_alignment_dataset_pairs_and_triples(toy_world):
    model = toy_world["cf"]
    split = toy_world["split"]
    semantic = toy_world["semantic"]
    dataset = build_alignment_dataset(model, split, semantic, rng=np.random.default_rng(3),
                                      negatives_per_user=2)
    assert dataset
    users = {ex.user for ex in dataset}
    assert users <= set(split.users())
    rows = {q: model.params["item_emb"][idx] for q, idx in model.item_index.items()}
    for ex in dataset[:8]:
        in_vocab = [q for q in split.train[ex.user] if model.has_item(q)]
        assert len(ex.pairs) == len(in_vocab)
        for (e, q_vec), item in zip(ex.pairs, in_vocab):
            assert np.array_equal(e, rows[item])
            assert np.array_equal(q_vec, semantic[item])
        if model.has_item(split.validation[ex.user]) and in_vocab:
            assert len(ex.triples) == 2
            owned = set(split.full_sequence(ex.user))
            for x, pos, neg in ex.triples:
                assert np.array_equal(pos, rows[split.validation[ex.user]])
                negative_ids = [q for q, row in rows.items() if np.array_equal(row, neg)]
                assert negative_ids and all(q not in owned for q in negative_ids)

    bare = build_alignment_dataset(model, split, semantic, rng=np.random.default_rng(3),
                                   negatives_per_user=0)
    assert all(ex.triples == [] for ex in bare)


def test_build_alignment_dataset_requires_some_signal(toy_world):
    split = toy_world["split"]
    stranger = train_cf(
        [TrainingInstance("x", ("p1",), "p2", 1)],
        CfConfig(embed_dim=4, heads=1, epochs=0),
        np.random.default_rng(0),
    )
    with pytest.raises(DataError, match="no user contributed"):
        build_alignment_dataset(stranger, split, {}, rng=np.random.default_rng(0))


def test_unified_embedding_routes_by_vocabulary(toy_world, toy_alignment):
    model = toy_world["cf"]
    net = toy_alignment
    semantic = dict(toy_world["semantic"])
    semantic["novel"] = fallback_embed("entirely new thing")

    warm_item = model.items[0]
    warm = unified_item_embedding(net, warm_item, model, semantic)
    assert warm.source == "collaborative_path"
    assert np.allclose(warm.vector, encode(net, COLLABORATIVE, item_embedding(model, warm_item)))

    cold = unified_item_embedding(net, "novel", model, semantic)
    assert cold.source == "semantic_path"
    assert np.allclose(cold.vector, encode(net, SEMANTIC, semantic["novel"]))
    assert warm.vector.shape == cold.vector.shape == (net.latent_dim,)

    detached = unified_item_embedding(net, warm_item, None, semantic)
    assert detached.source == "semantic_path"

    with pytest.raises(DataError, match="neither"):
        unified_item_embedding(net, "missing", model, {})
