"""Tests for the correlation matrix and the knowledge-level losses."""

import numpy as np
import pytest

from src.autodiff.ops import sigmoid
from src.autodiff.optim import optimizer_step
from src.autodiff.tensor import Tape, Tensor
from src.labels.vocabulary import Predicate, PredicateVocabulary
from src.model.kdl import (
    CorrelationMatrix,
    KDLConfig,
    alpha_at,
    correlation_update_loss,
    gamma,
    kdl_total,
    knowledge_transfer_loss,
    mask_and_normalize,
    target_loss,
)


def _make_vocab() -> PredicateVocabulary:
    return PredicateVocabulary(
        [
            Predicate("sit_above", 0, 0),
            Predicate("stand_above", 1, 0),
            Predicate("jump_above", 2, 0),
            Predicate("bite", 3, None),
        ],
        ["sit", "stand", "jump", "bite"],
        ["above"],
        [900, 50, 10, 40],
    )


def test_correlation_matrix_starts_at_identity():
    M = CorrelationMatrix(4)
    assert np.array_equal(M.values, np.eye(4))
    assert M.params.groups == ["M"]
    assert np.allclose(M.normalized().sum(axis=1), 1.0)


def test_correlation_matrix_rejects_empty():
    with pytest.raises(ValueError):
        CorrelationMatrix(0)


def test_mask_and_normalize_example():
    out = mask_and_normalize(np.array([0.0, np.log(2.0), 0.0]), 0).values
    assert out[0] == 0.0
    assert out[1] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert out[2] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_mask_and_normalize_properties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(scale=5.0, size=6)
        k = int(rng.integers(6))
        out = mask_and_normalize(v, k).values
        assert out[k] == 0.0
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(out >= 0.0)


def test_mask_and_normalize_batch_and_range():
    out = mask_and_normalize(np.zeros((2, 3)), np.array([0, 2])).values
    assert np.allclose(out, [[0.0, 0.5, 0.5], [0.5, 0.5, 0.0]])
    with pytest.raises(IndexError):
        mask_and_normalize(np.zeros(3), 3)


def test_target_loss_rejects_sample_without_labels():
    with pytest.raises(ValueError, match="no positive label"):
        target_loss(Tensor([[0.5, 0.5], [0.5, 0.5]]), np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_alpha_schedule():
    cfg = KDLConfig(alpha0=0.1, beta=1e-4, warmup_epochs=10)
    assert alpha_at(cfg, 5000, 3) == 0.1
    assert alpha_at(cfg, 5000, 10) == pytest.approx(0.6)


def test_gamma_decay():
    cfg = KDLConfig(gamma_base=0.99)
    assert gamma(0, cfg) == 1.0
    assert gamma(10, cfg) == pytest.approx(0.99 ** 10)
    with pytest.raises(ValueError):
        gamma(-1, cfg)


def test_config_validation():
    assert KDLConfig().validate() == []
    assert len(KDLConfig(alpha0=-1, beta=-1, warmup_epochs=-1, gamma_base=0.0).validate()) == 4


def test_transfer_zero_for_head_predicate():
    vocab = _make_vocab()
    M = CorrelationMatrix(vocab.n_p)
    p = np.array([0.9, 0.2, 0.3, 0.6])
    assert knowledge_transfer_loss(M, 0, p, vocab).item() == 0.0
    assert knowledge_transfer_loss(M, 3, p, vocab).item() == 0.0
    assert knowledge_transfer_loss(M, 2, p, vocab).item() > 0.0


def test_gradients_are_partitioned():
    vocab = _make_vocab()
    M = CorrelationMatrix(vocab.n_p)
    z = Tensor(np.random.default_rng(1).normal(size=(2, vocab.n_p)), requires_grad=True)
    q = np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0]])
    cfg = KDLConfig()

    with Tape() as tape:
        loss = kdl_total(M, sigmoid(z), q, vocab, cfg, iteration=0, epoch=0)
        tape.backward(loss.correlation)
    assert np.all(z.grad == 0.0)
    assert np.any(M.scores.grad != 0.0)

    M.params.zero_grad()
    with Tape() as tape:
        loss = kdl_total(M, sigmoid(z), q, vocab, cfg, iteration=0, epoch=0)
        tape.backward(loss.transfer)
    assert np.all(M.scores.grad == 0.0)
    assert np.any(z.grad != 0.0)
    assert loss.alpha == cfg.alpha0


def test_total_combines_terms():
    vocab = _make_vocab()
    M = CorrelationMatrix(vocab.n_p)
    p = Tensor(np.full((1, vocab.n_p), 0.4))
    q = np.array([[0.0, 0.0, 1.0, 0.0]])
    cfg = KDLConfig(alpha0=0.5, warmup_epochs=0, beta=0.25)
    loss = kdl_total(M, p, q, vocab, cfg, iteration=2, epoch=1)
    assert loss.alpha == pytest.approx(1.0)
    expected = loss.target.item() + loss.correlation.item() + loss.alpha * loss.transfer.item()
    assert loss.total.item() == pytest.approx(expected, abs=1e-12)


def test_correlation_loss_decreases_under_sgd():
    M = CorrelationMatrix(5)
    p = Tensor([0.9, 0.05, 0.6, 0.3, 0.1])
    losses = []
    for _ in range(100):
        M.params.zero_grad()
        with Tape() as tape:
            loss = correlation_update_loss(M, 0, p)
            tape.backward(loss)
        losses.append(loss.item())
        optimizer_step(M.params, 0.1, "sgd")
    assert losses[-1] < losses[0]
    # rows other than the ground-truth class are never touched
    assert np.array_equal(M.values[1:], np.eye(5)[1:])


def test_transfer_matches_hand_computed_kl_at_identity():
    vocab = _make_vocab()
    M = CorrelationMatrix(vocab.n_p)
    p = np.array([0.9, 0.2, 0.3, 0.6])
    # jump_above (2) is headed by sit_above (0); identity row 0 masked at 2
    e = np.e
    m_non = np.array([e, 1.0, 0.0, 1.0]) / (e + 2.0)
    z = np.log(p / (1.0 - p))
    w = np.exp(z) * np.array([1.0, 1.0, 0.0, 1.0])
    p_non = w / w.sum()
    keep = [0, 1, 3]
    expected = np.sum(p_non[keep] * np.log(p_non[keep] / m_non[keep]))
    assert knowledge_transfer_loss(M, 2, p, vocab).item() == pytest.approx(expected, abs=1e-12)


def test_correlation_loss_vanishes_when_row_matches_prediction():
    M = CorrelationMatrix(4)
    p = np.array([0.3, 0.8, 0.1, 0.45])
    M.scores.values[1] = np.log(p / (1.0 - p))
    with Tape() as tape:
        loss = correlation_update_loss(M, 1, Tensor(p))
        tape.backward(loss)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(M.scores.grad, 0.0, atol=1e-12)


def test_correlation_loss_gives_model_no_gradient():
    M = CorrelationMatrix(4)
    p = Tensor([0.3, 0.8, 0.1, 0.45], requires_grad=True)
    with Tape() as tape:
        loss = correlation_update_loss(M, 1, p)
        tape.backward(loss)
    assert loss.item() > 0.0
    assert np.all(p.grad == 0.0)
    assert np.any(M.scores.grad[1] != 0.0)


def test_single_predicate_vocabulary_has_no_knowledge_terms():
    vocab = PredicateVocabulary([Predicate("bite", 0, None)], ["bite"], [], [5])
    M = CorrelationMatrix(1)
    p = Tensor([[0.7], [0.4]])
    loss = kdl_total(M, p, np.ones((2, 1)), vocab, KDLConfig(), iteration=0, epoch=0)
    assert loss.correlation.item() == 0.0
    assert loss.transfer.item() == 0.0
    assert loss.total.item() == pytest.approx(loss.target.item(), abs=1e-12)
