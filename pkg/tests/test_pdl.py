"""Tests for the pattern-level decoupling model."""

import numpy as np
import pytest

from src.autodiff.gradcheck import check_gradients
from src.autodiff.ops import matmul, reshape
from src.autodiff.optim import optimizer_step
from src.autodiff.tensor import Tape, Tensor
from src.labels.vocabulary import Predicate, PredicateVocabulary
from src.model.pdl import (
    ADVERSARIES,
    PDLConfig,
    PDLModel,
    adversarial_loss,
    mutual_calibrate,
    pattern_loss,
    predict,
)


def _make_vocab(n_a: int = 3, n_s: int = 2) -> PredicateVocabulary:
    predicates = [Predicate(f"a{a}_s{s}", a, s) for a in range(n_a) for s in range(n_s)]
    predicates.append(Predicate(f"a{n_a}", n_a, None))
    return PredicateVocabulary(
        predicates,
        [f"a{a}" for a in range(n_a + 1)],
        [f"s{s}" for s in range(n_s)],
    )


def _make_model(d=5, h=4, seed=0, **cfg) -> PDLModel:
    return PDLModel.build(_make_vocab(), PDLConfig(**cfg), feature_dim=d, hidden_dim=h, seed=seed)


def _weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
    n = w.size
    return reshape(matmul(reshape(t, (1, n)), Tensor(w.reshape(n, 1))), ())


def _loss_value(model, x, targets, cfg) -> float:
    out = model.forward(x)
    return adversarial_loss(model, out.f_a, out.f_s, targets.raw_a, targets.raw_s, cfg).item()


def test_config_validation():
    assert PDLConfig().validate() == []
    errors = PDLConfig(grl_lambda=-1.0, eta=1.5, mc_steps=-1, pattern_weight=-0.5).validate()
    assert len(errors) == 4


def test_zero_model_gives_half():
    model = _make_model()
    model.params.fill_(0.0)
    out = model.forward(np.random.default_rng(0).normal(size=(3, 5)))
    assert np.all(out.p_a.values == 0.5)
    assert np.all(out.p_s.values == 0.5)


def test_forward_shapes():
    vocab = PredicateVocabulary(
        [Predicate(f"a{a}_s{s}", a, s) for a in range(8) for s in range(6)],
        [f"a{a}" for a in range(8)],
        [f"s{s}" for s in range(6)],
    )
    model = PDLModel.build(vocab, feature_dim=64, hidden_dim=64)
    out = model.forward(np.zeros((4, 64)))
    assert out.p_a.shape == (4, 8)
    assert out.p_s.shape == (4, 6)
    assert out.f_a.shape == (4, 64)


def test_forward_rejects_wrong_feature_dim():
    with pytest.raises(ValueError, match="expected features"):
        _make_model(d=5).forward(np.zeros((2, 6)))


def test_pattern_scores_gradcheck():
    rng = np.random.default_rng(1)
    model = _make_model()
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, model.vocab.n_a))
    inputs = [model.params[n] for n in model.params.names(["D_a", "A"])]
    result = check_gradients(lambda: _weighted_sum(model.forward(x).p_a, w), inputs)
    assert result.passed


def test_predicate_probabilities_gradcheck_through_calibration():
    rng = np.random.default_rng(2)
    model = _make_model(eta=0.3, mc_steps=2)
    x = rng.normal(size=(2, 5))
    w = rng.normal(size=(2, model.vocab.n_p))
    inputs = [model.params[n] for n in model.params.names(["D_s", "S"])]
    result = check_gradients(lambda: _weighted_sum(model.predicate_probabilities(x), w), inputs)
    assert result.passed


def test_adversarial_loss_zero_when_distributions_match():
    model = _make_model()
    model.params.fill_(0.0)
    x = np.random.default_rng(3).normal(size=(4, 5))
    model.params.zero_grad()
    with Tape() as tape:
        out = model.forward(x)
        loss = adversarial_loss(model, out.f_a, out.f_s, out.raw_a, out.raw_s, model.cfg)
        tape.backward(loss)
    assert abs(loss.item()) < 1e-12
    for _, t in model.params:
        assert np.allclose(t.grad, 0.0, atol=1e-12)


def test_zero_lambda_leaves_decouplers_untouched():
    model = _make_model(grl_lambda=0.0)
    x = np.random.default_rng(4).normal(size=(4, 5))
    model.params.zero_grad()
    with Tape() as tape:
        out = model.forward(x)
        tape.backward(adversarial_loss(model, out.f_a, out.f_s, out.raw_a, out.raw_s, model.cfg))
    for name in model.params.names(["D_a", "D_s"]):
        assert np.all(model.params[name].grad == 0.0)
    assert any(np.any(model.params[n].grad != 0.0) for n in model.params.names(list(ADVERSARIES)))


def test_adversarial_loss_needs_adversaries():
    model = _make_model(adversarial=False)
    out = model.forward(np.zeros((1, 5)))
    with pytest.raises(ValueError, match="adversary"):
        adversarial_loss(model, out.f_a, out.f_s, out.raw_a, out.raw_s, model.cfg)


@pytest.mark.parametrize("seed", range(5))
def test_two_player_directions(seed):
    cfg = PDLConfig(grl_lambda=1.0)
    model = PDLModel.build(_make_vocab(), cfg, feature_dim=6, hidden_dim=8, seed=seed)
    x = np.random.default_rng(100 + seed).normal(size=(10, 6))
    targets = model.forward(x)
    before = _loss_value(model, x, targets, cfg)

    model.params.zero_grad()
    with Tape() as tape:
        out = model.forward(x)
        tape.backward(adversarial_loss(model, out.f_a, out.f_s, targets.raw_a, targets.raw_s, cfg))
    state = model.params.state()

    optimizer_step(model.params, 1e-3, "sgd", groups=ADVERSARIES)
    assert _loss_value(model, x, targets, cfg) <= before

    model.params.load_state(state)
    optimizer_step(model.params, 1e-3, "sgd", groups=["D_a", "D_s"])
    assert _loss_value(model, x, targets, cfg) >= before


def test_calibration_no_steps_or_eta_one_is_identity():
    vocab = _make_vocab()
    rng = np.random.default_rng(5)
    p_a, p_s = Tensor(rng.random((2, vocab.n_a))), Tensor(rng.random((2, vocab.n_s)))
    for cfg in (PDLConfig(mc_steps=0, eta=0.3), PDLConfig(mc_steps=3, eta=1.0)):
        out_a, out_s = mutual_calibrate(p_a, p_s, vocab, cfg)
        assert np.array_equal(out_a.values, p_a.values)
        assert np.array_equal(out_s.values, p_s.values)


def test_calibration_fixed_point_for_single_pattern_vocab():
    vocab = PredicateVocabulary(
        [Predicate("a", 0, None), Predicate("b", 1, None), Predicate("c", None, 0)], ["a", "b"], ["c"]
    )
    p_a, p_s = Tensor([[0.2, 0.7]]), Tensor([[0.4]])
    out_a, out_s = mutual_calibrate(p_a, p_s, vocab, PDLConfig(eta=0.0, mc_steps=2))
    assert np.allclose(out_a.values, p_a.values, atol=1e-15)
    assert np.allclose(out_s.values, p_s.values, atol=1e-15)


def test_calibration_stays_within_input_range():
    vocab = _make_vocab()
    rng = np.random.default_rng(6)
    for _ in range(20):
        p_a, p_s = rng.random((1, vocab.n_a)), rng.random((1, vocab.n_s))
        lo, hi = min(p_a.min(), p_s.min()), max(p_a.max(), p_s.max())
        out_a, out_s = mutual_calibrate(p_a, p_s, vocab, PDLConfig(eta=0.4, mc_steps=3))
        for out in (out_a.values, out_s.values):
            assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_predict_zero_model_is_half():
    model = _make_model()
    model.params.fill_(0.0)
    p = predict(model, np.ones((3, 5)))
    assert p.shape == (3, model.vocab.n_p)
    assert np.allclose(p, 0.5, atol=1e-15)


def test_predict_refuses_active_tape():
    model = _make_model()
    with Tape():
        with pytest.raises(RuntimeError, match="tape"):
            model.predict(np.zeros((1, 5)))


def test_adversaries_do_not_change_inference():
    x = np.random.default_rng(7).normal(size=(6, 5))
    with_adversaries = _make_model(seed=3, adversarial=True)
    without = _make_model(seed=3, adversarial=False)
    assert with_adversaries.has_adversaries and not without.has_adversaries
    assert np.array_equal(with_adversaries.predict(x), without.predict(x))


def test_pattern_loss_at_half_probabilities():
    model = _make_model()
    model.params.fill_(0.0)
    out = model.forward(np.zeros((2, 5)))
    q = np.zeros((2, model.vocab.n_p))
    q[0, 0] = q[1, -1] = 1.0
    assert pattern_loss(model, out, q).item() == pytest.approx(2.0 * np.log(2.0), abs=1e-12)


def test_pattern_loss_trains_heads_not_adversaries():
    model = _make_model(seed=2)
    x = np.random.default_rng(2).normal(size=(4, 5))
    q = np.zeros((4, model.vocab.n_p))
    q[np.arange(4), [0, 3, 5, 6]] = 1.0
    with Tape() as tape:
        tape.backward(pattern_loss(model, model.forward(x), q))
    for group in ("D_a", "D_s", "A", "S"):
        assert any(np.any(model.params[n].grad != 0.0) for n in model.params.names([group]))
    assert all(np.all(model.params[n].grad == 0.0) for n in model.params.names(list(ADVERSARIES)))


def test_predicates_from_matches_full_forward():
    model = _make_model(seed=4)
    x = np.random.default_rng(4).normal(size=(3, 5))
    assert np.array_equal(model.predicates_from(model.forward(x)).values, model.predict(x))
