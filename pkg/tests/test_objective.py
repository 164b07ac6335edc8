import numpy as np
import pytest

from voltron.autodiff import Tensor, default_dtype, no_grad, parameter
from voltron.data import Corpus, build_epoch_index
from voltron.errors import ConfigError, ContractError
from voltron.fixtures import toy_raw
from voltron.model import VoltronModel
from voltron.objective import case_losses, compute_loss, make_batch, sample_gate, sample_gates
from voltron.optim import AdamW, clip_grad_norm, decays, global_norm, lr_schedule
from voltron.verify import toy_config


@pytest.fixture(scope="module")
def corpus():
    return Corpus.from_raw(toy_raw(), 8, vocab_size=64)


def batch_for(corpus, cfg, seed=0, n=6):
    index = build_epoch_index(corpus, 2, seed=seed, k=cfg.k)
    return make_batch(corpus, index.entries[:n], cfg, np.random.default_rng(seed))


# -- gates -----------------------------------------------------------------------------

def test_gates_degenerate_alpha():
    rng = np.random.default_rng(0)
    assert not sample_gates(0.0, rng, 1000).any()
    assert sample_gates(1.0, rng, 1000).all()
    assert sample_gate(1.0, rng) == 1


def test_gate_rate_at_half():
    rate = sample_gates(0.5, np.random.default_rng(0), 100_000).mean()
    assert 0.494 <= rate <= 0.506


def test_gates_consume_the_stream_identically():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    sample_gates(0.0, a, 10)
    sample_gates(0.9, b, 10)
    assert a.random() == b.random()


def test_bad_alpha():
    with pytest.raises(ConfigError):
        sample_gates(1.5, np.random.default_rng(0), 3)


# -- loss structure ----------------------------------------------------------------------

def test_all_zero_gates_have_no_generation_term(corpus):
    model = VoltronModel(toy_config("v-gen"), corpus.vocab)
    batch = batch_for(corpus, model.cfg)
    with no_grad():
        res = compute_loss(batch, model, np.zeros(len(batch)))
        mse, nll = case_losses(batch, model, generate=False)
    assert nll is None and np.isnan(res.nll) and res.gate_rate == 0.0
    np.testing.assert_allclose(res.loss.item(), float(mse.data.mean()), rtol=1e-6)


def test_mixed_gates_recombine_two_passes(corpus):
    with default_dtype(np.float64), no_grad():
        model = VoltronModel(toy_config("v-gen"), corpus.vocab)
        batch = batch_for(corpus, model.cfg)
        z = np.array([0, 1, 1, 0, 1, 0])
        res = compute_loss(batch, model, z)
        mse0, _ = case_losses(batch, model, generate=False)
        mse1, nll1 = case_losses(batch, model, generate=True)
    per = np.where(z == 1, mse1.data + nll1.data, mse0.data)
    np.testing.assert_allclose(res.per_example, per, rtol=1e-12)
    np.testing.assert_allclose(res.loss.item(), per.mean(), rtol=1e-12)


def test_nolang_equals_vcond_with_null_captions(corpus):
    nolang = VoltronModel(toy_config("nolang"), corpus.vocab)
    vcond = VoltronModel(toy_config("v-cond"), corpus.vocab)
    vcond.load_state_dict(nolang.state_dict())
    batch = batch_for(corpus, nolang.cfg)
    nulled = batch.subset(np.arange(len(batch)))
    nulled.token_ids, nulled.length_mask = vcond.null_batch(len(batch))
    with no_grad():
        a = compute_loss(batch, nolang, np.zeros(len(batch))).loss.data
        b = compute_loss(nulled, vcond, np.zeros(len(batch))).loss.data
    np.testing.assert_array_equal(a, b)


def test_generation_is_illegal_without_alpha(corpus):
    model = VoltronModel(toy_config("v-dual"), corpus.vocab)
    batch = batch_for(corpus, model.cfg, n=2)
    with pytest.raises(ContractError):
        compute_loss(batch, model, np.ones(2))
    with pytest.raises(ContractError):
        compute_loss(batch, model, np.zeros(3))


# -- optimiser -----------------------------------------------------------------------------

def test_zero_gradients_without_decay_change_nothing():
    w = parameter(np.array([[1.0, -2.0], [0.5, 3.0]]))
    w.zero_grad()
    before = w.data.copy()
    AdamW(weight_decay=0.0).step([("w", w)], lr=0.1)
    np.testing.assert_array_equal(w.data, before)


def test_single_adam_step():
    with default_dtype(np.float64):
        w = parameter(np.array([1.0]))
    w.grad = np.array([1.0])
    AdamW(0.9, 0.999, 1e-8, 0.0).step([("w", w)], lr=0.1)
    assert w.data[0] == pytest.approx(0.9, abs=1e-7)


def test_weight_decay_skips_vectors():
    assert decays("w", Tensor(np.ones((2, 2))))
    assert not decays("b", Tensor(np.ones(2)))


def test_frozen_table_survives_training_steps(corpus):
    model = VoltronModel(toy_config("v-cond"), corpus.vocab)
    table = model.encoder.lang_table.data.copy()
    opt = AdamW(weight_decay=0.05)
    for step in range(100):
        model.zero_grad()
        model.encoder.lang_table.grad = np.ones_like(table)
        for _, p in model.trainable():
            p.grad = np.full_like(p.data, 0.01)
        opt.step(model.named_parameters(), 1e-3)
    np.testing.assert_array_equal(model.encoder.lang_table.data, table)


def test_non_finite_gradient_is_rejected():
    w = parameter(np.ones(2))
    w.grad = np.array([np.nan, 0.0], dtype=np.float32)
    with pytest.raises(AssertionError, match="w"):
        AdamW().step([("w", w)], 0.1)


def test_lr_schedule_landmarks():
    assert lr_schedule(0, 10, 110, 1.0) == 0.0
    assert lr_schedule(10, 10, 110, 1.0) == 1.0
    assert lr_schedule(60, 10, 110, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert lr_schedule(110, 10, 110, 1.0) == 0.0


def test_clip_grad_norm():
    a, b = parameter(np.zeros(3)), parameter(np.zeros(4))
    a.grad, b.grad = np.full(3, 3.0, np.float32), np.full(4, 4.0, np.float32)
    raw = clip_grad_norm([("a", a), ("b", b)], 1.0)
    assert raw == pytest.approx(np.sqrt(27 + 64))
    assert global_norm([("a", a), ("b", b)]) == pytest.approx(1.0, rel=1e-6)
