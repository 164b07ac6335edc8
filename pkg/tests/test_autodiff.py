import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from voltron.autodiff import (
    NonFiniteError,
    ShapeError,
    Tensor,
    default_dtype,
    grad_check,
    no_grad,
    parameter,
)
from voltron.autodiff import functional as F


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, dtype=np.float64)


# -- matmul ------------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(F.matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_orthogonal_rows():
    out = F.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]]))
    np.testing.assert_array_equal(out.data, [[0.0]])


def test_matmul_grad_is_row_sums_of_b(rng):
    a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
    F.sum(F.matmul(a, b)).backward()
    expected = np.broadcast_to(b.data.sum(axis=1), (3, 4))
    np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
    assert grad_check(lambda: F.sum(F.matmul(a, b)), {"a": a, "b": b}, eps=1e-4, coords=None) < 1e-8


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# -- softmax -----------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0, 0.0], dtype=np.float64)).data, [1 / 3] * 3)


def test_softmax_saturates_without_overflow():
    out = F.softmax(Tensor([1000.0, 0.0], dtype=np.float64)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)


def test_softmax_jacobian(f64):
    x = leaf([0.2, -0.1, 0.3])
    w = np.array([0.7, -1.3, 2.0])
    assert grad_check(lambda: F.sum(F.softmax(x) * w), [x], eps=1e-6, coords=None) <= 1e-4


def test_softmax_mask_zeroes_disallowed_entries():
    out = F.softmax(Tensor([[1.0, 2.0, 3.0]], dtype=np.float64), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out.sum(), 1.0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    out = F.softmax(Tensor(x, dtype=np.float64), axis=-1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


# -- backward ----------------------------------------------------------------------

def test_sum_gives_ones():
    w = leaf(np.arange(6.0).reshape(2, 3))
    F.sum(w).backward()
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))


def test_quadratic_gives_w(rng):
    w = leaf(rng.standard_normal(5))
    (F.sum(w * w) * 0.5).backward()
    np.testing.assert_allclose(w.grad, w.data, rtol=1e-15)


def test_gradients_accumulate_across_shared_uses(rng):
    w = leaf(rng.standard_normal(4))
    F.sum(w + w + w).backward()
    np.testing.assert_array_equal(w.grad, np.full(4, 3.0))


def test_broadcast_gradient_is_reduced():
    x, b = leaf(np.ones((3, 2))), leaf(np.zeros(2))
    F.sum(x + b).backward()
    np.testing.assert_array_equal(b.grad, [3.0, 3.0])


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        leaf(np.ones(3)).backward()


def test_no_grad_builds_no_graph():
    w = leaf([1.0, 2.0])
    with no_grad():
        y = F.sum(w * w)
    assert not y.requires_grad


def test_non_finite_values_are_named():
    x = Tensor([-1.0], dtype=np.float64, requires_grad=True, name="weights")
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError, match="weights"):
        F.log(x)


# -- grad_check ----------------------------------------------------------------------

def test_grad_check_linear_is_exact():
    w = leaf(np.linspace(-1, 1, 7))
    assert grad_check(lambda: F.sum(w), [w], eps=1e-4, coords=None) < 1e-10


def test_grad_check_sin(rng):
    w = leaf(rng.uniform(-3, 3, 10))
    assert grad_check(lambda: F.sum(F.sin(w)), [w], eps=1e-5, coords=None) <= 1e-6


def test_small_gradients_need_a_larger_extrapolated_step(rng):
    # gradients near 3e-8 on a loss near 100: a 1e-5 step sits at the roundoff floor
    w = leaf(rng.uniform(-3, 3, 10))
    f = lambda: F.sum(F.sin(w)) * 3e-8 + 100.0
    assert grad_check(f, [w], eps=1e-5, coords=None) > 1e-2
    assert grad_check(f, [w], eps=1e-3, coords=None, richardson=True) < 1e-3


def test_richardson_cancels_truncation_error(rng):
    w = leaf(rng.uniform(-3, 3, 10))
    f = lambda: F.sum(F.sin(w * 20.0))
    assert grad_check(f, [w], eps=1e-3, coords=None) > 1e-5
    assert grad_check(f, [w], eps=1e-3, coords=None, richardson=True) < 1e-7


def test_grad_check_flags_wrong_backward():
    w = leaf([0.5, 1.5])
    out = grad_check(lambda: Tensor._from_op(w.data ** 2, (w,), lambda g: (g * 3.0,), "bad").sum(), [w],
                     coords=None)
    assert out > 0.1


def test_grad_check_encoder_mse_small_patches(rng):
    from voltron.config import ModelConfig
    from voltron.data import make_mask, normalize_targets, patchify
    from voltron.model import VoltronModel
    from voltron.verify import toy_vocab

    with default_dtype(np.float64):
        cfg = ModelConfig.for_variant("v-cond", d=16, depth=1, heads=2, p=4, height=8, width=8, max_len=6,
                                      d_lang=8, d_dec=8, depth_dec=1, heads_dec=2)
        model = VoltronModel(cfg, toy_vocab())
        frames = rng.random((2, 1, 8, 8, 3))
        masks = [make_mask(cfg.num_regions, 0.5, rng) for _ in range(2)]
        target = normalize_targets(patchify(frames[:, 0], 4))
        vis = np.stack([target[i, m.visible] for i, m in enumerate(masks)])

        def loss():
            h = model.encode(frames, masks).visual
            pred = F.matmul(h, Tensor(np.ones((16, 48)) * 0.1))
            return F.mse(pred, Tensor(vis))

        assert grad_check(loss, model.encoder.trainable(), coords=4) <= 1e-3


# -- other ops ----------------------------------------------------------------------

@pytest.mark.parametrize("op", [F.tanh, F.sigmoid, F.gelu, F.swish, F.exp])
def test_unary_gradients(op, rng):
    x = leaf(rng.uniform(-2, 2, 6))
    assert grad_check(lambda: F.sum(op(x) * np.arange(1.0, 7.0)), [x], eps=1e-6, coords=None) < 1e-6


def test_reduction_and_shape_op_gradients(rng):
    x = leaf(rng.standard_normal((2, 3, 4)))
    w = rng.standard_normal((4, 3))

    def f():
        y = F.transpose(F.reshape(x, (2, 12)), (1, 0))
        y = F.reshape(y, (3, 4, 2))
        z = F.max(y, axis=2) + F.mean(F.swapaxes(x, 0, 2), axis=(1, 2))[:3, None]
        return F.sum(F.matmul(z.T, Tensor(w.T)))

    assert grad_check(f, [x], eps=1e-6, coords=None) < 1e-6


def test_gather_and_concat_gradients(rng):
    a, b = leaf(rng.standard_normal((2, 3))), leaf(rng.standard_normal((2, 2)))
    idx = np.array([[4, 0], [1, 1]])

    def f():
        cat = F.concat([a, b], axis=1)
        return F.sum(F.gather(cat, idx, axis=1) * np.array([1.0, -2.0]))

    assert grad_check(f, {"a": a, "b": b}, eps=1e-6, coords=None) < 1e-7


def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((3, 64)), dtype=np.float64)
    np.testing.assert_allclose(F.cross_entropy(logits, np.array([0, 5, 63])).item(), np.log(64), rtol=1e-12)
    assert round(float(np.log(64)), 4) == 4.1589


def test_huber_matches_closed_form():
    pred, target = Tensor([0.5, 3.0], dtype=np.float64), Tensor([0.0, 0.0], dtype=np.float64)
    # 0.5 * 0.25 inside the quadratic zone, 3 - 0.5 outside
    np.testing.assert_allclose(F.huber(pred, target, 1.0).item(), (0.125 + 2.5) / 2)


def test_parameter_uses_default_dtype():
    assert parameter(np.ones(2)).dtype == np.float32
    with default_dtype(np.float64):
        assert parameter(np.ones(2)).dtype == np.float64
