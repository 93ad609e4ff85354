import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from checks import gradcheck
from distilqa.numerics import (
    Adam,
    Tensor,
    add,
    backward,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    kl_div,
    layer_norm,
    matmul,
    mul,
    neg,
    sgd_step,
    softmax_temp,
    tmean,
    transpose,
    tsum,
    zero_grad,
)

# High-precision reference values (50-digit arithmetic, rounded to double).
SOFTMAX_123_TAU2 = [0.18632372322584757702, 0.30719588571849839707,
                    0.5064803910556540259]
KL_HALF_VS_QUARTER = 0.14384103622589046372   # KL([.5,.5] || [.25,.75])
CE_123_TARGET2 = 0.40760596444438030448       # CE(logits [1,2,3], target 2)
LN2 = 0.69314718055994530942


def finite_floats(lo=-8.0, hi=8.0):
    return st.floats(min_value=lo, max_value=hi, allow_nan=False,
                     allow_infinity=False)


def logit_rows(max_rows=3, max_cols=5):
    return st.integers(1, max_rows).flatmap(
        lambda r: st.integers(2, max_cols).flatmap(
            lambda c: st.lists(
                st.lists(finite_floats(), min_size=c, max_size=c),
                min_size=r, max_size=r)))


# ---------------------------------------------------------------------------
# tensor basics


def test_tensor_grad_presence_tracks_requires_grad():
    t = Tensor([1.0, 2.0], requires_grad=True)
    assert t.grad is not None and t.grad.shape == (2,)
    u = Tensor([1.0, 2.0])
    assert u.grad is None and not u.requires_grad


def test_tensor_rejects_rank_4():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 2, 2, 2)))


def test_op_output_requires_grad_only_when_an_input_does():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([2.0])
    assert add(a, b).requires_grad
    assert not add(b, b).requires_grad
    assert add(b, b).grad is None


def test_backward_rejects_non_scalar():
    t = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(t)


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = tsum(mul(x, x))
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    assert np.allclose(x.grad, 2.0 * first)


def test_reused_tensor_gradients_add_within_one_graph():
    x = Tensor([3.0], requires_grad=True)
    z = add(mul(x, x), x)       # x^2 + x, dz/dx = 2x + 1
    tsum(z).backward()
    assert np.allclose(x.grad, [7.0])


def test_zero_grad_clears_buffers():
    x = Tensor([1.0], requires_grad=True)
    tsum(mul(x, x)).backward()
    zero_grad([x])
    assert np.allclose(x.grad, [0.0])


def test_detach_blocks_gradient_flow():
    x = Tensor([2.0], requires_grad=True)
    frozen = x.detach()
    assert not frozen.requires_grad
    assert np.array_equal(frozen.data, x.data)


# ---------------------------------------------------------------------------
# softmax


def test_softmax_temp_matches_high_precision_reference():
    p = softmax_temp(Tensor([1.0, 2.0, 3.0]), tau=2.0)
    assert np.allclose(p.data, SOFTMAX_123_TAU2, rtol=1e-13, atol=0)


def test_softmax_temp_rank2_applies_per_row():
    p = softmax_temp(Tensor([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]]), tau=2.0)
    assert np.allclose(p.data[0], SOFTMAX_123_TAU2, rtol=1e-13)
    assert np.allclose(p.data[1], SOFTMAX_123_TAU2[::-1], rtol=1e-13)


@given(logit_rows())
def test_softmax_rows_sum_to_one(rows):
    p = softmax_temp(Tensor(rows), tau=1.7)
    assert np.all(np.abs(p.data.sum(axis=-1) - 1.0) <= 1e-9)


@given(logit_rows(), finite_floats(-50.0, 50.0))
def test_softmax_shift_invariance(rows, shift):
    base = softmax_temp(Tensor(rows), tau=1.0)
    shifted = softmax_temp(Tensor(np.asarray(rows) + shift), tau=1.0)
    assert np.all(np.abs(base.data - shifted.data) <= 1e-12)


def test_softmax_large_logits_stay_finite():
    p = softmax_temp(Tensor([1000.0, 1000.5, 999.0]), tau=1.0)
    assert np.all(np.isfinite(p.data))
    assert abs(p.data.sum() - 1.0) <= 1e-9


@pytest.mark.parametrize("tau", [0.0, -1.0, math.nan, math.inf])
def test_softmax_rejects_bad_temperature(tau):
    with pytest.raises(ValueError):
        softmax_temp(Tensor([1.0, 2.0]), tau=tau)


def test_softmax_rejects_non_finite_logits():
    with pytest.raises(ValueError):
        softmax_temp(Tensor([1.0, math.nan]), tau=1.0)
    with pytest.raises(ValueError):
        softmax_temp(Tensor([1.0, math.inf]), tau=1.0)


def test_softmax_rejects_rank3():
    with pytest.raises(ValueError):
        softmax_temp(Tensor(np.zeros((2, 2, 2))), tau=1.0)


# ---------------------------------------------------------------------------
# KL divergence


def test_kl_matches_high_precision_reference():
    v = kl_div(Tensor([0.5, 0.5]), Tensor([0.25, 0.75]))
    assert np.isclose(v.item(), KL_HALF_VS_QUARTER, rtol=1e-13, atol=0)


def test_kl_zero_probability_contributes_nothing():
    v = kl_div(Tensor([0.0, 1.0]), Tensor([0.5, 0.5]))
    assert np.isclose(v.item(), LN2, rtol=1e-13, atol=0)


def test_kl_of_identical_rows_is_zero():
    p = softmax_temp(Tensor([[0.3, -1.2, 2.0], [0.0, 0.0, 0.0]]), tau=1.0)
    q = softmax_temp(Tensor([[0.3, -1.2, 2.0], [0.0, 0.0, 0.0]]), tau=1.0)
    assert kl_div(p, q).item() == 0.0


def test_kl_averages_over_rows():
    single = kl_div(Tensor([0.5, 0.5]), Tensor([0.25, 0.75])).item()
    double = kl_div(Tensor([[0.5, 0.5], [0.5, 0.5]]),
                    Tensor([[0.25, 0.75], [0.25, 0.75]])).item()
    assert np.isclose(single, double, rtol=1e-15)


@given(logit_rows(), logit_rows())
def test_kl_non_negative(rows_p, rows_q):
    if np.asarray(rows_p).shape != np.asarray(rows_q).shape:
        rows_q = rows_p
    p = softmax_temp(Tensor(rows_p), tau=1.0)
    q = softmax_temp(Tensor(rows_q), tau=1.0)
    assert kl_div(p, q).item() >= -1e-15


def test_kl_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        kl_div(Tensor([0.5, 0.5]), Tensor([0.2, 0.3, 0.5]))


def test_kl_rejects_unnormalized_rows():
    with pytest.raises(ValueError):
        kl_div(Tensor([0.6, 0.6]), Tensor([0.5, 0.5]))
    with pytest.raises(ValueError):
        kl_div(Tensor([0.5, 0.5]), Tensor([0.9, 0.2]))


def test_kl_accepts_rows_within_1e6_of_one():
    ok = Tensor([0.5 + 4e-7, 0.5])
    assert kl_div(ok, Tensor([0.5, 0.5])).item() == pytest.approx(0.0, abs=1e-6)


# ---------------------------------------------------------------------------
# cross entropy


def test_cross_entropy_matches_high_precision_reference():
    v = cross_entropy(Tensor([1.0, 2.0, 3.0]), 2)
    assert np.isclose(v.item(), CE_123_TARGET2, rtol=1e-13, atol=0)


def test_cross_entropy_uniform_logits_is_log_k():
    v = cross_entropy(Tensor([0.0, 0.0, 0.0, 0.0]), 1)
    assert np.isclose(v.item(), math.log(4.0), rtol=1e-13)


def test_cross_entropy_rank2_means_over_rows():
    a = cross_entropy(Tensor([1.0, 2.0, 3.0]), 2).item()
    b = cross_entropy(Tensor([3.0, 1.0, 0.0]), 0).item()
    both = cross_entropy(Tensor([[1.0, 2.0, 3.0], [3.0, 1.0, 0.0]]),
                         [2, 0]).item()
    assert np.isclose(both, 0.5 * (a + b), rtol=1e-13)


def test_cross_entropy_is_shift_invariant_and_stable():
    base = cross_entropy(Tensor([1.0, 2.0, 3.0]), 2).item()
    shifted = cross_entropy(Tensor([1001.0, 1002.0, 1003.0]), 2).item()
    assert np.isclose(base, shifted, rtol=0, atol=1e-9)


@pytest.mark.parametrize("target", [-1, 3])
def test_cross_entropy_rejects_out_of_range_target(target):
    with pytest.raises(ValueError):
        cross_entropy(Tensor([1.0, 2.0, 3.0]), target)


@given(st.lists(finite_floats(), min_size=2, max_size=6), st.data())
def test_cross_entropy_equals_kl_against_one_hot(logits, data):
    target = data.draw(st.integers(0, len(logits) - 1))
    ce = cross_entropy(Tensor(logits), target).item()
    onehot = np.zeros(len(logits))
    onehot[target] = 1.0
    kl = kl_div(Tensor(onehot), softmax_temp(Tensor(logits), tau=1.0)).item()
    assert abs(ce - kl) <= 1e-9


# ---------------------------------------------------------------------------
# gradients (op-level finite differences)

RNG = np.random.default_rng(20240817)


def test_grad_add_mul_neg_broadcast():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4,))
    gradcheck(lambda ts: tsum(mul(add(ts[0], ts[1]), neg(ts[0]))), [a, b])


def test_grad_matmul_all_rank_combinations():
    m = RNG.normal(size=(3, 4))
    n = RNG.normal(size=(4, 2))
    v = RNG.normal(size=(4,))
    u = RNG.normal(size=(3,))
    gradcheck(lambda ts: tsum(matmul(ts[0], ts[1])), [m, n])
    gradcheck(lambda ts: tsum(matmul(ts[0], ts[1])), [u, m])
    gradcheck(lambda ts: tsum(matmul(ts[0], ts[1])), [m, v])
    gradcheck(lambda ts: matmul(ts[0], ts[1]), [v, v.copy() + 0.5])


def test_grad_transpose_sum_mean_gelu():
    m = RNG.normal(size=(3, 4))
    gradcheck(lambda ts: tsum(gelu(transpose(ts[0]))), [m])
    gradcheck(lambda ts: tmean(gelu(ts[0])), [m])


def test_grad_softmax_through_projection():
    x = RNG.normal(size=(2, 5))
    c = Tensor(RNG.normal(size=(2, 5)))
    for tau in (0.7, 1.0, 4.0):
        gradcheck(lambda ts: tsum(mul(softmax_temp(ts[0], tau), c)), [x])


def test_grad_kl_through_softmax_both_arguments():
    a = RNG.normal(size=(2, 4))
    b = RNG.normal(size=(2, 4))
    gradcheck(lambda ts: kl_div(softmax_temp(ts[0], 1.3),
                                softmax_temp(ts[1], 0.8)), [a, b])


def test_grad_cross_entropy():
    x = RNG.normal(size=(3, 5))
    gradcheck(lambda ts: cross_entropy(ts[0], [1, 4, 0]), [x])
    v = RNG.normal(size=(6,))
    gradcheck(lambda ts: cross_entropy(ts[0], 3), [v])


def test_grad_layer_norm():
    x = RNG.normal(size=(3, 6))
    g = RNG.normal(size=(6,)) + 1.0
    b = RNG.normal(size=(6,))
    gradcheck(lambda ts: tsum(layer_norm(ts[0], ts[1], ts[2])), [x, g, b])


def test_grad_embedding_scatter():
    table = RNG.normal(size=(7, 3))
    ids = [1, 4, 4, 0, 6]   # repeated row: gradients must add
    c = Tensor(RNG.normal(size=(5, 3)))
    gradcheck(lambda ts: tsum(mul(embedding(ts[0], ids), c)), [table])


def test_grad_dropout_with_fixed_mask():
    x = RNG.normal(size=(4, 4))

    def build(ts):
        rng = np.random.default_rng(99)
        return tsum(dropout(ts[0], 0.4, rng))

    gradcheck(build, [x])


def test_dropout_zero_rate_is_identity():
    x = Tensor(RNG.normal(size=(3, 3)), requires_grad=True)
    assert dropout(x, 0.0, np.random.default_rng(0)) is x


def test_dropout_scales_kept_entries():
    rng = np.random.default_rng(5)
    x = Tensor(np.ones((200, 200)))
    y = dropout(x, 0.25, rng)
    kept = y.data[y.data != 0.0]
    assert np.allclose(kept, 1.0 / 0.75)
    assert abs((y.data == 0).mean() - 0.25) < 0.02


def test_embedding_rejects_out_of_range_ids():
    table = Tensor(np.zeros((4, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        embedding(table, [0, 4])
    with pytest.raises(ValueError):
        embedding(table, [-1])


# ---------------------------------------------------------------------------
# optimizers


def test_sgd_step_moves_against_gradient():
    p = Tensor([1.0, 2.0], requires_grad=True)
    tsum(mul(p, p)).backward()          # grad = 2p
    sgd_step([p], lr=0.1)
    assert np.allclose(p.data, [1.0 - 0.2, 2.0 - 0.4])


def test_sgd_step_requires_gradient_buffer():
    with pytest.raises(RuntimeError):
        sgd_step([Tensor([1.0])], lr=0.1)


def test_adam_first_step_is_signed_lr():
    p = Tensor([1.0, -3.0], requires_grad=True)
    tsum(mul(p, p)).backward()
    opt = Adam([p], lr=0.01)
    opt.step()
    # After bias correction the first update is lr * g/(|g| + eps').
    assert np.allclose(p.data, [1.0 - 0.01, -3.0 + 0.01], atol=1e-6)


def test_adam_state_is_per_parameter():
    p = Tensor([1.0], requires_grad=True)
    q = Tensor([1.0], requires_grad=True)
    opt = Adam([p, q], lr=0.1)
    p.grad[...] = 1.0
    q.grad[...] = -1.0
    opt.step()
    assert p.data[0] < 1.0 < q.data[0]


def test_adam_requires_gradient_buffer():
    opt = Adam([Tensor([1.0])], lr=0.1)
    with pytest.raises(RuntimeError):
        opt.step()


def test_adam_converges_on_quadratic():
    p = Tensor([5.0], requires_grad=True)
    opt = Adam([p], lr=0.2)
    for _ in range(200):
        zero_grad([p])
        loss = tsum(mul(p, p))
        loss.backward()
        opt.step()
    assert abs(p.data[0]) < 1e-2
