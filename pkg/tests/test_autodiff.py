import math

import numpy as np
import pytest

from catnet import autodiff as ad
from conftest import central_difference, max_relative_error


def test_softmax_uniform_on_equal_logits():
    out = ad.stable_softmax(ad.tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=0)


def test_softmax_overflow_safe():
    out = ad.stable_softmax(ad.tensor([1000.0, 1000.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=0)


def test_softmax_exp_ratio():
    out = ad.stable_softmax(ad.tensor([math.log(1.0), math.log(3.0)]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-15)


def test_softmax_masked_entries_exact_zero_and_sum_one():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = rng.integers(2, 12)
        offset = rng.choice([-1e3, 0.0, 1e3])
        logits = offset + rng.uniform(-50, 50, n)
        mask = rng.random(n) < 0.6
        if not mask.any():
            mask[rng.integers(0, n)] = True
        out = ad.stable_softmax(ad.tensor(logits), mask).data
        assert np.all(out[~mask] == 0.0)
        assert np.all(out[mask] > 0.0)
        assert abs(out.sum() - 1.0) <= 1e-12


def test_softmax_sum_survives_extreme_spread():
    out = ad.stable_softmax(ad.tensor([-1e3, 0.0, 1e3, 999.5])).data
    assert abs(out.sum() - 1.0) <= 1e-12


def test_softmax_empty_mask_rejected():
    with pytest.raises(ValueError, match="empty attention support"):
        ad.stable_softmax(ad.tensor([1.0, 2.0]), np.array([False, False]))


def test_backward_sum_gives_ones():
    x = ad.parameter(np.arange(6.0).reshape(2, 3))
    with ad.Tape():
        loss = ad.sum_over(x)
        ad.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sigmoid_at_zero_is_quarter_times_coefficient():
    w = ad.parameter(np.array(0.0))
    with ad.Tape():
        loss = ad.sigmoid(ad.scale(w, 3.0))
        ad.backward(loss)
    np.testing.assert_allclose(w.grad, 0.25 * 3.0, rtol=1e-15)


def test_backward_rejects_non_scalar():
    x = ad.parameter([1.0, 2.0])
    with ad.Tape():
        y = ad.tanh(x)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(y)


def test_backward_rejects_untaped_loss():
    x = ad.parameter([1.0])
    y = ad.sum_over(x)  # no tape active
    with pytest.raises(ValueError, match="tape"):
        ad.backward(y)


def test_elementwise_trivia():
    assert ad.tanh(ad.tensor(0.0)).item() == 0.0
    assert ad.sigmoid(ad.tensor(0.0)).item() == 0.5
    x = np.array([1.5, -2.0, 0.25])
    out = ad.matmul(ad.tensor(np.eye(3)), ad.tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ad.add(ad.tensor([1.0, 2.0]), ad.tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError, match=r"\(2, 2\).*\(3,\)"):
        ad.matmul(ad.tensor(np.eye(2)), ad.tensor([1.0, 2.0, 3.0]))


def test_non_finite_result_rejected():
    big = ad.tensor(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        ad.scale(big, 1e10)


def test_determinism_bitwise():
    def run():
        x = ad.parameter(np.linspace(-1, 1, 8))
        w = ad.parameter(np.linspace(0.3, 0.9, 8))
        with ad.Tape():
            y = ad.sum_over(ad.mul(ad.tanh(x), ad.sigmoid(w)))
            ad.backward(y)
        return y.item(), x.grad.copy(), w.grad.copy()

    a = run()
    b = run()
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2], b[2])


def _random_graph_loss(params):
    """Deterministic composite graph touching every op family."""
    w1, w2, b1, emb, q = params
    h = ad.tanh(ad.add(ad.matmul(w1, ad.tensor([0.7, -0.3, 0.4])), b1))
    g = ad.sigmoid(ad.matmul(w2, h))
    row = ad.take_row(emb, 1)
    att = ad.stable_softmax(ad.scale(ad.matmul(emb, q), 1.0 / math.sqrt(3.0)),
                            np.array([True, True, False, True]))
    ctx = ad.matmul(att, emb)
    v = ad.concat([g, ctx, ad.mul(row, row)])
    m = ad.stack([v, ad.affine(v, -1.0, 0.5)])
    pooled = ad.sum_over(m, axis=0)
    pred = ad.sigmoid(pooled)
    target = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0][: pred.data.size])
    return ad.binary_cross_entropy(pred, target)


def test_random_graph_matches_finite_differences():
    rng = np.random.default_rng(123)
    params = [
        ad.parameter(rng.uniform(-0.5, 0.5, (2, 3))),
        ad.parameter(rng.uniform(-0.5, 0.5, (2, 2))),
        ad.parameter(rng.uniform(-0.5, 0.5, 2)),
        ad.parameter(rng.uniform(-0.5, 0.5, (4, 3))),
        ad.parameter(rng.uniform(-0.5, 0.5, 3)),
    ]
    assert sum(p.size for p in params) >= 20

    with ad.Tape():
        loss = _random_graph_loss(params)
        ad.backward(loss)
    analytic = [p.grad.copy() for p in params]

    numeric = central_difference(lambda: _random_graph_loss(params).item(),
                                 [p.data for p in params])
    assert max_relative_error(analytic, numeric) <= 1e-4


@pytest.mark.parametrize("seed", range(4))
def test_each_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.uniform(-0.5, 0.5, (3, 4)))
    b = ad.parameter(rng.uniform(-0.5, 0.5, (3, 4)))
    m = ad.parameter(rng.uniform(-0.5, 0.5, (4, 3)))
    v = ad.parameter(rng.uniform(-0.5, 0.5, 4))
    coeff = rng.uniform(-1, 1, (3, 4))
    cv = rng.uniform(-1, 1, 3)

    cases = {
        "add": lambda: ad.sum_over(ad.mul(ad.add(a, b), ad.tensor(coeff))),
        "sub": lambda: ad.sum_over(ad.mul(ad.sub(a, b), ad.tensor(coeff))),
        "mul": lambda: ad.sum_over(ad.mul(ad.mul(a, b), ad.tensor(coeff))),
        "tanh": lambda: ad.sum_over(ad.mul(ad.tanh(a), ad.tensor(coeff))),
        "sigmoid": lambda: ad.sum_over(ad.mul(ad.sigmoid(a), ad.tensor(coeff))),
        "matmul": lambda: ad.sum_over(ad.mul(ad.matmul(a, m), ad.tensor(np.ones((3, 3))))),
        "matvec": lambda: ad.sum_over(ad.mul(ad.matmul(a, v), ad.tensor(cv))),
        "concat": lambda: ad.sum_over(ad.mul(ad.concat([v, v]), ad.tensor(np.ones(8)))),
        "softmax": lambda: ad.sum_over(ad.mul(ad.stable_softmax(v),
                                              ad.tensor([0.3, -0.2, 0.9, 0.1]))),
        "take_row": lambda: ad.sum_over(ad.mul(ad.take_row(m, 2), ad.tensor(cv))),
        "sum_axis": lambda: ad.sum_over(ad.mul(ad.sum_over(a, axis=1), ad.tensor(cv))),
    }
    for name, f in cases.items():
        for p in (a, b, m, v):
            p.zero_grad()
        with ad.Tape():
            ad.backward(f())
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                    for p in (a, b, m, v)]
        numeric = central_difference(lambda: f().item(), [p.data for p in (a, b, m, v)])
        err = max_relative_error(analytic, numeric)
        assert err <= 1e-4, f"{name}: rel err {err}"


def test_bce_closed_forms():
    half = ad.tensor([0.5, 0.5, 0.5])
    y = np.array([1.0, 0.0, 1.0])
    assert abs(ad.binary_cross_entropy(half, y).item() - math.log(2)) < 1e-12

    pred = ad.tensor([0.9, 0.1])
    loss = ad.binary_cross_entropy(pred, np.array([1.0, 0.0]))
    np.testing.assert_allclose(loss.item(), -math.log(0.9), rtol=1e-12)

    exact = ad.binary_cross_entropy(ad.tensor([1.0, 0.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(exact.item(), -math.log(1.0 - 1e-7), rtol=1e-6)


def test_bce_rejects_non_binary_targets():
    with pytest.raises(ValueError, match="0 or 1"):
        ad.binary_cross_entropy(ad.tensor([0.5]), np.array([0.3]))


def test_grad_accumulates_once_per_use():
    x = ad.parameter(np.array([2.0]))
    with ad.Tape():
        y = ad.sum_over(ad.mul(x, x))  # x used twice -> d/dx = 2x
        ad.backward(y)
    np.testing.assert_allclose(x.grad, [4.0], rtol=1e-15)
