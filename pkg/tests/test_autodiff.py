"""Forward values and gradients of the autodiff core.

Hand examples are checked exactly; every differentiable op is then run
through the central finite-difference oracle on a batch of random inputs.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from rtda import autodiff as ad
from rtda.autodiff import Tensor
from rtda.errors import ConfigError, DataError, ShapeError, UsageError


# ---------------------------------------------------------------------------
# forward examples


def test_affine_identity_weights():
    out = ad.affine(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_affine_zero_input_passes_bias():
    out = ad.affine(Tensor([[0.0, 0.0]]), Tensor([[5.0, -1.0], [2.0, 7.0]]), Tensor([3.0, 4.0]))
    assert np.array_equal(out.data, [[3.0, 4.0]])


def test_affine_hand_matmul():
    out = ad.affine(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([1.0, 1.0]))
    assert np.array_equal(out.data, [[8.0, 11.0]])


def test_affine_shape_error_names_axis():
    with pytest.raises(ShapeError, match="axis"):
        ad.affine(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        ad.affine(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(3)))


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 5, 5)))
    k = np.zeros((3, 3, 1, 1))
    for c in range(3):
        k[c, c, 0, 0] = 1.0
    out = ad.conv2d(x, Tensor(k))
    assert np.allclose(out.data, x.data, atol=1e-14)


def test_conv2d_zero_input():
    out = ad.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.ones((2, 1, 3, 3))))
    assert np.all(out.data == 0.0)


def test_conv2d_hand_sums():
    x = Tensor(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
    k = Tensor(np.ones((1, 1, 2, 2)))
    out = ad.conv2d(x, k)
    assert np.array_equal(out.data[0, 0], [[12.0, 16.0], [24.0, 28.0]])


def test_conv2d_bad_geometry():
    with pytest.raises(ConfigError):
        ad.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=2)
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))))


def test_relu_values():
    out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])
    pos = np.array([0.5, 1.0, 7.0])
    assert np.array_equal(ad.relu(Tensor(pos)).data, pos)


def test_relu_gradient():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    ad.tsum(ad.relu(x)).backward()
    assert np.array_equal(x.grad, [0.0, 1.0])


def test_avg_pool_constant():
    out = ad.avg_pool2d(Tensor(np.full((1, 2, 4, 4), 3.25)), 2)
    assert np.all(out.data == 3.25)
    assert out.shape == (1, 2, 2, 2)


def test_avg_pool_hand():
    out = ad.avg_pool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2)
    assert out.data[0, 0, 0, 0] == 2.5


def test_avg_pool_window_one_identity():
    x = np.random.default_rng(1).normal(size=(1, 1, 3, 3))
    assert np.array_equal(ad.avg_pool2d(Tensor(x), 1).data, x)


def test_avg_pool_indivisible():
    with pytest.raises(ConfigError):
        ad.avg_pool2d(Tensor(np.zeros((1, 1, 5, 5))), 2)


def test_log_softmax_symmetry():
    out = ad.log_softmax(Tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, math.log(0.5), atol=1e-15)


def test_log_softmax_constant_rows():
    out = ad.log_softmax(Tensor([[4.2, 4.2, 4.2]]))
    assert np.allclose(out.data, math.log(1.0 / 3.0), atol=1e-15)


def test_log_softmax_closed_form():
    out = ad.log_softmax(Tensor([[1.0, 2.0]]))
    lse = math.log(math.exp(1.0) + math.exp(2.0))
    assert np.allclose(out.data, [[1.0 - lse, 2.0 - lse]], atol=1e-12)
    assert abs(out.data[0, 0] + 1.3132616875182228) < 1e-12


def test_log_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    z = Tensor(rng.uniform(-50.0, 50.0, size=(64, 5)))
    p = np.exp(ad.log_softmax(z).data)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12


def test_log_softmax_shift_invariance():
    rng = np.random.default_rng(8)
    z = rng.uniform(-50.0, 50.0, size=(16, 4))
    a = ad.log_softmax(Tensor(z)).data
    b = ad.log_softmax(Tensor(z + 123.456)).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_cross_entropy_uniform():
    out = ad.cross_entropy(Tensor([[0.0, 0.0, 0.0]]), [1])
    assert abs(out.item() - math.log(3.0)) < 1e-12


def test_cross_entropy_confident_limit():
    out = ad.cross_entropy(Tensor([[60.0, 0.0]]), [0])
    assert out.item() < 1e-12


def test_cross_entropy_matches_log_softmax():
    out = ad.cross_entropy(Tensor([[1.0, 2.0]]), [0])
    assert abs(out.item() - 1.3132616875182228) < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DataError, match="index 1"):
        ad.cross_entropy(Tensor([[0.0, 0.0], [0.0, 0.0]]), [0, 2])


def test_kl_identical_is_zero():
    p = [0.3, 0.7]
    assert ad.kl_div(Tensor(p), Tensor(p)).item() == 0.0


def test_kl_point_mass_vs_uniform():
    out = ad.kl_div(Tensor([1.0, 0.0]), Tensor([0.5, 0.5]))
    assert abs(out.item() - math.log(2.0)) < 1e-9


def test_kl_hand_value():
    out = ad.kl_div(Tensor([0.5, 0.5]), Tensor([0.9, 0.1]))
    want = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    assert abs(out.item() - want) < 1e-12
    assert abs(out.item() - 0.5108256237659907) < 1e-9


def test_kl_nonnegative_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        assert ad.kl_div(Tensor(p), Tensor(q)).item() >= 0.0


def test_kl_rejects_invalid():
    with pytest.raises(DataError):
        ad.kl_div(Tensor([0.5, 0.6]), Tensor([0.5, 0.5]))
    with pytest.raises(DataError):
        ad.kl_div(Tensor([-0.1, 1.1]), Tensor([0.5, 0.5]))


# ---------------------------------------------------------------------------
# backward basics


def test_backward_sum_gives_ones():
    x = Tensor([1.0, 5.0, -2.0], requires_grad=True)
    ad.tsum(x).backward()
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ad.tsum(ad.mul(x, x)).backward()
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(UsageError):
        ad.mul(x, x).backward()


def test_no_grad_leaf_stays_untouched():
    x = Tensor([1.0, 2.0])
    y = Tensor([3.0, 4.0], requires_grad=True)
    ad.tsum(ad.mul(x, y)).backward()
    assert x.grad is None
    assert np.array_equal(y.grad, [1.0, 2.0])


def test_grad_accumulates_across_backwards():
    x = Tensor([1.0], requires_grad=True)
    ad.tsum(x).backward()
    ad.tsum(x).backward()
    assert np.array_equal(x.grad, [2.0])
    x.zero_grad()
    assert x.grad is None


def test_reused_node_gets_both_contributions():
    # y = x*x + x  -> dy/dx = 2x + 1
    x = Tensor([3.0], requires_grad=True)
    y = ad.add(ad.mul(x, x), x)
    ad.tsum(y).backward()
    assert np.array_equal(x.grad, [7.0])


# ---------------------------------------------------------------------------
# finite-difference oracle


def test_finite_diff_linear_exact():
    rep = ad.finite_diff_check(lambda t: ad.tsum(t), Tensor(np.array([1.0, -2.0, 3.0])))
    assert rep.passed
    assert rep.max_rel_discrepancy < 1e-9


def test_finite_diff_log_linear_model():
    rng = np.random.default_rng(11)
    w = rng.normal(size=(6, 3))
    labels = np.array([0, 2, 1, 1])

    def f(x):
        return ad.cross_entropy(ad.affine(x, Tensor(w), Tensor(np.zeros(3))), labels)

    rep = ad.finite_diff_check(f, Tensor(rng.normal(size=(4, 6))), h=1e-5, tol=1e-4)
    assert rep.passed


def test_finite_diff_negative_control():
    """An op with a deliberately wrong backward rule must fail the check."""

    def bad_square(t):
        out = Tensor(t.data * t.data)
        out.requires_grad = True
        out._prev = (t,)

        def backward():
            ad._accumulate(t, out.grad * 3.0 * t.data)  # should be 2*t

        out._backward = backward
        return ad.tsum(out)

    rep = ad.finite_diff_check(bad_square, Tensor(np.array([1.0, 2.0])))
    assert not rep.passed


def _away_from(x, point, margin, rng):
    """Push entries of x that sit within `margin` of `point` outward; finite
    differences straddle kinks otherwise."""
    close = np.abs(x - point) < margin
    x[close] = point + np.sign(x[close] - point + 1e-12) * (margin + rng.uniform(0.1, 0.5, size=int(close.sum())))
    return x


def test_every_op_matches_finite_differences():
    rng = np.random.default_rng(42)
    checks = 0
    for _ in range(100):
        shape = (int(rng.integers(2, 4)), int(rng.integers(2, 5)))
        proj = rng.normal(size=shape)

        def weighted(op):
            return lambda t: ad.tsum(ad.mul(op(t), Tensor(proj)))

        x = rng.normal(size=shape)
        other = Tensor(rng.normal(size=shape))
        for op in (
            lambda t: ad.add(t, other),
            lambda t: ad.mul(t, other),
            lambda t: ad.texp(t),
        ):
            assert ad.finite_diff_check(weighted(op), Tensor(x)).passed
            checks += 1

        projT = Tensor(proj.T.copy())
        assert ad.finite_diff_check(
            lambda t: ad.tsum(ad.mul(ad.reshape(ad.mul(t, t), (shape[1], shape[0])), projT)),
            Tensor(x),
        ).passed
        checks += 1

        xk = _away_from(x.copy(), 0.0, 0.05, rng)
        assert ad.finite_diff_check(weighted(ad.relu), Tensor(xk)).passed
        xc = _away_from(x.copy(), 0.3, 0.05, rng)
        assert ad.finite_diff_check(weighted(lambda t: ad.clamp_min(t, 0.3)), Tensor(xc)).passed
        xp = np.abs(x) + 0.1
        assert ad.finite_diff_check(weighted(ad.tlog), Tensor(xp)).passed
        assert ad.finite_diff_check(lambda t: ad.tmean(ad.mul(t, t)), Tensor(x)).passed
        checks += 4
    assert checks >= 100


def test_sum_mean_softmax_losses_match_finite_differences():
    rng = np.random.default_rng(43)
    for _ in range(100):
        bsz, k = int(rng.integers(1, 4)), int(rng.integers(2, 5))
        z = rng.normal(size=(bsz, k)) * 3.0
        labels = rng.integers(0, k, size=bsz)
        proj = rng.normal(size=(bsz, k))
        assert ad.finite_diff_check(
            lambda t: ad.tsum(ad.mul(ad.log_softmax(t), Tensor(proj))), Tensor(z)
        ).passed
        assert ad.finite_diff_check(
            lambda t: ad.cross_entropy(t, labels), Tensor(z)
        ).passed


def test_affine_and_conv_match_finite_differences():
    rng = np.random.default_rng(44)
    for _ in range(100):
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        proj = rng.normal(size=(2, 2))

        def fx(t):
            return ad.tsum(ad.mul(ad.affine(t, Tensor(w), Tensor(b)), Tensor(proj)))

        def fw(t):
            return ad.tsum(ad.mul(ad.affine(Tensor(x), t, Tensor(b)), Tensor(proj)))

        def fb(t):
            return ad.tsum(ad.mul(ad.affine(Tensor(x), Tensor(w), t), Tensor(proj)))

        assert ad.finite_diff_check(fx, Tensor(x)).passed
        assert ad.finite_diff_check(fw, Tensor(w)).passed
        assert ad.finite_diff_check(fb, Tensor(b)).passed


def test_conv_and_pool_match_finite_differences():
    rng = np.random.default_rng(45)
    geoms = [(4, 1, 0), (4, 1, 1), (5, 2, 0), (5, 2, 1)]
    for i in range(100):
        size, stride, pad = geoms[i % len(geoms)]
        x = rng.normal(size=(2, 2, size, size))
        k = rng.normal(size=(2, 2, 3, 3))
        bias = rng.normal(size=2)
        side = (size + 2 * pad - 3) // stride + 1
        proj = rng.normal(size=(2, 2, side, side))

        def fx(t):
            out = ad.conv2d(t, Tensor(k), Tensor(bias), stride=stride, padding=pad)
            return ad.tsum(ad.mul(out, Tensor(proj)))

        def fk(t):
            out = ad.conv2d(Tensor(x), t, Tensor(bias), stride=stride, padding=pad)
            return ad.tsum(ad.mul(out, Tensor(proj)))

        def fbias(t):
            out = ad.conv2d(Tensor(x), Tensor(k), t, stride=stride, padding=pad)
            return ad.tsum(ad.mul(out, Tensor(proj)))

        assert ad.finite_diff_check(fx, Tensor(x)).passed
        assert ad.finite_diff_check(fk, Tensor(k)).passed
        assert ad.finite_diff_check(fbias, Tensor(bias)).passed

        if size % 2 == 0:
            pool_proj = rng.normal(size=(2, 2, size // 2, size // 2))
            assert ad.finite_diff_check(
                lambda t: ad.tsum(ad.mul(ad.avg_pool2d(t, 2), Tensor(pool_proj))), Tensor(x)
            ).passed


def test_kl_div_differentiable_through_softmax():
    rng = np.random.default_rng(46)
    for _ in range(30):
        z = rng.normal(size=(4,)) * 2.0
        q = rng.dirichlet(np.ones(4))

        def f(t):
            p = ad.texp(ad.log_softmax(ad.reshape(t, (1, 4))))
            return ad.kl_div(ad.reshape(p, (4,)), Tensor(q))

        assert ad.finite_diff_check(f, Tensor(z)).passed
