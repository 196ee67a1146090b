import numpy as np
import pytest

import tesage.autodiff as ad
from tesage.autodiff import Adam, Tensor, backward
from tesage.errors import AutodiffError, DimensionError


def finite_diff(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of one array."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    assert rel.max() < rtol, f"max relative error {rel.max():.2e}"


def check_op(build_loss, shape, rng, **kwargs):
    """Compare backward() against finite differences for one input slot."""
    x = rng.uniform(0.3, 1.7, size=shape)  # positive, away from relu/log kinks

    def value(arr):
        return float(build_loss(Tensor(arr), **kwargs).values)

    t = Tensor(x, requires_grad=True)
    loss = build_loss(t, **kwargs)
    backward(loss)
    assert_grad_close(t.grad, finite_diff(value, x))


class TestOpGradients:
    def test_add(self, rng):
        other = Tensor(rng.standard_normal((3, 4)))
        check_op(lambda t: ad.sum_all(ad.add(t, other)), (3, 4), rng)

    def test_add_broadcast_bias(self, rng):
        other = Tensor(rng.standard_normal((3, 4)))
        check_op(lambda t: ad.sum_all(ad.mul(ad.add(other, t), other)), (1, 4), rng)

    def test_sub(self, rng):
        other = Tensor(rng.standard_normal((3, 4)))
        check_op(lambda t: ad.sum_all(ad.mul(ad.sub(t, other), t)), (3, 4), rng)

    def test_mul_broadcast_column(self, rng):
        other = Tensor(rng.standard_normal((5, 7)))
        check_op(lambda t: ad.sum_all(ad.mul(other, t)), (5, 1), rng)

    def test_scale(self, rng):
        check_op(lambda t: ad.sum_all(ad.scale(t, -2.5)), (4, 2), rng)

    def test_matmul_left_and_right(self, rng):
        left = Tensor(rng.standard_normal((3, 5)))
        right = Tensor(rng.standard_normal((4, 3)))
        check_op(lambda t: ad.sum_all(ad.matmul(left, t)), (5, 4), rng)
        check_op(lambda t: ad.sum_all(ad.matmul(t, left)), (4, 3), rng)

    def test_relu(self, rng):
        check_op(lambda t: ad.sum_all(ad.mul(ad.relu(t), t)), (4, 4), rng)

    def test_sigmoid(self, rng):
        check_op(lambda t: ad.sum_all(ad.sigmoid(t)), (3, 3), rng)

    def test_log(self, rng):
        check_op(lambda t: ad.sum_all(ad.log(t)), (4, 2), rng)

    def test_reciprocal(self, rng):
        check_op(lambda t: ad.sum_all(ad.reciprocal(t)), (3, 2), rng)

    def test_row_mean(self, rng):
        weights = Tensor(rng.standard_normal((1, 6)))
        check_op(lambda t: ad.sum_all(ad.mul(ad.row_mean(t), weights)), (4, 6), rng)

    def test_concat_rows(self, rng):
        other = Tensor(rng.standard_normal((2, 3)))
        check_op(
            lambda t: ad.sum_all(ad.mul(ad.concat_rows([t, other]), 2.0)), (3, 3), rng
        )

    def test_softmax_cross_entropy(self, rng):
        check_op(lambda t: ad.softmax_cross_entropy(t, 2), (1, 6), rng)

    def test_dropout_train_mode(self, rng):
        mask_rng_a = np.random.default_rng(7)
        mask_rng_b = np.random.default_rng(7)

        x = rng.uniform(0.3, 1.7, (4, 4))
        t = Tensor(x, requires_grad=True)
        loss = ad.sum_all(ad.dropout(t, 0.5, mask_rng_a, train=True))
        backward(loss)

        def value(arr):
            local_rng = np.random.default_rng(7)
            return float(ad.sum_all(ad.dropout(Tensor(arr), 0.5, local_rng, train=True)).values)

        assert_grad_close(t.grad, finite_diff(value, x))
        # same stream, same mask
        assert float(loss.values) == value(x)
        del mask_rng_b


class TestForwardSemantics:
    def test_relu_values(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.values, [0.0, 0.0, 2.0])

    def test_row_mean_single_row_identity(self):
        row = np.array([[3.0, -1.0, 4.0]])
        np.testing.assert_array_equal(ad.row_mean(Tensor(row)).values, row)

    def test_uniform_logits_cross_entropy_is_ln9(self):
        loss = ad.softmax_cross_entropy(Tensor(np.zeros((1, 9))), 4)
        assert float(loss.values) == pytest.approx(np.log(9.0), abs=1e-12)

    def test_dropout_identity_when_eval_or_zero(self, rng):
        t = Tensor(rng.standard_normal((3, 3)))
        assert ad.dropout(t, 0.0, None, train=True) is t
        assert ad.dropout(t, 0.5, None, train=False) is t

    def test_concat_rows_stacks(self):
        out = ad.concat_rows([Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])])
        np.testing.assert_array_equal(out.values, [[1.0, 2.0], [3.0, 4.0]])

    def test_shape_errors_name_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 4\)"):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        t = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        backward(ad.sum_all(t))
        np.testing.assert_array_equal(t.grad, np.ones((3, 5)))

    def test_dot_product_bilinear(self, rng):
        xv = rng.standard_normal((1, 6))
        yv = rng.standard_normal((1, 6))
        x = Tensor(xv, requires_grad=True)
        y = Tensor(yv, requires_grad=True)
        backward(ad.sum_all(ad.mul(x, y)))
        np.testing.assert_allclose(x.grad, yv, atol=1e-15)
        np.testing.assert_allclose(y.grad, xv, atol=1e-15)

    def test_fan_out_accumulates(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        loss = ad.sum_all(ad.add(ad.mul(x, 2.0), ad.mul(x, 3.0)))
        backward(loss)
        np.testing.assert_allclose(x.grad, np.full((2, 2), 5.0), atol=1e-15)

    def test_rejects_non_scalar_loss(self, rng):
        t = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with pytest.raises(AutodiffError):
            backward(ad.mul(t, 2.0))

    def test_two_layer_net_matches_finite_differences(self, rng):
        w1v = rng.standard_normal((5, 4)) * 0.7
        w2v = rng.standard_normal((4, 3)) * 0.7
        xv = rng.standard_normal((2, 5))

        def run(w1a, w2a):
            w1, w2 = Tensor(w1a, requires_grad=True), Tensor(w2a, requires_grad=True)
            h = ad.relu(ad.matmul(Tensor(xv), w1))
            logits = ad.matmul(h, w2)
            return w1, w2, ad.softmax_cross_entropy(ad.row_mean(logits), 1)

        w1, w2, loss = run(w1v, w2v)
        backward(loss)
        fd_w1 = finite_diff(lambda a: float(run(a, w2v)[2].values), w1v)
        fd_w2 = finite_diff(lambda a: float(run(w1v, a)[2].values), w2v)
        assert_grad_close(w1.grad, fd_w1)
        assert_grad_close(w2.grad, fd_w2)

    def test_three_op_chain_matches_symbolic_oracle(self):
        # loss = sum(log(sigmoid(A @ B))) differentiated with sympy
        import sympy as sp

        a_vals = np.array([[0.3, -0.2], [0.5, 0.1]])
        b_vals = np.array([[0.4, 0.7], [-0.6, 0.2]])
        a_sym = sp.Matrix(2, 2, lambda i, j: sp.Symbol(f"a{i}{j}"))
        b_sym = sp.Matrix(2, 2, lambda i, j: sp.Symbol(f"b{i}{j}"))
        prod = a_sym * b_sym
        loss_sym = sum(
            sp.log(1 / (1 + sp.exp(-prod[i, j]))) for i in range(2) for j in range(2)
        )
        subs = {a_sym[i, j]: a_vals[i, j] for i in range(2) for j in range(2)}
        subs.update({b_sym[i, j]: b_vals[i, j] for i in range(2) for j in range(2)})

        a = Tensor(a_vals, requires_grad=True)
        b = Tensor(b_vals, requires_grad=True)
        backward(ad.sum_all(ad.log(ad.sigmoid(ad.matmul(a, b)))))

        for sym_m, tensor in ((a_sym, a), (b_sym, b)):
            for i in range(2):
                for j in range(2):
                    want = float(sp.diff(loss_sym, sym_m[i, j]).evalf(subs=subs))
                    assert tensor.grad[i, j] == pytest.approx(want, rel=1e-10)

    def test_backward_visits_shared_nodes_once(self, rng):
        # diamond: two paths from x to the loss; gradient must be the exact
        # sum of both paths, not doubled by revisits
        x = Tensor(np.array([[2.0]]), requires_grad=True)
        shared = ad.mul(x, 3.0)
        loss = ad.sum_all(ad.add(shared, ad.mul(shared, 2.0)))
        backward(loss)
        assert float(x.grad[0, 0]) == pytest.approx(9.0, abs=1e-15)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.values, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([p], lr=1e-3)
        p.grad = np.array([1.0])
        opt.step()
        # bias-corrected first step: lr * g / (|g| + eps') ~ lr
        assert float(p.values[0]) == pytest.approx(1.0 - 1e-3, rel=1e-6)

    def test_deterministic_across_twins(self, rng):
        values = rng.standard_normal((3, 3))
        grads = [rng.standard_normal((3, 3)) for _ in range(5)]
        results = []
        for _ in range(2):
            p = Tensor(values.copy(), requires_grad=True)
            opt = Adam([p], lr=0.01)
            for g in grads:
                p.grad = g.copy()
                opt.step()
            results.append(p.values.copy())
        np.testing.assert_array_equal(results[0], results[1])

    def test_missing_grad_rejected(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        with pytest.raises(AutodiffError):
            opt.step()

    def test_grads_cleared_after_step(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.array([0.5])
        opt.step()
        assert p.grad is None

    def test_state_round_trip(self, rng):
        p = Tensor(rng.standard_normal(4), requires_grad=True)
        opt = Adam([p], lr=0.01)
        for _ in range(3):
            p.grad = rng.standard_normal(4)
            opt.step()
        stash = opt.state_arrays()
        clone = Adam([p], lr=0.01)
        clone.load_state_arrays(stash)
        assert clone.step_count == 3
        np.testing.assert_array_equal(clone.m[0], opt.m[0])
        np.testing.assert_array_equal(clone.v[0], opt.v[0])
