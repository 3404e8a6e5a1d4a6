import math

import numpy as np
import pytest

from seqdedup import numcore as nc
from seqdedup.numcore.gru import GRUCellParams, bigru, gru_cell, init_bigru, init_gru_cell
from seqdedup.numcore.checkpoint import restore_params


def scalar_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_gru_step(cell: GRUCellParams, x, h):
    """Independent scalar-loop GRU reference (no numpy linear algebra)."""
    p = len(h)

    def mv(m, v):
        return [sum(m[i][j] * v[j] for j in range(len(v))) for i in range(p)]

    Wz, Uz, bz = cell.W_z.data.tolist(), cell.U_z.data.tolist(), cell.b_z.data.tolist()
    Wr, Ur, br = cell.W_r.data.tolist(), cell.U_r.data.tolist(), cell.b_r.data.tolist()
    Wh, Uh, bh = cell.W_h.data.tolist(), cell.U_h.data.tolist(), cell.b_h.data.tolist()
    z = [scalar_sigmoid(a + b_ + c) for a, b_, c in zip(mv(Wz, x), mv(Uz, h), bz)]
    r = [scalar_sigmoid(a + b_ + c) for a, b_, c in zip(mv(Wr, x), mv(Ur, h), br)]
    rh = [ri * hi for ri, hi in zip(r, h)]
    hbar = [math.tanh(a + b_ + c) for a, b_, c in zip(mv(Wh, x), mv(Uh, rh), bh)]
    return [(1 - zi) * hi + zi * hb for zi, hi, hb in zip(z, h, hbar)]


def scalar_bigru(params, xs, init_f, init_b):
    """Independent scalar-loop bidirectional reference."""
    n = len(xs)
    h = list(init_f)
    fwd = []
    for t in range(n):
        h = scalar_gru_step(params.fwd, xs[t], h)
        fwd.append(h)
    h = list(init_b)
    bwd = [None] * n
    for t in range(n - 1, -1, -1):
        h = scalar_gru_step(params.bwd, xs[t], h)
        bwd[t] = h
    return [f + b for f, b in zip(fwd, bwd)]


def zeroed_cell(p):
    rng = np.random.default_rng(0)
    cell = init_gru_cell(p, "cell", rng)
    for t in cell.all():
        t.data[:] = 0.0
    return cell


class TestPrimitives:
    def test_affine_identity(self):
        x = nc.constant(np.arange(6.0).reshape(2, 3))
        w = nc.Parameter(np.eye(3), "w")
        b = nc.Parameter(np.zeros(3), "b")
        np.testing.assert_array_equal(nc.affine(x, w, b).data, x.data)

    def test_affine_zero_input_gives_bias_rows(self):
        x = nc.constant(np.zeros((3, 2)))
        w = nc.Parameter(np.ones((4, 2)), "w")
        b = nc.Parameter(np.array([1.0, 2.0, 3.0, 4.0]), "b")
        out = nc.affine(x, w, b)
        for row in out.data:
            np.testing.assert_array_equal(row, b.data)

    def test_affine_hand_value(self):
        x = nc.constant(np.array([[1.0, 2.0]]))
        w = nc.Parameter(np.array([[1.0, 1.0], [0.0, 1.0]]), "w")
        b = nc.Parameter(np.array([0.0, 1.0]), "b")
        np.testing.assert_array_equal(nc.affine(x, w, b).data, [[3.0, 3.0]])

    def test_affine_shape_error_mentions_both_shapes(self):
        x = nc.constant(np.zeros((2, 3)))
        w = nc.Parameter(np.zeros((4, 5)), "w")
        b = nc.Parameter(np.zeros(4), "b")
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            nc.affine(x, w, b)

    def test_activations(self):
        assert nc.sigmoid(nc.constant([0.0])).data[0] == 0.5
        assert nc.relu(nc.constant([-2.0])).data[0] == 0.0
        assert nc.tanh(nc.constant([0.0])).data[0] == 0.0

    def test_softmax_uniform(self):
        out = nc.softmax_rows(nc.constant([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_softmax_rows_sum_to_one_and_nonnegative(self):
        rng = np.random.default_rng(1)
        x = nc.constant(rng.normal(scale=30, size=(20, 7)))
        s = nc.softmax_rows(x).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
        assert (s >= 0).all()

    def test_softmax_stable_at_large_logits(self):
        s = nc.softmax_rows(nc.constant([[1000.0, 1000.0]])).data
        np.testing.assert_allclose(s, [[0.5, 0.5]])


class TestBackward:
    def test_sum_of_linear_map(self):
        x = np.array([[1.0, 2.0, 3.0]])
        w = nc.Parameter(np.zeros((2, 3)), "w")
        loss = nc.sum_all(nc.linear(nc.constant(x), w))
        nc.backward(loss)
        np.testing.assert_array_equal(w.grad, np.vstack([x, x]))

    def test_sigmoid_grad_at_zero(self):
        w = nc.Parameter(np.array([0.0]), "w")
        c = 3.0
        loss = nc.sum_all(nc.scale(nc.sigmoid(w), c))
        nc.backward(loss)
        assert w.grad[0] == pytest.approx(0.25 * c)

    def test_backward_requires_scalar(self):
        w = nc.Parameter(np.ones((2, 2)), "w")
        with pytest.raises(ValueError):
            nc.backward(nc.relu(w))

    def test_backward_rejects_unrecorded(self):
        with pytest.raises(ValueError):
            nc.backward(nc.constant([1.0]))

    def test_grad_accumulates_across_uses(self):
        w = nc.Parameter(np.array([2.0]), "w")
        loss = nc.sum_all(nc.mul(w, w))  # d/dw (w^2) = 2w
        nc.backward(loss)
        assert w.grad[0] == pytest.approx(4.0)

    def test_no_grad_disables_recording(self):
        w = nc.Parameter(np.ones((1, 1)), "w")
        with nc.no_grad():
            out = nc.relu(w)
        assert out._backward is None and not out.requires_grad


def fd_check_op(build, params, eps=1e-6, tol=1e-6, seed=0):
    """Finite-difference check helper for a single op composed to a scalar."""
    rep = nc.grad_check(build, params, eps=eps, tol=tol, rng=np.random.default_rng(seed))
    assert rep.passed, f"max rel err {rep.max_rel_err:.3e} at {rep.worst_param}{rep.worst_index}"


class TestPerOpGradients:
    """Central-difference verification of every taped operation."""

    def setup_method(self):
        rng = np.random.default_rng(42)
        self.a = nc.Parameter(rng.normal(size=(3, 4)), "a")
        self.b = nc.Parameter(rng.normal(size=(3, 4)), "b")
        self.w = nc.Parameter(rng.normal(size=(2, 4)), "w")
        self.bias = nc.Parameter(rng.normal(size=2), "bias")
        self.sq = nc.Parameter(rng.normal(size=(4, 3)), "sq")

    def test_affine(self):
        fd_check_op(lambda: nc.sum_all(nc.tanh(nc.affine(self.a, self.w, self.bias))),
                    [self.a, self.w, self.bias])

    def test_linear(self):
        fd_check_op(lambda: nc.sum_all(nc.tanh(nc.linear(self.a, self.w))), [self.a, self.w])

    def test_matmul(self):
        fd_check_op(lambda: nc.sum_all(nc.tanh(nc.matmul(self.a, self.sq))), [self.a, self.sq])

    def test_add_sub_mul_neg(self):
        fd_check_op(
            lambda: nc.sum_all(nc.mul(nc.add(self.a, self.b), nc.neg(nc.sub(self.a, self.b)))),
            [self.a, self.b],
        )

    def test_scale_add_scalar(self):
        fd_check_op(lambda: nc.sum_all(nc.add_scalar(nc.scale(self.a, 1.7), 0.3)), [self.a])

    def test_relu(self):
        fd_check_op(lambda: nc.sum_all(nc.mul(nc.relu(self.a), self.b)), [self.a, self.b])

    def test_tanh(self):
        fd_check_op(lambda: nc.sum_all(nc.mul(nc.tanh(self.a), self.b)), [self.a, self.b])

    def test_sigmoid(self):
        fd_check_op(lambda: nc.sum_all(nc.mul(nc.sigmoid(self.a), self.b)), [self.a, self.b])

    def test_softmax_rows(self):
        fd_check_op(lambda: nc.sum_all(nc.mul(nc.softmax_rows(self.a), self.b)),
                    [self.a, self.b])

    def test_log(self):
        pos = nc.Parameter(np.abs(np.random.default_rng(3).normal(size=(3, 4))) + 0.5, "pos")
        fd_check_op(lambda: nc.sum_all(nc.log(pos)), [pos])

    def test_clip(self):
        fd_check_op(lambda: nc.sum_all(nc.mul(nc.clip(self.a, -0.8, 0.8), self.b)),
                    [self.a, self.b])

    def test_concat_cols_and_slices(self):
        def build():
            joined = nc.concat_cols([self.a, self.b])
            left = nc.slice_cols(joined, 0, 3)
            mid = nc.slice_rows(joined, 1, 3)
            return nc.sum_all(nc.tanh(left)) + nc.sum_all(nc.tanh(mid))

        fd_check_op(build, [self.a, self.b])

    def test_concat_rows(self):
        fd_check_op(lambda: nc.sum_all(nc.tanh(nc.concat_rows([self.a, self.b]))),
                    [self.a, self.b])

    def test_reshape_tile_repeat(self):
        def build():
            t = nc.tile_vertical(self.a, 2)
            r = nc.repeat_rows(self.b, 2)
            return nc.sum_all(nc.tanh(nc.mul(t, r)))

        fd_check_op(build, [self.a, self.b])

    def test_mean_all(self):
        fd_check_op(lambda: nc.mean_all(nc.tanh(self.a)), [self.a])

    def test_gru_cell(self):
        rng = np.random.default_rng(17)
        cell = init_gru_cell(3, "g", rng)
        x = nc.Parameter(rng.normal(size=(1, 3)), "x")
        h = nc.Parameter(rng.normal(size=(1, 3)), "h")
        fd_check_op(lambda: nc.sum_all(nc.tanh(gru_cell(x, h, cell))),
                    cell.all() + [x, h])

    def test_bigru(self):
        rng = np.random.default_rng(23)
        params = init_bigru(3, "bg", rng)
        seq = nc.Parameter(rng.normal(size=(4, 3)), "seq")
        i_f = nc.Parameter(rng.normal(size=3), "i_f")
        i_b = nc.Parameter(rng.normal(size=3), "i_b")

        def build():
            out, ff, fb = bigru(seq, params, i_f, i_b)
            return nc.sum_all(nc.tanh(out)) + nc.sum_all(ff) + nc.sum_all(fb)

        fd_check_op(build, params.all() + [seq, i_f, i_b])


class TestGruCell:
    def test_zero_weights_half_hidden(self):
        cell = zeroed_cell(1)
        x = nc.constant([[0.0]])
        h = nc.constant([[1.0]])
        out = gru_cell(x, h, cell)
        # z = 0.5, hbar = 0 so the new hidden is halfway to zero
        assert out.data[0, 0] == pytest.approx(0.5)

    def test_zero_weights_zero_hidden(self):
        cell = zeroed_cell(1)
        out = gru_cell(nc.constant([[3.0]]), nc.constant([[0.0]]), cell)
        assert out.data[0, 0] == 0.0

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(4)
        cell = init_gru_cell(3, "g", rng)
        x = rng.normal(size=3)
        h = rng.normal(size=3)
        got = gru_cell(nc.constant(x[None, :]), nc.constant(h[None, :]), cell).data[0]
        want = scalar_gru_step(cell, list(x), list(h))
        np.testing.assert_allclose(got, want, atol=1e-13)

    def test_output_inside_unit_box_when_hidden_is(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            cell = init_gru_cell(4, "g", rng)
            x = nc.constant(rng.normal(size=(1, 4)) * 3)
            h = nc.constant(rng.uniform(-0.999, 0.999, size=(1, 4)))
            out = gru_cell(x, h, cell).data
            assert (out > -1).all() and (out < 1).all()


class TestBigru:
    def test_single_element_sequence(self):
        rng = np.random.default_rng(2)
        params = init_bigru(3, "bg", rng)
        x = rng.normal(size=(1, 3))
        i_f = rng.normal(size=3)
        i_b = rng.normal(size=3)
        out, ff, fb = bigru(nc.constant(x), params, nc.constant(i_f), nc.constant(i_b))
        fwd = scalar_gru_step(params.fwd, list(x[0]), list(i_f))
        bwd = scalar_gru_step(params.bwd, list(x[0]), list(i_b))
        np.testing.assert_allclose(out.data[0], fwd + bwd, atol=1e-13)
        np.testing.assert_allclose(ff.data[0], fwd, atol=1e-13)
        np.testing.assert_allclose(fb.data[0], bwd, atol=1e-13)

    def test_zero_weights_zero_inits_all_zero(self):
        params = init_bigru(2, "bg", np.random.default_rng(0))
        for t in params.all():
            t.data[:] = 0.0
        out, _, _ = bigru(nc.constant(np.ones((3, 2))), params,
                          nc.constant(np.zeros(2)), nc.constant(np.zeros(2)))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(13)
        params = init_bigru(3, "bg", rng)
        xs = rng.normal(size=(3, 3))
        i_f = rng.normal(size=3)
        i_b = rng.normal(size=3)
        out, _, _ = bigru(nc.constant(xs), params, nc.constant(i_f), nc.constant(i_b))
        want = scalar_bigru(params, xs.tolist(), list(i_f), list(i_b))
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    def test_rejects_empty_sequence(self):
        params = init_bigru(2, "bg", np.random.default_rng(0))
        with pytest.raises(ValueError):
            bigru(nc.constant(np.zeros((0, 2))), params,
                  nc.constant(np.zeros(2)), nc.constant(np.zeros(2)))

    def test_matches_composed_gru_cells(self):
        rng = np.random.default_rng(31)
        params = init_bigru(3, "bg", rng)
        xs = rng.normal(size=(5, 3))
        seq = nc.constant(xs)
        i_f, i_b = nc.constant(rng.normal(size=3)), nc.constant(rng.normal(size=3))
        out, _, _ = bigru(seq, params, i_f, i_b)
        h = nc.reshape(i_f, (1, 3))
        fwd = []
        for t in range(5):
            h = gru_cell(nc.slice_rows(seq, t, t + 1), h, params.fwd)
            fwd.append(h.data[0])
        h = nc.reshape(i_b, (1, 3))
        bwd = [None] * 5
        for t in range(4, -1, -1):
            h = gru_cell(nc.slice_rows(seq, t, t + 1), h, params.bwd)
            bwd[t] = h.data[0]
        want = np.hstack([np.array(fwd), np.array(bwd)])
        np.testing.assert_allclose(out.data, want, atol=1e-14)


class TestSgd:
    def make_param(self, value):
        return nc.Parameter(np.array([value]), "p")

    def test_plain_gradient_descent(self):
        p = self.make_param(1.0)
        p.grad = np.array([0.5])
        opt = nc.OptState(lr=0.1, momentum=0.0, weight_decay=0.0)
        nc.sgd_step([p], opt)
        assert p.data[0] == pytest.approx(1.0 - 0.1 * 0.5)
        assert p.grad is None

    def test_no_grad_no_decay_is_identity(self):
        p = self.make_param(2.0)
        opt = nc.OptState(lr=0.1, momentum=0.0, weight_decay=0.0)
        nc.sgd_step([p], opt)
        assert p.data[0] == 2.0

    def test_two_momentum_steps_accumulate(self):
        p = self.make_param(0.0)
        g = 1.0
        opt = nc.OptState(lr=0.1, momentum=0.9, weight_decay=0.0)
        p.grad = np.array([g])
        nc.sgd_step([p], opt)
        p.grad = np.array([g])
        nc.sgd_step([p], opt)
        # v1 = g, v2 = 0.9 g + g; total displacement lr*g*(1 + 1.9)
        assert p.data[0] == pytest.approx(-0.1 * g * (1.0 + 1.9))

    def test_weight_decay_shrinks_parameter(self):
        p = self.make_param(10.0)
        opt = nc.OptState(lr=0.1, momentum=0.0, weight_decay=0.01)
        nc.sgd_step([p], opt)
        assert p.data[0] == pytest.approx(10.0 - 0.1 * 0.01 * 10.0)


class TestGradCheckHarness:
    def test_linear_model_near_exact(self):
        w = nc.Parameter(np.array([[1.0, -2.0]]), "w")
        x = nc.constant(np.array([[0.3, 0.7]]))
        rep = nc.grad_check(lambda: nc.sum_all(nc.mul(nc.linear(x, w), nc.linear(x, w))),
                            [w], eps=1e-5, tol=1e-4)
        assert rep.passed and rep.max_rel_err < 1e-7

    def test_detects_corrupted_gradient(self):
        w = nc.Parameter(np.array([[0.5, 0.25]]), "w")
        x = nc.constant(np.array([[1.0, 2.0]]))

        def closure():
            out = nc.sum_all(nc.tanh(nc.linear(x, w)))
            # sabotage: double the recorded gradient
            orig = out._backward

            def bad():
                orig()
                w.grad *= 2.0

            out._backward = bad
            return out

        rep = nc.grad_check(closure, [w], eps=1e-5, tol=1e-4)
        assert not rep.passed


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = [
            nc.Parameter(rng.normal(size=(3, 2)), "layer.w"),
            nc.Parameter(rng.normal(size=3), "layer.b"),
        ]
        path = tmp_path / "model.ckpt"
        nc.save_checkpoint(path, params, meta={"kind": "test", "heads": "2"})
        tensors, meta = nc.load_checkpoint(path)
        assert meta == {"kind": "test", "heads": "2"}
        np.testing.assert_array_equal(tensors["layer.w"], params[0].data)
        np.testing.assert_array_equal(tensors["layer.b"], params[1].data)

    def test_restore_into_params(self, tmp_path):
        rng = np.random.default_rng(1)
        params = [nc.Parameter(rng.normal(size=(2, 2)), "w")]
        path = tmp_path / "m.ckpt"
        nc.save_checkpoint(path, params)
        fresh = [nc.Parameter(np.zeros((2, 2)), "w")]
        tensors, _ = nc.load_checkpoint(path)
        restore_params(fresh, tensors)
        np.testing.assert_array_equal(fresh[0].data, params[0].data)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOT-A-CKPT\ndata\n")
        with pytest.raises(ValueError, match="SEQDEDUP-CKPT-1"):
            nc.load_checkpoint(path)

    def test_byte_identical_for_same_values(self, tmp_path):
        rng = np.random.default_rng(5)
        params = [nc.Parameter(rng.normal(size=(4, 4)), "w")]
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        nc.save_checkpoint(a, params, meta={"x": "1"})
        nc.save_checkpoint(b, params, meta={"x": "1"})
        assert a.read_bytes() == b.read_bytes()


def test_seeded_init_is_deterministic():
    a = init_bigru(4, "g", np.random.default_rng(123))
    b = init_bigru(4, "g", np.random.default_rng(123))
    for ta, tb in zip(a.all(), b.all()):
        np.testing.assert_array_equal(ta.data, tb.data)
