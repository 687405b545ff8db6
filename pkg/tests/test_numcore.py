import math

import numpy as np
import pytest
import scipy.sparse as sp

from hgdetect import numcore as nc
from conftest import assert_grad_close, finite_difference


def test_op_set_contents():
    ops = nc.op_set()
    for name in ("matmul", "spmm", "softmax_rows", "row_normalize", "cosine",
                 "concat", "mean_rows", "layer_norm", "dropout", "frobenius_sq",
                 "tanh", "elu", "exp", "log"):
        assert name in ops


def test_softmax_symmetry():
    out = nc.softmax_rows(nc.constant([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]])


def test_row_normalize_345():
    out = nc.row_normalize(nc.constant([[3.0, 4.0]]))
    assert np.allclose(out.data, [[0.6, 0.8]])


def test_cosine_orthogonal():
    c = nc.cosine(nc.constant([[1.0, 0.0]]), nc.constant([[0.0, 1.0]]))
    assert c.item() == pytest.approx(0.0, abs=1e-15)


def test_row_normalize_rejects_zero_row():
    with pytest.raises(ValueError, match="zero-norm"):
        nc.row_normalize(nc.constant([[0.0, 0.0]]))


def test_backward_linear_map():
    w = nc.Tensor(np.ones((2, 3)), requires_grad=True)
    x = nc.constant([[1.0], [2.0], [3.0]])
    loss = nc.mean_all(nc.matmul(w, x))
    loss_scaled = nc.scale(loss, 2.0)  # sum over the 2 output rows
    nc.backward(loss_scaled)
    assert np.allclose(w.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))


def test_backward_quadratic():
    v = nc.Tensor([[1.0, 2.0]], requires_grad=True)
    nc.backward(nc.frobenius_sq(v))
    assert np.allclose(v.grad, [[2.0, 4.0]])


def test_backward_rejects_nonscalar():
    v = nc.Tensor([[1.0, 2.0]], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        nc.backward(v)


def test_backward_accumulates():
    v = nc.Tensor([[1.0, 2.0]], requires_grad=True)
    nc.backward(nc.frobenius_sq(v))
    nc.backward(nc.frobenius_sq(v))
    assert np.allclose(v.grad, [[4.0, 8.0]])


def _composite_loss(arrays):
    """A loss exercising most of the op set; takes raw ndarrays."""
    a, w, b, c = [nc.Tensor(x, requires_grad=True) for x in arrays]
    h = nc.tanh(nc.add_bias(nc.matmul(a, w), b))
    h = nc.elu(h)
    p = nc.softmax_rows(h)
    q = nc.row_normalize(nc.add(p, nc.constant(np.full(p.shape, 0.1))))
    sim = nc.cosine_matrix(q, c)
    e = nc.exp(nc.scale(sim, 0.5))
    ln = nc.layer_norm(e)
    cat = nc.concat([ln, nc.mul(e, e)], axis=1)
    m = nc.mean_rows(cat)
    s = nc.frobenius_sq(m)
    picked = nc.take_pairs(sim, [0, 1, 2, 3], [0, 1, 0, 1])
    total = nc.add(s, nc.mean_all(nc.log(nc.add(nc.mul_cols(cat, picked), nc.constant(np.full(cat.shape, 5.0))))))
    return total, (a, w, b, c)


@pytest.mark.parametrize("seed", range(5))
def test_composite_loss_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=(4, 3)), rng.normal(size=(3, 5)),
              rng.normal(size=(1, 5)), rng.normal(size=(2, 5))]
    loss, tensors = _composite_loss(arrays)
    nc.backward(loss)
    numeric = finite_difference(lambda arrs: _composite_loss(arrs)[0].item(),
                                [a.copy() for a in arrays])
    for t, g in zip(tensors, numeric):
        assert_grad_close(t.grad, g)


def test_spmm_matches_dense():
    rng = np.random.default_rng(0)
    dense = (rng.random((6, 4)) < 0.4).astype(float)
    s = sp.csr_matrix(dense)
    x = nc.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    out_sparse = nc.spmm(s, x)
    out_dense = dense @ x.data
    assert np.allclose(out_sparse.data, out_dense, atol=1e-12)
    nc.backward(nc.frobenius_sq(out_sparse))
    g_sparse = x.grad.copy()
    x.grad = None
    y = nc.Tensor(x.data, requires_grad=True)
    nc.backward(nc.frobenius_sq(nc.matmul(nc.constant(dense), y)))
    assert np.allclose(g_sparse, y.grad, atol=1e-12)


def test_div_safe_cols_zero_rows():
    m = nc.Tensor([[2.0, 4.0], [1.0, 1.0]], requires_grad=True)
    col = nc.Tensor([[2.0], [0.0]], requires_grad=True)
    out = nc.div_safe_cols(m, col)
    assert np.allclose(out.data, [[1.0, 2.0], [0.0, 0.0]])
    nc.backward(nc.frobenius_sq(out))
    assert np.allclose(m.grad[1], 0.0)
    assert np.allclose(col.grad[1], 0.0)


def test_dropout_eval_identity_and_train_determinism():
    x = nc.constant(np.ones((4, 4)))
    out = nc.dropout(x, 0.5, key=123, training=False)
    assert np.array_equal(out.data, x.data)
    a = nc.dropout(x, 0.5, key=99, training=True).data
    b = nc.dropout(x, 0.5, key=99, training=True).data
    c = nc.dropout(x, 0.5, key=100, training=True).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_adam_zero_gradient_weight_decay_only():
    p = nc.Tensor([[1.0, -1.0]], requires_grad=True)
    opt = nc.Adam({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.zeros_like(p.data)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)
    opt2 = nc.Adam({"p": p}, lr=0.1, weight_decay=0.01)
    p.grad = np.zeros_like(p.data)
    opt2.step()
    assert not np.array_equal(p.data, before)  # decay term moved the params


def test_adam_step_counter():
    p = nc.Tensor([[0.0]], requires_grad=True)
    opt = nc.Adam({"p": p})
    assert opt.step_count == 0
    p.grad = np.array([[1.0]])
    opt.step()
    assert opt.step_count == 1
    opt.step()
    assert opt.step_count == 2


def test_adam_first_update_hand_value():
    # Bias-corrected first step: m_hat = g, v_hat = g^2, delta = -lr*g/(|g|+eps).
    p = nc.Tensor([[0.0]], requires_grad=True)
    opt = nc.Adam({"p": p}, lr=1e-3)
    p.grad = np.array([[1.0]])
    opt.step()
    expected = -1e-3 * 1.0 / (1.0 + 1e-8)
    assert p.data[0, 0] == pytest.approx(expected, rel=1e-9)


def test_adam_rejects_shape_mismatch():
    p = nc.Tensor([[0.0, 0.0]], requires_grad=True)
    opt = nc.Adam({"p": p})
    p.grad = np.array([[1.0]])
    with pytest.raises(ValueError, match="shape"):
        opt.step()


def test_init_zeros_and_determinism():
    z = nc.init_params((2, 2), "zeros", seed=0)
    assert np.array_equal(z.data, np.zeros((2, 2)))
    a = nc.init_params((5, 7), "xavier-uniform", seed=42)
    b = nc.init_params((5, 7), "xavier-uniform", seed=42)
    assert np.array_equal(a.data, b.data)
    with pytest.raises(ValueError, match="positive"):
        nc.init_params((0, 3), "zeros", seed=0)
    with pytest.raises(ValueError, match="unknown init"):
        nc.init_params((2, 2), "normal", seed=0)


def test_xavier_bound_and_mean():
    bound = math.sqrt(6.0 / 200)
    for seed in range(10):
        t = nc.init_params((100, 100), "xavier-uniform", seed=seed)
        assert np.abs(t.data).max() <= bound
        assert abs(t.data.mean()) < 0.01


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"w": np.arange(6, dtype=float).reshape(2, 3), "b": np.zeros((1, 3))}
    path = tmp_path / "model.ckpt"
    nc.save_checkpoint(path, arrays, meta={"config_hash": "abc"})
    meta, loaded = nc.load_checkpoint(path)
    assert meta["config_hash"] == "abc"
    for k in arrays:
        assert np.array_equal(arrays[k], loaded[k])
    # byte-identical re-save
    path2 = tmp_path / "model2.ckpt"
    nc.save_checkpoint(path2, loaded, meta=meta)
    assert path.read_bytes() == path2.read_bytes()


def test_layer_norm_learnable_grads():
    rng = np.random.default_rng(1)
    arrays = [rng.normal(size=(3, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 4))]

    def f(arrs):
        x, g, b = [nc.Tensor(a, requires_grad=True) for a in arrs]
        return nc.frobenius_sq(nc.layer_norm(x, g, b)), (x, g, b)

    loss, tensors = f(arrays)
    nc.backward(loss)
    numeric = finite_difference(lambda arrs: f(arrs)[0].item(), [a.copy() for a in arrays])
    for t, g in zip(tensors, numeric):
        assert_grad_close(t.grad, g)
