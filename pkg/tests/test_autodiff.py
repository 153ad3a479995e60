import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beliefnet.autodiff import tensor as ad
from beliefnet.autodiff.gradcheck import max_relative_error
from beliefnet.autodiff.tensor import (
    BackwardError,
    ShapeError,
    Tensor,
    UnknownOpError,
    apply_op,
    backward,
    no_grad,
)

SEEDS = range(20)


def leaf(rng, *shape, lo=None):
    x = rng.normal(size=shape)
    if lo is not None:  # keep away from kinks
        x = np.where(np.abs(x) < lo, np.sign(x + 1e-30) * lo, x)
    return Tensor(x, requires_grad=True)


def weighted_sum(y, rng):
    """Scalar loss with random weights so no gradient cancels by symmetry."""
    w = rng.normal(size=y.shape)
    return ad.sum_(ad.mul(y, w))


def spread(rng, shape, gap=1e-2):
    """Random values whose pairwise gaps exceed ``gap`` (safe for max-type ops)."""
    n = int(np.prod(shape))
    vals = rng.permutation(n) * gap * 3 + rng.uniform(0, gap, size=n)
    return Tensor(vals.reshape(shape) - vals.mean(), requires_grad=True)


UNARY = {
    "relu": lambda x: ad.relu(x),
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
    "exp": ad.exp,
    "square": ad.square,
    "softmax": ad.softmax,
    "log_softmax": ad.log_softmax,
    "sum_axis": lambda x: ad.sum_(x, axis=0),
    "mean": lambda x: ad.mean(x, axis=-1),
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "transpose": lambda x: ad.transpose(x, (1, 0)),
    "slice": lambda x: x[1:, ::2],
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = leaf(rng, 4, 5, lo=0.05)
        w = rng.normal(size=UNARY[name](x).shape)
        err = max_relative_error(lambda: ad.sum_(ad.mul(UNARY[name](x), w)), [x])
        assert err < 1e-4, (name, seed, err)


def test_log_gradient():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
        w = rng.normal(size=(3, 4))
        assert max_relative_error(lambda: ad.sum_(ad.mul(ad.log(x), w)), [x]) < 1e-4
        y = Tensor(rng.uniform(-0.5, 2.0, size=(3, 4)), requires_grad=True)
        assert max_relative_error(lambda: ad.sum_(ad.mul(ad.log1p(y), w)), [y]) < 1e-4


BINARY = {
    "add": (ad.add, (3, 4), (4,)),
    "sub": (ad.sub, (3, 4), (3, 1)),
    "mul": (ad.mul, (3, 4), (3, 4)),
    "div": (ad.div, (3, 4), (1, 4)),
    "matmul": (ad.matmul, (3, 4), (4, 5)),
    "batched_matmul": (ad.matmul, (2, 3, 4), (4, 2)),
    "vector_matmul": (ad.matmul, (4,), (4, 5)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    fn, sa, sb = BINARY[name]
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        a = leaf(rng, *sa)
        b = leaf(rng, *sb, lo=0.5) if name == "div" else leaf(rng, *sb)
        w = rng.normal(size=fn(a, b).shape)
        err = max_relative_error(lambda: ad.sum_(ad.mul(fn(a, b), w)), [a, b])
        assert err < 1e-4, (name, seed, err)


def test_concat_stack_gather_gradients():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
        table = leaf(rng, 6, 3)
        idx = rng.integers(6, size=(2, 4))  # repeated rows exercise scatter-add

        def f():
            c = ad.concat([a, b], axis=1)
            s = ad.stack([a, a], axis=0)
            g = ad.gather_rows(table, idx)
            return ad.add(ad.add(weighted_sum(c, np.random.default_rng(seed)),
                                 weighted_sum(s, np.random.default_rng(seed + 1))),
                          weighted_sum(g, np.random.default_rng(seed + 2)))

        assert max_relative_error(f, [a, b, table]) < 1e-4


def test_max_and_maxpool_gradients():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = spread(rng, (3, 5))
        w = rng.normal(size=(3,))
        assert max_relative_error(lambda: ad.sum_(ad.mul(ad.max_(x, axis=1), w)), [x]) < 1e-4
        img = spread(rng, (1, 4, 4, 2))
        wp = rng.normal(size=(1, 2, 2, 2))
        assert max_relative_error(lambda: ad.sum_(ad.mul(ad.maxpool2d(img, 2), wp)), [img]) < 1e-4


def test_conv2d_gradients():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = leaf(rng, 2, 4, 4, 2)
        k = leaf(rng, 3, 3, 2, 2)
        w = rng.normal(size=(2, 4, 4, 2))
        assert max_relative_error(lambda: ad.sum_(ad.mul(ad.conv2d(x, k), w)), [x, k]) < 1e-4


def _conv_oracle(x, w):
    """Direct loop over output pixels with zero padding."""
    n, h, wd, _ = x.shape
    kh, kw, _, o = w.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    out = np.zeros((n, h, wd, o))
    for b in range(n):
        for i in range(h):
            for j in range(wd):
                out[b, i, j] = np.einsum("abc,abco->o", xp[b, i:i + kh, j:j + kw], w)
    return out


@pytest.mark.parametrize("kernel", [(3, 3), (1, 1), (5, 3)])
def test_conv2d_matches_direct_loop(kernel):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 7, 3))
    w = rng.normal(size=kernel + (3, 4))
    got = ad.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(got, _conv_oracle(x, w), atol=1e-12)


def test_conv2d_rejects_bad_shapes():
    with pytest.raises(ShapeError, match="channels"):
        ad.conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 1))))
    with pytest.raises(ShapeError, match="odd"):
        ad.conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((2, 2, 3, 1))))


def test_maxpool_forward_and_ties():
    x = Tensor(np.array([[1.0, 1.0], [1.0, 1.0]]).reshape(1, 2, 2, 1), requires_grad=True)
    y = ad.maxpool2d(x, 2)
    assert y.data.item() == 1.0
    backward(ad.sum_(y))
    assert x.grad.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_composite_graph_gradient():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x, w1, w2 = leaf(rng, 3, 4), leaf(rng, 4, 5), leaf(rng, 5, 2)

        def f():
            h = ad.tanh(ad.matmul(x, w1))
            z = ad.softmax(ad.matmul(ad.mul(h, ad.sigmoid(h)), w2))
            return ad.mean(ad.square(ad.sub(z, 0.3)))

        assert max_relative_error(f, [x, w1, w2]) < 1e-4


# ---------------------------------------------------------------- values


def test_documented_examples():
    assert ad.sigmoid(Tensor(np.zeros(1))).data.tolist() == [0.5]
    np.testing.assert_array_equal(ad.softmax(Tensor(np.full(3, 2.5))).data, np.full(3, 1 / 3))
    out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))


def test_backward_examples():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    grads = backward(ad.sum_(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    assert grads[x.node_id].tolist() == [2.0, 4.0]
    w = Tensor(np.array(3.0), requires_grad=True)
    backward(ad.mul(ad.sigmoid(Tensor(np.zeros(()))), w))
    assert w.grad == 0.5


def test_loss_gradient_is_one():
    x = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    y = ad.sum_(ad.tanh(x))
    backward(y)
    assert y.grad == 1.0


def test_every_reachable_tensor_gets_gradient():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 2, 3), leaf(rng, 3, 2)
    mid = ad.matmul(a, b)
    act = ad.relu(mid)
    loss = ad.sum_(act)
    backward(loss)
    for t in (a, b, mid, act):
        assert t.grad is not None and t.grad.shape == t.shape


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(BackwardError, match="scalar"):
        backward(ad.mul(x, 2.0))
    loss = ad.sum_(ad.mul(x, x))
    backward(loss)
    with pytest.raises(BackwardError, match="twice|consumed|new forward"):
        backward(loss)


def test_shape_errors_name_op_and_dims():
    with pytest.raises(ShapeError, match=r"matmul.*3.*5"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((5, 2))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_apply_op_dispatch():
    out = apply_op("add", [Tensor(np.ones(2)), Tensor(np.ones(2))])
    assert out.data.tolist() == [2.0, 2.0]
    out = apply_op("concat", [Tensor(np.ones(2)), Tensor(np.zeros(1))], axis=0)
    assert out.shape == (3,)
    with pytest.raises(UnknownOpError, match="frobnicate"):
        apply_op("frobnicate", [Tensor(np.ones(2))])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = ad.mul(x, 3.0)
    assert not y.requires_grad
    assert ad.mul(x, 3.0).requires_grad


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(3)
    x, w = leaf(rng, 4, 6), leaf(rng, 6, 3)
    runs = []
    for _ in range(2):
        x.grad = w.grad = None
        y = ad.sum_(ad.log_softmax(ad.matmul(ad.tanh(x), w)))
        backward(y)
        runs.append((y.data.copy(), x.grad.copy(), w.grad.copy()))
    for a, b in zip(*runs):
        assert np.array_equal(a, b)


finite = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 16), elements=st.floats(-500, 500, allow_nan=False)))
def test_sigmoid_and_softplus_ranges(x):
    sg = ad.sigmoid(Tensor(x)).data
    sp = ad.softplus(Tensor(x)).data
    assert np.all(np.isfinite(sg)) and np.all(np.isfinite(sp))
    assert np.all(sg >= 0.0) and np.all(sg <= 1.0)
    moderate = np.abs(x) < 30
    assert np.all((sg[moderate] > 0.0) & (sg[moderate] < 1.0))
    assert np.all(sp[x > -700] > 0.0)
