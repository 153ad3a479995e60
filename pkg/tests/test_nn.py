import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefnet.autodiff import tensor as ad
from beliefnet.autodiff.gradcheck import max_relative_error
from beliefnet.autodiff.nn import (
    SIGMA_FLOOR,
    ConvParams,
    GaussianStats,
    GRUParams,
    Subnet,
    conv_encoder,
    gaussian_head,
    gaussian_kl,
    glorot,
    gru_cell,
    reparameterize,
)
from beliefnet.autodiff.tensor import ShapeError, Tensor


def stats(mu, sigma, grad=False):
    return GaussianStats(Tensor(np.asarray(mu, float), grad), Tensor(np.asarray(sigma, float), grad))


def test_glorot_bounds():
    rng = np.random.default_rng(0)
    w = glorot(rng, 30, 20)
    s = np.sqrt(6.0 / 50)
    assert w.shape == (30, 20) and np.abs(w.data).max() <= s
    assert w.requires_grad


def test_subnet_shapes_and_errors():
    rng = np.random.default_rng(0)
    net = Subnet.create(rng, [4, 8, 3], ["relu", "linear"])
    assert net(Tensor(np.ones((5, 4)))).shape == (5, 3)
    assert set(net.parameters()) == {"w0", "b0", "w1", "b1"}
    with pytest.raises(ShapeError):
        net(Tensor(np.ones((5, 3))))
    with pytest.raises(ValueError):
        Subnet.create(rng, [4, 8, 3], ["relu"])


def test_subnet_gradient():
    rng = np.random.default_rng(1)
    net = Subnet.create(rng, [3, 6, 2], ["tanh", "linear"])
    x = Tensor(rng.normal(size=(4, 3)))
    err = max_relative_error(lambda: ad.sum_(ad.square(net(x))), list(net.parameters().values()))
    assert err < 1e-4


# ---------------------------------------------------------------- GRU


def zero_gru(in_dim, hidden):
    return GRUParams(Tensor(np.zeros((in_dim, 3 * hidden)), True), Tensor(np.zeros((hidden, 3 * hidden)), True),
                     Tensor(np.zeros(3 * hidden), True))


def test_gru_zero_params_halves_state():
    h = np.array([0.4, -1.0, 2.0])
    out = gru_cell(Tensor(np.ones(2)), Tensor(h), zero_gru(2, 3))
    np.testing.assert_allclose(out.data, 0.5 * h, atol=1e-15)


def test_gru_saturated_update_gate_carries_state():
    rng = np.random.default_rng(0)
    p = GRUParams.create(rng, 2, 3)
    p.b.data[:3] = 50.0  # update gate -> 1
    h = rng.normal(size=3)
    out = gru_cell(Tensor(rng.normal(size=2)), Tensor(h), p)
    np.testing.assert_allclose(out.data, h, atol=1e-3)


def test_gru_gradient_and_shape_errors():
    rng = np.random.default_rng(2)
    p = GRUParams.create(rng, 3, 4)
    x = Tensor(rng.normal(size=(2, 3)), True)
    h = Tensor(rng.normal(size=(2, 4)), True)
    w = rng.normal(size=(2, 4))
    f = lambda: ad.sum_(ad.mul(gru_cell(x, h, p), w))  # noqa: E731
    assert max_relative_error(f, [x, h, *p.parameters().values()]) < 1e-4
    with pytest.raises(ShapeError, match="gru_cell"):
        gru_cell(Tensor(np.ones(2)), h, p)


# ---------------------------------------------------------------- Gaussians


def test_gaussian_head_applies_floor():
    raw = Tensor(np.array([[0.5, -1000.0]]))
    s = gaussian_head(raw)
    assert s.mu.data.item() == 0.5
    assert s.sigma.data.item() >= SIGMA_FLOOR
    with pytest.raises(ShapeError):
        GaussianStats(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_reparameterize_examples():
    s = stats([3.0], [SIGMA_FLOOR])
    for seed in range(5):
        assert abs(reparameterize(s, np.random.default_rng(seed)).data[0] - 3.0) < 1e-3
    a = reparameterize(stats([0.2, 1.0], [0.5, 2.0]), np.random.default_rng(9)).data
    b = reparameterize(stats([0.2, 1.0], [0.5, 2.0]), np.random.default_rng(9)).data
    assert np.array_equal(a, b)


def test_reparameterize_monte_carlo_mean():
    sigma = 0.7
    z = reparameterize(stats(np.full(100_000, 1.5), np.full(100_000, sigma)), np.random.default_rng(0)).data
    assert abs(z.mean() - 1.5) < 0.01 * sigma


def test_reparameterize_gradient_flows_to_mu_and_sigma():
    s = stats([0.1, 0.2], [0.3, 0.4], grad=True)
    z = reparameterize(s, np.random.default_rng(1))
    ad.backward(ad.sum_(z))
    np.testing.assert_array_equal(s.mu.grad, [1.0, 1.0])
    assert s.sigma.grad is not None and np.all(s.sigma.grad != 0)


def test_kl_examples():
    q = stats([0.3, -2.0], [0.5, 1.7])
    assert gaussian_kl(q, q).data.item() == 0.0
    assert abs(gaussian_kl(stats([1.0], [1.0]), stats([0.0], [1.0])).data.item() - 0.5) < 1e-12
    with pytest.raises(ShapeError, match="length"):
        gaussian_kl(stats([0.0], [1.0]), stats([0.0, 1.0], [1.0, 1.0]))


def kl_monte_carlo(mq, sq, mp, sp, n=100_000, seed=0):
    """Average of log q(z) - log p(z) over z ~ q, written without the tape."""
    z = np.random.default_rng(seed).normal(mq, sq, size=(n, len(mq)))

    def logpdf(x, m, s):
        return -0.5 * ((x - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)

    return float((logpdf(z, mq, sq) - logpdf(z, mp, sp)).sum(axis=1).mean())


@pytest.mark.parametrize("seed", range(4))
def test_kl_matches_monte_carlo(seed):
    rng = np.random.default_rng(100 + seed)
    mq, mp = rng.normal(size=3), rng.normal(size=3)
    sq, sp = rng.uniform(0.5, 1.5, size=3), rng.uniform(0.5, 1.5, size=3)
    exact = gaussian_kl(stats(mq, sq), stats(mp, sp)).data.item()
    mc = kl_monte_carlo(mq, sq, mp, sp, seed=seed)
    assert abs(mc - exact) / exact < 0.01


def test_kl_gradient():
    rng = np.random.default_rng(4)
    q = stats(rng.normal(size=4), rng.uniform(0.5, 2, 4), grad=True)
    p = stats(rng.normal(size=4), rng.uniform(0.5, 2, 4), grad=True)
    err = max_relative_error(lambda: gaussian_kl(q, p), [q.mu, q.sigma, p.mu, p.sigma])
    assert err < 1e-4


pos = st.floats(1e-3, 10.0)
loc = st.floats(-10.0, 10.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(loc, pos, loc, pos), min_size=1, max_size=6))
def test_kl_non_negative(rows):
    mq, sq, mp, sp = (np.array(c) for c in zip(*rows))
    assert gaussian_kl(stats(mq, sq), stats(mp, sp)).data.item() >= 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(loc, pos), min_size=1, max_size=6), st.floats(1e-2, 1.0), st.integers(0, 5))
def test_kl_zero_iff_equal(rows, delta, which):
    mu, sigma = (np.array(c) for c in zip(*rows))
    assert gaussian_kl(stats(mu, sigma), stats(mu, sigma)).data.item() == 0.0
    i = which % len(mu)
    mu2 = mu.copy()
    mu2[i] += delta * sigma[i]
    assert gaussian_kl(stats(mu2, sigma), stats(mu, sigma)).data.item() > 0.0
    s2 = sigma.copy()
    s2[i] *= 1.0 + delta
    assert gaussian_kl(stats(mu, s2), stats(mu, sigma)).data.item() > 0.0


# ---------------------------------------------------------------- conv encoder


def test_conv_encoder_zero_grid_zero_features():
    p = ConvParams.create(np.random.default_rng(0), 3, (8, 16), (32, 48))
    feat = conv_encoder(Tensor(np.zeros((1, 32, 48, 3))), p, global_pool=True)
    assert feat.shape == (1, 16)
    assert np.all(feat.data == 0.0)


def test_conv_encoder_deterministic_and_shape():
    rng = np.random.default_rng(1)
    p = ConvParams.create(rng, 3, (8, 16), (32, 48))
    g = rng.uniform(size=(2, 32, 48, 3))
    g[1] = g[0]
    out = conv_encoder(Tensor(g), p)
    assert out.shape == (2, 16, 24, 16)
    assert np.array_equal(out.data[0], out.data[1])
    assert np.array_equal(conv_encoder(Tensor(g), p).data, out.data)


def test_conv_encoder_resolution_mismatch():
    p = ConvParams.create(np.random.default_rng(0), 3, (8, 16), (32, 48))
    with pytest.raises(ShapeError, match="resolution"):
        conv_encoder(Tensor(np.zeros((1, 16, 16, 3))), p)


@pytest.mark.parametrize("global_pool", [False, True])
def test_conv_encoder_gradient_8x8(global_pool):
    rng = np.random.default_rng(5)
    p = ConvParams.create(rng, 3, (8, 16), (8, 8))
    for t in (p.b1, p.b2):
        t.data[...] = rng.normal(scale=0.1, size=t.shape)
    g = Tensor(rng.uniform(size=(1, 8, 8, 3)), True)
    out_shape = conv_encoder(g, p, global_pool).shape
    w = rng.normal(size=out_shape)
    err = max_relative_error(lambda: ad.sum_(ad.mul(conv_encoder(g, p, global_pool), w)),
                             [g, *p.parameters().values()])
    assert err < 1e-4
