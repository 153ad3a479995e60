import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefnet.autodiff import tensor as ad
from beliefnet.autodiff.gradcheck import max_relative_error, sampled_relative_error
from beliefnet.autodiff.tensor import Tensor
from beliefnet.model import (
    VARIANTS,
    ModelConfig,
    RolloutError,
    encode_frames,
    encode_posterior,
    fuse_decode,
    graph_message_pass,
    init_params,
    prior_step,
    recurrence,
    rollout,
    sample_cells,
)
from beliefnet.train import elbo_loss

MICRO = dict(hidden=8, latent=4, embed=4, mlp_hidden=8, att_hidden=4, channels=(2, 4), horizon=1)


def micro(variant="graph-vrnn", k=2, **kw):
    return init_params(ModelConfig(variant=variant, k=k, **{**MICRO, **kw}), seed=3)


def jitter(p, scale=0.05, seed=11):
    """Move zero-initialised biases off the ReLU kink so finite differences are smooth."""
    rng = np.random.default_rng(seed)
    for t in p.named().values():
        t.data += rng.normal(scale=scale, size=t.shape)
    return p


def grids(b, t, seed=0):
    return np.random.default_rng(seed).uniform(size=(b, t, 32, 48, 3))


def targets(b, steps, k, seed=0):
    return np.random.default_rng(seed).integers(384, size=(b, steps, k))


# ---------------------------------------------------------------- rollout


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("mode", ["train", "filter", "sample"])
def test_heatmaps_normalized_for_every_variant(variant, mode):
    p = micro(variant, k=3, horizon=2)
    out = rollout(p, grids(2, 2), targets(2, 4, 3), observed=2, horizon=2, mode=mode,
                  rng=np.random.default_rng(1))
    heat = out.heat_array()
    assert heat.shape == (2, 4, 3, 384)
    assert np.all(heat >= 0)
    np.testing.assert_allclose(heat.sum(axis=-1), 1.0, atol=1e-9)
    assert len(out.samples) == 4 and out.samples[0].shape == (2, 3)


def test_prior_and_posterior_presence():
    out = rollout(micro("graph-vrnn", horizon=2), grids(2, 2), targets(2, 4, 2), observed=2, horizon=2,
                  mode="train")
    assert all(q is not None for q in out.posteriors[:2])
    assert all(q is None for q in out.posteriors[2:])
    assert out.priors[0].mu.shape == (2, 2, 4)
    shared = rollout(micro("vrnn-shared", horizon=2), grids(2, 2), targets(2, 4, 2), observed=2,
                     horizon=2, mode="train")
    assert shared.priors[0].mu.shape == (2, 4)
    plain = rollout(micro("graph-rnn", horizon=2), grids(2, 2), observed=2, horizon=2)
    assert all(q is None for q in plain.priors)


def test_filter_is_deterministic():
    p = micro()
    a = rollout(p, grids(2, 2), observed=2, horizon=1).heat_array()
    b = rollout(p, grids(2, 2), observed=2, horizon=1, rng=np.random.default_rng(99)).heat_array()
    assert np.array_equal(a, b)


def test_sample_mode_depends_on_rng():
    p = micro(horizon=3)
    run = lambda s: np.stack(rollout(p, grids(1, 2), observed=2, horizon=3, mode="sample",  # noqa: E731
                                     rng=np.random.default_rng(s)).samples)
    assert np.array_equal(run(5), run(5))
    assert not all(np.array_equal(run(5), run(s)) for s in range(6, 10))


def test_rollout_errors():
    p = micro()
    with pytest.raises(RolloutError, match="mode"):
        rollout(p, grids(1, 2), observed=2, horizon=1, mode="dream")
    with pytest.raises(RolloutError, match="targets"):
        rollout(p, grids(1, 2), observed=2, horizon=1, mode="train")
    with pytest.raises(RolloutError, match="grids"):
        rollout(p, grids(1, 3), observed=2, horizon=1)
    with pytest.raises(RolloutError, match="targets"):
        rollout(p, grids(1, 2), targets(1, 2, 2), observed=2, horizon=1)
    with pytest.raises(ValueError, match="variant"):
        ModelConfig(variant="transformer")


def test_same_seed_same_shared_weights():
    a, b = micro("graph-vrnn"), micro("graph-rnn")
    na, nb = a.named(), b.named()
    assert set(na) == set(nb)
    for n in na:
        assert np.array_equal(na[n].data, nb[n].data)
    assert not any(n.startswith(("prior.", "enc.")) for n in b.used())
    assert not any(n.startswith(("edge.", "node.")) for n in micro("indep-rnn").used())


def test_sample_cells_follows_distribution():
    heat = np.array([[0.0, 0.25, 0.75]])
    draws = sample_cells(np.repeat(heat, 20000, axis=0), np.random.default_rng(0))
    freq = np.bincount(draws, minlength=3) / len(draws)
    np.testing.assert_allclose(freq, heat[0], atol=0.01)
    assert freq[0] == 0.0


# ---------------------------------------------------------------- message passing


@pytest.mark.parametrize("kind", ["graph", "social"])
@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.permutations(range(6)), st.integers(0, 10**6))
def test_message_pass_permutation_equivariant_exactly(kind, k, perm6, seed):
    perm = [i for i in perm6 if i < k]
    p = micro("graph-vrnn" if kind == "graph" else "social-rnn", k=k)
    hs = np.random.default_rng(seed).normal(size=(2, k, 8))
    base = graph_message_pass(p, Tensor(hs), kind).data
    moved = graph_message_pass(p, Tensor(hs[:, perm]), kind).data
    assert np.array_equal(moved, base[:, perm])


def test_message_pass_mean_matches_loop():
    p = micro(k=4)
    hs = np.random.default_rng(1).normal(size=(1, 4, 8))
    out = graph_message_pass(p, Tensor(hs)).data[0]
    w0, b0 = p.edge.weights[0].data, p.edge.biases[0].data
    w1, b1 = p.edge.weights[1].data, p.edge.biases[1].data
    for i in range(4):
        msgs = [np.maximum(np.concatenate([hs[0, i], hs[0, j]]) @ w0 + b0, 0) @ w1 + b1
                for j in range(4) if j != i]
        m = np.mean(msgs, axis=0)
        expect = hs[0, i] + p.node(Tensor(np.concatenate([hs[0, i], m])[None])).data[0]
        np.testing.assert_allclose(out[i], expect, atol=1e-12)


def test_single_agent_message_is_zero():
    p = micro(k=1)
    hs = np.random.default_rng(0).normal(size=(1, 1, 8))
    expect = hs + p.node(Tensor(np.concatenate([hs, np.zeros_like(hs)], axis=-1))).data
    np.testing.assert_allclose(graph_message_pass(p, Tensor(hs)).data, expect, atol=1e-15)


# ---------------------------------------------------------------- subnet gradients


def weighted(x, seed=0):
    return ad.sum_(ad.mul(x, np.random.default_rng(seed).normal(size=x.shape)))


def test_prior_gradient():
    p = micro()
    h = Tensor(np.random.default_rng(0).normal(size=(2, 2, 8)), True)
    f = lambda: ad.add(weighted(prior_step(p, h).mu, 1), weighted(prior_step(p, h).sigma, 2))  # noqa: E731
    assert max_relative_error(f, [h, *p.prior.parameters().values()]) < 1e-4


def test_posterior_gradient():
    p = micro()
    rng = np.random.default_rng(1)
    h = Tensor(rng.normal(size=(2, 2, 8)), True)
    cells = rng.integers(384, size=(2, 2))
    f = lambda: weighted(encode_posterior(p, h, cells).mu)  # noqa: E731
    assert max_relative_error(f, [h, *p.enc.parameters().values()]) < 1e-4
    assert sampled_relative_error(f, [p.table], per_param=20) < 1e-4


def test_frame_encoder_gradient():
    p = init_params(ModelConfig(k=2, **{**MICRO, "resolution": (8, 8)}), seed=0)
    for t in p.conv.parameters().values():
        t.data += np.random.default_rng(2).normal(scale=0.05, size=t.shape)
    g = np.random.default_rng(3).uniform(size=(2, 8, 8, 3))
    f = lambda: weighted(encode_frames(p, g))  # noqa: E731
    params = [*p.conv.parameters().values(), p.head_w, p.head_b]
    assert max_relative_error(f, params) < 1e-4


def test_fusion_decoder_gradient():
    p = jitter(micro())
    rng = np.random.default_rng(4)
    v = Tensor(rng.normal(size=(2, 2, 384)), True)
    h = Tensor(rng.normal(size=(2, 2, 8)), True)
    stats = Tensor(rng.normal(size=(2, 2, 8)), True)
    prev = Tensor(rng.dirichlet(np.ones(384), size=(2, 2)), True)
    f = lambda: weighted(fuse_decode(p, v, h, stats, prev)[0])  # noqa: E731
    small = [h, stats, p.dv_w, *p.sv.parameters().values(), *p.sh.parameters().values()]
    assert max_relative_error(f, small) < 1e-4
    big = [v, prev, p.dv_b, *p.dh.parameters().values()]
    assert sampled_relative_error(f, big, per_param=10) < 1e-4


@pytest.mark.parametrize("kind", ["graph", "social"])
def test_relation_network_gradient(kind):
    p = micro("graph-vrnn" if kind == "graph" else "social-rnn", k=3)
    hs = Tensor(np.random.default_rng(5).normal(size=(2, 3, 8)), True)
    f = lambda: weighted(graph_message_pass(p, hs, kind))  # noqa: E731
    assert max_relative_error(f, [hs, *p.edge.parameters().values(), *p.node.parameters().values()]) < 1e-4


def test_recurrence_gradient():
    p = micro()
    rng = np.random.default_rng(6)
    h = Tensor(rng.normal(size=(2, 2, 8)), True)
    z = Tensor(rng.normal(size=(2, 2, 4)), True)
    cells = rng.integers(384, size=(2, 2))
    f = lambda: weighted(recurrence(p, cells, z, h))  # noqa: E731
    assert max_relative_error(f, [h, z, *p.gru.parameters().values()]) < 1e-4
    assert sampled_relative_error(f, [p.table], per_param=20) < 1e-4


def end_to_end_loss(p, g, tg):
    out = rollout(p, g, tg, observed=2, horizon=1, mode="train", rng=np.random.default_rng(7))
    return elbo_loss(out, tg, [1.0, 1.0, 0.8], beta=0.5).total


@pytest.mark.parametrize("variant", ["graph-vrnn", "vrnn-shared", "visual-only"])
def test_end_to_end_gradient(variant):
    """Two agents, three steps, H=8, Z=4; every parameter tensor is probed."""
    p = jitter(micro(variant))
    g, tg = grids(1, 2, seed=8), targets(1, 3, 2, seed=8)
    named = p.named()
    params = [named[n] for n in p.used()]
    err = sampled_relative_error(lambda: end_to_end_loss(p, g, tg), params, per_param=4)
    assert err < 1e-3


# ---------------------------------------------------------------- variant behaviour


def test_visual_only_has_no_memory():
    p = micro("visual-only", horizon=2)
    g = grids(1, 3)
    base = rollout(p, g, observed=3, horizon=2).heat_array()
    g2 = g.copy()
    g2[:, 0] = 0.0
    moved = rollout(p, g2, observed=3, horizon=2).heat_array()
    assert not np.array_equal(base[:, 0], moved[:, 0])
    assert np.array_equal(base[:, 2:], moved[:, 2:])


def test_deterministic_variant_ignores_rng():
    p = micro("graph-rnn", horizon=2)
    g, tg = grids(2, 2), targets(2, 4, 2)
    for mode in ("filter", "train"):
        a = rollout(p, g, tg, observed=2, horizon=2, mode=mode, rng=np.random.default_rng(1)).heat_array()
        b = rollout(p, g, tg, observed=2, horizon=2, mode=mode, rng=np.random.default_rng(2)).heat_array()
        assert np.array_equal(a, b)


def test_variational_forecasts_depend_on_seed():
    p = jitter(micro("graph-vrnn", horizon=3), scale=0.3)
    g = grids(1, 2)
    run = lambda s: rollout(p, g, observed=2, horizon=3, mode="sample",  # noqa: E731
                            rng=np.random.default_rng(s)).heat_array()
    a, b = run(1), run(2)
    assert np.array_equal(a, run(1))
    assert np.array_equal(a[:, 0], b[:, 0])  # first step precedes any sample
    assert 0.5 * np.abs(a[:, 2:] - b[:, 2:]).sum(axis=-1).max() > 0


@pytest.mark.parametrize("variant", ["graph-rnn", "graph-vrnn", "indep-rnn", "social-rnn"])
def test_agent_permutation_permutes_beliefs(variant):
    """Permuting agents together with their encoder heads permutes every filter-mode heatmap."""
    p = jitter(micro(variant, k=3, horizon=2), scale=0.1)
    q = micro(variant, k=3, horizon=2)
    for name, t in p.named().items():
        q.named()[name].data[...] = t.data
    perm = [2, 0, 1]
    q.head_w.data[...] = p.head_w.data[perm]
    q.head_b.data[...] = p.head_b.data[perm]
    g = grids(2, 2, seed=4)
    a = rollout(p, g, observed=2, horizon=2).heat_array()
    b = rollout(q, g, observed=2, horizon=2).heat_array()
    assert np.array_equal(b, a[:, :, perm])
