import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from itl_lime.encoder import (ContrastiveConfig, EncodedMarginals, EncoderNet, _n_corrupt,
                              contrastive_step, corrupt, embed, info_nce, kernel_weights,
                              train_encoder, weigh)
from itl_lime.errors import NonFiniteInput, ShapeMismatch, TooFewInstances, UntrainedNet
from itl_lime.tabular import NUMERIC, Dataset, FeatureSchema, FeatureSpec, fit_encoding, marginals
from itl_lime.transfer import TARGET, UnifiedNeighborhood
from oracles import central_diff, info_nce_direct, max_rel_error


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def unified_from(ds, state):
    X = state.encode_rows(ds.rows)
    return UnifiedNeighborhood(X, (TARGET,) * ds.n, 0, tuple(range(ds.n)), (), ds)


def test_info_nce_equal_similarities_is_zero():
    z = unit_rows(np.random.default_rng(0), 5, 3)
    zt = np.repeat(z[:1], 5, axis=0) * 0 + np.array([1.0, 0, 0])
    z = np.tile([0.0, 1.0, 0.0], (5, 1))  # orthogonal to every corrupted row
    loss, _, _ = info_nce(z, zt, 1.0)
    assert abs(loss) <= 1e-9


def test_info_nce_identity_case():
    z = np.eye(2)
    loss, _, _ = info_nce(z, z, 1.0)
    direct = info_nce_direct(z, z, 1.0)
    assert abs(loss - direct) <= 1e-9
    assert abs(loss - -math.log(math.e / (0.5 * (math.e + 1)))) <= 1e-12
    assert loss == pytest.approx(-0.3800, abs=5e-4)  # the quoted figure is rounded


@given(st.integers(2, 6), st.integers(2, 5), st.floats(0.2, 2.0), st.integers(0, 10_000))
def test_info_nce_matches_direct_loop(n, d, tau, seed):
    rng = np.random.default_rng(seed)
    z, zt = unit_rows(rng, n, d), unit_rows(rng, n, d)
    assert info_nce(z, zt, tau)[0] == pytest.approx(info_nce_direct(z, zt, tau), abs=1e-9)


def test_info_nce_gradients():
    rng = np.random.default_rng(3)
    z, zt = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
    _, gz, gzt = info_nce(z, zt, 0.7)
    params = {"z": z.copy(), "zt": zt.copy()}
    num = central_diff(lambda: info_nce(params["z"], params["zt"], 0.7)[0], params)
    assert max_rel_error({"z": gz, "zt": gzt}, num) < 1e-4


def test_info_nce_errors():
    with pytest.raises(ShapeMismatch):
        info_nce(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(NonFiniteInput):
        info_nce(np.full((2, 2), np.nan), np.zeros((2, 2)))


@pytest.mark.parametrize("p,hidden,tau,seed", [(3, 5, 1.0, 0), (5, 4, 0.5, 1), (4, 6, 2.0, 2)])
def test_full_network_gradient_check(p, hidden, tau, seed):
    rng = np.random.default_rng(seed)
    cfg = ContrastiveConfig(hidden=hidden, dropout=0.0, seed=seed)
    net = EncoderNet.init(p, cfg)
    # random biases keep units active so every block carries gradient signal
    for k in net.params:
        net.params[k][...] = rng.normal(0.0, 0.6, size=net.params[k].shape)
    x, xt = rng.normal(size=(4, p)), rng.normal(size=(4, p))
    _, grads = contrastive_step(net, x, xt, tau)
    num = central_diff(lambda: contrastive_step(net, x, xt, tau)[0], net.params)
    assert set(grads) == set(net.params)
    assert max_rel_error(grads, num) < 1e-4


def test_architecture_shapes():
    net = EncoderNet.init(7, ContrastiveConfig(hidden=16))
    enc = [k for k in net.params if k.startswith("enc_W")]
    head = [k for k in net.params if k.startswith("head_W")]
    assert len(enc) == 4 and len(head) == 2
    assert net.params["enc_W0"].shape == (7, 16) and net.params["head_W1"].shape == (16, 16)


def test_embed_normalisation_and_zero_net():
    net = EncoderNet.init(3, ContrastiveConfig(hidden=8))
    X = np.random.default_rng(0).normal(size=(10, 3))
    z = embed(net, X, use_head=True)
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)
    assert np.array_equal(embed(net, X[:1]), embed(net, X[:1]))
    for k in net.params:
        net.params[k][...] = 0.0
    assert np.array_equal(embed(net, X), np.zeros((10, 8)))
    with pytest.raises(ShapeMismatch):
        embed(net, np.zeros((1, 4)))


def test_corruption_counts(mixed_dataset):
    assert _n_corrupt(0.1, 10) == 1 and _n_corrupt(0.6, 10) == 6
    X, state = fit_encoding(mixed_dataset)
    pools = EncodedMarginals(marginals(mixed_dataset), state)
    a = corrupt(X.values, pools, 0.6, np.random.default_rng(4), state)
    b = corrupt(X.values, pools, 0.6, np.random.default_rng(4), state)
    assert np.array_equal(a, b)
    g = state.groups[2]
    assert np.array_equal(a[:, g.start:g.stop].sum(axis=1), np.ones(len(a)))
    changed = np.abs(a - X.values) > 0
    per_feature = np.zeros((len(a), 3), dtype=bool)
    np.logical_or.at(per_feature.T, state.column_map, changed.T)
    assert per_feature.sum(axis=1).max() <= _n_corrupt(0.6, 3)


def test_corrupt_replaces_exactly_ceil_features():
    # all-distinct pools make every replacement visible
    schema = FeatureSchema(tuple(FeatureSpec(f"f{j}", NUMERIC) for j in range(10)))
    base = Dataset(schema, np.arange(50, dtype=float).reshape(5, 10).astype(object))
    _, state = fit_encoding(base)
    other = Dataset(schema, (np.arange(50, dtype=float).reshape(5, 10) + 1000).astype(object))
    pools = EncodedMarginals(marginals(other), state)
    X = state.encode_rows(base.rows)
    out = corrupt(X, pools, 0.6, np.random.default_rng(0), state)
    assert list((out != X).sum(axis=1)) == [6] * 5


def blob_unified(n_per=16, d=10, seed=0):
    rng = np.random.default_rng(seed)
    schema = FeatureSchema(tuple(FeatureSpec(f"f{j}", NUMERIC) for j in range(d)))
    X = np.concatenate([c + rng.normal(0, 0.5, (n_per, d)) for c in rng.normal(0, 3, (4, d))])
    ds = Dataset(schema, X.astype(object))
    _, state = fit_encoding(ds)
    return unified_from(ds, state), state


def test_training_decreases_loss_and_is_deterministic():
    uni, state = blob_unified()
    assert len(uni) == 64
    cfg = ContrastiveConfig(hidden=32, epochs=50, early_stop_patience=100, seed=5)
    net = train_encoder(uni, None, cfg, state)
    assert net.trained and len(net.loss_history) == 50
    assert net.loss_history[-1] <= net.loss_history[0]
    again = train_encoder(uni, None, cfg, state)
    assert all(np.array_equal(net.params[k], again.params[k]) for k in net.params)
    round_trip = EncoderNet.from_json(net.to_json())
    assert all(np.array_equal(net.params[k], round_trip.params[k]) for k in net.params)


def test_small_set_trains_full_batch(mixed_dataset):
    _, state = fit_encoding(mixed_dataset)
    uni = unified_from(mixed_dataset.subset(range(5)), state)
    net = train_encoder(uni, None, ContrastiveConfig(hidden=8, epochs=3), state)
    assert len(net.loss_history) == 3


def test_too_few_instances(mixed_dataset):
    _, state = fit_encoding(mixed_dataset)
    with pytest.raises(TooFewInstances):
        train_encoder(unified_from(mixed_dataset.subset([0]), state), None, ContrastiveConfig(), state)


def test_separable_clusters_embed_apart():
    rng = np.random.default_rng(0)
    schema = FeatureSchema(tuple(FeatureSpec(f"f{j}", NUMERIC) for j in range(4)))
    X = np.concatenate([rng.normal(-3, 0.3, (32, 4)), rng.normal(3, 0.3, (32, 4))])
    ds = Dataset(schema, X.astype(object))
    _, state = fit_encoding(ds)
    uni = unified_from(ds, state)
    net = train_encoder(uni, None, ContrastiveConfig(hidden=16, epochs=30, seed=1), state)
    E = embed(net, uni.instances, use_head=False)
    D = np.sqrt(((E[:, None] - E[None]) ** 2).sum(-1))
    intra = (D[:32, :32].mean() + D[32:, 32:].mean()) / 2
    assert intra < D[:32, 32:].mean()


def test_kernel_weights():
    w, s = kernel_weights(np.array([0.0, 1.0, 2.0]), 1.0)
    assert w[0] == 1.0 and w[1] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert w[1] == pytest.approx(0.60653, abs=1e-5) and w[1] > w[2] > 0
    w, s = kernel_weights(np.array([1.0, 2.0, 3.0]), "auto")
    assert s == 2.0
    _, s = kernel_weights(np.array([0.0, 0.0, 0.0, 4.0]), "auto")
    assert s == 4.0
    _, s = kernel_weights(np.zeros(3), "auto")
    assert s == 1e-12


def test_weigh_requires_training_and_is_equivariant(mixed_dataset):
    _, state = fit_encoding(mixed_dataset)
    uni = unified_from(mixed_dataset, state)
    net = EncoderNet.init(state.p, ContrastiveConfig(hidden=8))
    with pytest.raises(UntrainedNet):
        weigh(net, uni.instances[0], uni)
    net.trained = True
    wv = weigh(net, uni.instances[0], uni)
    assert wv.weights[0] == 1.0 and np.all(wv.weights > 0) and np.all(wv.weights <= 1)
    perm = np.random.default_rng(0).permutation(len(uni))
    shuffled = UnifiedNeighborhood(uni.instances[perm], uni.origins, 0, uni.target_neighbor_indices)
    assert np.allclose(weigh(net, uni.instances[0], shuffled).weights, wv.weights[perm])


@pytest.mark.parametrize("n,bs", [(33, 32), (65, 32), (64, 32), (10, 32)])
def test_batches_cover_rows_without_singletons(n, bs):
    from itl_lime.encoder import _batches
    chunks = _batches(n, bs, np.random.default_rng(0))
    assert sorted(np.concatenate(chunks).tolist()) == list(range(n))
    assert min(c.size for c in chunks) >= 2
