import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_centroid, brute_force_herding, brute_force_nearest
from trafficcil.binfmt import FormatError
from trafficcil.cilcore import (
    UPDATERS,
    Centroids,
    ExemplarMemory,
    Learner,
    build_memory,
    build_targets,
    class_quotas,
    compute_centroids,
    expand_head,
    herding_select,
    load_memory,
    nmc_classify,
    preallocate_head,
    rebuild_memory,
    save_memory,
    train_upperbound,
    train_upperbound_herded,
    update_fixed_repr,
    update_icarl,
    update_icarlplus,
)
from trafficcil.dataio import SyntheticSpec, generate_synthetic
from trafficcil.features import dataset_arrays, fit_normalizer
from trafficcil.neural import BACKBONE_PARAMS, TrainConfig, init_network, logits
from trafficcil.neural.network import sigmoid

QUICK = TrainConfig(epochs=6, lr_halving_period=3, seed=0)


@pytest.fixture(scope="module")
def six_classes():
    ds = generate_synthetic(SyntheticSpec(6, 40, 17))
    return dataset_arrays(ds, fit_normalizer(ds))


# -- herding ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 6), st.integers(1, 12))
def test_herding_matches_brute_force(seed, n, d, m):
    feats = np.random.default_rng(seed).normal(size=(n, d))
    m = min(m, n)
    assert herding_select(feats, m) == brute_force_herding(feats, m)


def test_herding_caps_at_class_size():
    f = np.random.default_rng(1).normal(size=(4, 3))
    assert sorted(herding_select(f, 10)) == [0, 1, 2, 3]


def test_herding_first_pick_closest_to_mean():
    f = np.array([[0.0, 0.0], [10.0, 0.0], [4.0, 1.0], [6.0, -1.0]])
    # the two closest are equidistant from the mean (5, 0); lowest index wins
    assert herding_select(f, 1) == [2]


def test_herding_duplicates_tie_to_lowest():
    f = np.ones((5, 3))
    assert herding_select(f, 3) == [0, 1, 2]


def test_herding_prefix_property():
    f = np.random.default_rng(0).normal(size=(50, 8))
    full = herding_select(f, 20)
    for m in (1, 5, 13):
        assert herding_select(f, m) == full[:m]


# -- memory ------------------------------------------------------------------

def test_class_quotas():
    q = class_quotas(1000, 12)
    assert sum(q) == 1000
    assert q.count(84) == 4 and q.count(83) == 8
    assert q[:4] == [84] * 4
    assert class_quotas(1000, 10) == [100] * 10


def test_memory_budget_and_prefix(six_classes):
    x, y = six_classes
    net = init_network(6, 0)
    base = y < 4
    mem = build_memory(net, x[base], y[base], 25, 4)
    assert mem.counts() == {0: 7, 1: 6, 2: 6, 3: 6}
    grown = rebuild_memory(mem, net, x[~base], y[~base], 6)
    assert grown.total <= 25
    assert grown.counts() == dict(enumerate(class_quotas(25, 6)))
    for c in range(4):
        k = len(grown.exemplars[c])
        assert np.array_equal(grown.exemplars[c], mem.exemplars[c][:k])
        assert np.array_equal(grown.source_index[c], mem.source_index[c][:k])
    # unchanged class count keeps the memory as-is
    assert rebuild_memory(grown, net, x[:0], y[:0], 6) is grown


def test_memory_budget_below_classes(six_classes):
    x, y = six_classes
    with pytest.raises(ValueError, match="zero quota"):
        build_memory(init_network(6, 0), x, y, 5, 6)


def test_memory_missing_new_class(six_classes):
    x, y = six_classes
    with pytest.raises(ValueError, match="no training samples"):
        build_memory(init_network(7, 0), x, y, 70, 7)


def test_memory_file_round_trip(tmp_path, six_classes):
    x, y = six_classes
    mem = build_memory(init_network(6, 0), x, y, 30, 6)
    save_memory(mem, tmp_path / "m.cilm")
    back = load_memory(tmp_path / "m.cilm")
    assert back.budget == 30 and back.counts() == mem.counts()
    for c in mem.exemplars:
        assert np.array_equal(back.exemplars[c], mem.exemplars[c])
        assert np.array_equal(back.source_index[c], mem.source_index[c])
    (tmp_path / "bad").write_bytes(b"CILF" + (tmp_path / "m.cilm").read_bytes()[4:])
    with pytest.raises(FormatError, match="CILM"):
        load_memory(tmp_path / "bad")


# -- centroids and NMC -------------------------------------------------------

def test_centroids_match_brute_force(six_classes):
    x, y = six_classes
    net = init_network(6, 3)
    mem = build_memory(net, x, y, 30, 6)
    cents = compute_centroids(mem, net)
    from trafficcil.neural import features

    for c in range(6):
        ref = brute_force_centroid(features(net, mem.exemplars[c]).astype(np.float64).tolist())
        assert np.allclose(cents.means[c], ref, atol=1e-9)
    assert np.allclose(np.linalg.norm(cents.means, axis=1), 1)


def test_antipodal_exemplars_have_no_centroid(monkeypatch):
    import trafficcil.cilcore.memory as memory

    monkeypatch.setattr(memory, "features", lambda net, x: x.reshape(len(x), -1))
    ex = np.array([[[1.0, 2.0]], [[-1.0, -2.0]]])
    mem = ExemplarMemory(10, {0: ex}, {0: np.arange(2)})
    with pytest.raises(ValueError, match="centroid undefined"):
        compute_centroids(mem, None)


def test_nmc_matches_brute_force():
    rng = np.random.default_rng(4)
    cents = rng.normal(size=(7, 5))
    cents /= np.linalg.norm(cents, axis=1, keepdims=True)
    feats = rng.normal(size=(600, 5))
    got = nmc_classify(feats, Centroids(cents), chunk=64)
    assert got.tolist() == brute_force_nearest(feats.tolist(), cents.tolist())


def test_nmc_tie_goes_to_lowest_id():
    cents = Centroids(np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))
    assert nmc_classify(np.array([[0.0, 1.0], [1.0, 1.0]]), cents).tolist() == [0, 0]


def test_learner_requires_centroids():
    with pytest.raises(ValueError):
        Learner(init_network(2, 0), "nmc")


# -- head management ---------------------------------------------------------

@pytest.mark.parametrize("k_after", [20, 30, 40])
def test_expand_head_leaves_old_logits_bitwise(k_after):
    net = init_network(10, 5)
    x = np.random.default_rng(5).random((33, 3, 100)).astype(np.float32)
    grown = expand_head(net, k_after - 10)
    z0, z1 = logits(net, x), logits(grown, x)
    assert z1.shape == (33, k_after)
    assert np.array_equal(z0, z1[:, :10])
    assert not z1[:, 10:].any()
    assert not grown.params["head_w"][:, 10:].any()


def test_expand_head_rejects_nonpositive():
    with pytest.raises(ValueError):
        expand_head(init_network(3, 0), 0)


def test_preallocate_silences_spare_units(six_classes):
    x, y = six_classes
    base = y < 4
    learner, _ = train_upperbound(x[base], y[base], 4, QUICK, "sigmoid")
    net, _ = preallocate_head(learner.net, 10, x[base], y[base], QUICK)
    assert net.n_units == 10 and net.active_classes == 4
    spare = sigmoid(logits(net, x[base])[:, 4:].astype(np.float64))
    assert spare.mean() < 0.1


def test_preallocate_errors(six_classes):
    x, y = six_classes
    net = init_network(4, 0, activation="sigmoid")
    with pytest.raises(ValueError, match="must exceed"):
        preallocate_head(net, 4, x, y, QUICK)
    with pytest.raises(ValueError, match="sigmoid"):
        preallocate_head(init_network(4, 0), 8, x, y, QUICK)


# -- targets ------------------------------------------------------------------

def test_build_targets_shapes_and_errors():
    old = init_network(5, 0, activation="sigmoid", active_classes=3)
    x = np.random.default_rng(0).random((4, 3, 100)).astype(np.float32)
    y = np.array([0, 3, 4, 2])
    t = build_targets(old, x, y, [3, 4], "sigmoid")
    assert t.n_old == 3 and t.classification.shape == (4, 2)
    assert t.classification.tolist() == [[0, 0], [1, 0], [0, 1], [0, 0]]
    assert np.all((t.distillation > 0) & (t.distillation < 1))
    s = build_targets(old, x, y, [3, 4], "softmax")
    assert s.classification.shape == (4, 5)
    assert np.allclose(s.distillation.sum(axis=1), 1, atol=1e-6)
    with pytest.raises(ValueError, match="contiguous"):
        build_targets(old, x, y, [4], "sigmoid")
    with pytest.raises(ValueError, match="outside"):
        build_targets(old, x, np.array([0, 3, 7, 2]), [3, 4], "sigmoid")


# -- strategies ----------------------------------------------------------------

def _split(x, y, n_base=4):
    base = y < n_base
    return x[base], y[base], x[~base], y[~base]


def test_icarl_update(six_classes):
    bx, by, nx, ny = _split(*six_classes)
    learner, _ = train_upperbound(bx, by, 4, QUICK, "sigmoid")
    net, _ = preallocate_head(learner.net, 8, bx, by, QUICK)
    mem = build_memory(net, bx, by, 40, 4)
    out, mem2, report = update_icarl(Learner(net), mem, nx, ny, QUICK)
    assert out.classifier == "nmc" and out.n_classes == 6
    assert out.net.n_units == 8
    assert mem2.counts() == dict(enumerate(class_quotas(40, 6)))
    assert report.classes_added == 2 and report.n_train == 40 + len(nx)
    pred = out.predict(nx)
    assert pred.min() >= 0 and pred.max() < 6


def test_icarl_insufficient_units(six_classes):
    bx, by, nx, ny = _split(*six_classes)
    net = init_network(5, 0, activation="sigmoid", active_classes=4)
    mem = build_memory(net, bx, by, 40, 4)
    with pytest.raises(ValueError, match="insufficient free head units"):
        update_icarl(Learner(net), mem, nx, ny, QUICK)


def test_icarlplus_grows_head_exactly(six_classes):
    bx, by, nx, ny = _split(*six_classes)
    learner, _ = train_upperbound(bx, by, 4, QUICK)
    mem = build_memory(learner.net, bx, by, 40, 4)
    out, _, report = update_icarlplus(learner, mem, nx, ny, QUICK)
    assert out.net.n_units == 6 == out.n_classes
    assert report.strategy == "icarlplus"
    assert any(not np.array_equal(out.net.params[k], learner.net.params[k]) for k in BACKBONE_PARAMS)


def test_fixed_repr_keeps_backbone(six_classes):
    bx, by, nx, ny = _split(*six_classes)
    learner, _ = train_upperbound(bx, by, 4, QUICK)
    mem = build_memory(learner.net, bx, by, 40, 4)
    out, _, _ = update_fixed_repr(learner, mem, nx, ny, QUICK)
    for k in BACKBONE_PARAMS:
        assert np.array_equal(out.net.params[k], learner.net.params[k])
    assert out.net.n_units == 6


def test_softmax_update_rejects_sigmoid(six_classes):
    bx, by, nx, ny = _split(*six_classes)
    net = init_network(4, 0, activation="sigmoid")
    mem = build_memory(net, bx, by, 40, 4)
    for name in ("icarlplus", "fixed_repr"):
        with pytest.raises(ValueError, match="softmax head"):
            UPDATERS[name](Learner(net), mem, nx, ny, QUICK)


def test_update_class_ids_must_follow(six_classes):
    bx, by, nx, ny = _split(*six_classes)
    learner, _ = train_upperbound(bx, by, 4, QUICK)
    mem = build_memory(learner.net, bx, by, 40, 4)
    keep = ny == 5
    with pytest.raises(ValueError, match="contiguous"):
        update_icarlplus(learner, mem, nx[keep], ny[keep], QUICK)


def test_upperbound_requires_all_classes(six_classes):
    x, y = six_classes
    with pytest.raises(ValueError, match="no samples"):
        train_upperbound(x, y, 7, QUICK)
    with pytest.raises(ValueError, match="head_mode"):
        train_upperbound(x, y, 6, QUICK, "tanh")


def test_upperbound_nmc_readout(six_classes):
    x, y = six_classes
    learner, hist = train_upperbound(x, y, 6, QUICK, "nmc-readout", memory_budget=60)
    assert learner.classifier == "nmc" and learner.net.activation == "sigmoid"
    assert len(hist) == QUICK.epochs


def test_upperbound_herded_balanced(six_classes):
    x, y = six_classes
    learner, mem = train_upperbound_herded(x, y, 6, 30, QUICK)
    assert mem.counts() == {c: 5 for c in range(6)}
    assert learner.n_classes == 6
    with pytest.raises(ValueError):
        train_upperbound_herded(x, y, 6, 5, QUICK)
