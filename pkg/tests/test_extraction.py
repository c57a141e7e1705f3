import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rs2g.autodiff import ParameterSet, Tensor, check_gradients
from rs2g.extraction import (
    HARD,
    SOFT,
    EdgeEncoder,
    NodeEncoder,
    RuleConfig,
    SceneGraph,
    binarize,
    extract_learned,
    extract_rule_based,
    rule_graphs_for_sequence,
)
from rs2g.scene import DetectedObject, Frame

EGO = DetectedObject("ego", (0.5, 0.5, 0.0, 0.0), 0.0, 0.0)


def obj(range_m, bearing=0.0, cat="car"):
    return DetectedObject(cat, (0.5, 0.4, 0.1, 0.1), range_m, bearing)


def encoders(depth=2, n_rel=3, seed=0, gamma=0.5):
    ps = ParameterSet()
    rng = np.random.default_rng(seed)
    return ps, NodeEncoder(ps, rng, depth), EdgeEncoder(ps, rng, n_rel, depth, gamma=gamma)


def attrs(n, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, size=(n, 15))


# ------------------------------------------------------------------ learned

def test_zero_weights_give_half_scores_and_complete_hard_graph():
    ps, ne, ee = encoders(n_rel=2)
    for name in ps:
        ps.assign(name, np.zeros(ps[name].shape))
    soft = extract_learned(attrs(3), ne, ee, SOFT)
    off = ~np.eye(3, dtype=bool)
    assert np.all(soft.adjacency.data[:, off] == 0.5)
    assert np.all(np.diagonal(soft.adjacency.data, axis1=1, axis2=2) == 0)
    hard = extract_learned(attrs(3), ne, ee, HARD)
    assert hard.mode == HARD
    assert [int(a.sum()) for a in hard.adjacency.data] == [6, 6]


@pytest.mark.parametrize("depth", [1, 2])
def test_learned_graph_shapes(depth):
    ps, ne, ee = encoders(depth, n_rel=4)
    g = extract_learned(attrs(5), ne, ee)
    assert g.node_features.shape == (5, 15)
    assert g.adjacency.shape == (4, 5, 5)
    sizes = {name: ps[name].shape for name in ps}
    assert sizes["edge_encoder.trunk.0.weight"] == ((30, 15) if depth == 1 else (30, 30))
    assert sizes["edge_encoder.heads.weight"] == (15, 4)


def test_soft_entries_in_unit_interval_with_zero_diagonal():
    _, ne, ee = encoders(seed=3)
    a = extract_learned(attrs(6, 1), ne, ee).adjacency.data
    assert np.all((a >= 0) & (a <= 1))
    assert np.all(np.diagonal(a, axis1=-2, axis2=-1) == 0)


def test_pair_score_matches_explicit_concat():
    _, ne, ee = encoders(seed=4)
    x = Tensor(attrs(4, 2))
    h = ne(x).data
    a = ee.pair_scores(ne(x)).data
    for j in range(4):
        for k in range(4):
            if j == k:
                continue
            z = np.concatenate([h[j], h[k]])
            for w, b in ee.trunk:
                z = np.maximum(z @ w.data + b.data, 0)
            s = 1 / (1 + np.exp(-(z @ ee.head_w.data + ee.head_b.data)))
            np.testing.assert_allclose(a[:, j, k], s, rtol=0, atol=1e-12)


def test_batched_extraction_equals_per_frame():
    _, ne, ee = encoders(seed=5)
    clip = np.stack([attrs(4, t) for t in range(3)])
    batched = extract_learned(clip, ne, ee).adjacency.data
    for t in range(3):
        single = extract_learned(clip[t], ne, ee).adjacency.data
        np.testing.assert_allclose(batched[t], single, rtol=0, atol=1e-14)


@pytest.mark.parametrize("depth", [1, 2])
def test_soft_adjacency_gradients(depth):
    ps, ne, ee = encoders(depth, n_rel=2, seed=6)
    rng = np.random.default_rng(1)
    x = Tensor(attrs(4, 3))
    w = Tensor(rng.normal(size=(2, 4, 4)))
    f = lambda: (extract_learned(x, ne, ee).adjacency * w).sum()
    errs = check_gradients(f, dict(ps.items()))
    assert max(errs.values()) < 1e-4, errs


def test_binarize_examples():
    a = np.full((2, 3, 3), 0.5) * (1 - np.eye(3))
    g = SceneGraph(Tensor(attrs(3)), Tensor(a), SOFT)
    h = binarize(g, 0.5)
    assert h.edge_count() == 12
    assert h.node_features is g.node_features


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_binarize_monotone_and_idempotent(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(3, n, n)) * (1 - np.eye(n))
    g = SceneGraph(Tensor(rng.uniform(size=(n, 15))), Tensor(a), SOFT)
    counts = [binarize(g, t).edge_count() for t in np.arange(1, 10) / 10]
    assert counts == sorted(counts, reverse=True)
    once = binarize(g, 0.5)
    np.testing.assert_array_equal(binarize(once, 0.5).adjacency.data, once.adjacency.data)


def test_binarize_rejects_bad_gamma():
    g = SceneGraph(Tensor(attrs(2)), Tensor(np.zeros((1, 2, 2)) + 1e-3), SOFT)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError, match="gamma"):
            binarize(g, bad)


def test_scene_graph_shape_check():
    with pytest.raises(ValueError):
        SceneGraph(Tensor(attrs(3)), Tensor(np.ones((1, 4, 4))), HARD)


def test_edge_count_needs_hard_graph():
    g = SceneGraph(Tensor(attrs(2)), Tensor(np.full((1, 2, 2), 0.3)), SOFT)
    with pytest.raises(ValueError):
        g.edge_count()


# --------------------------------------------------------------- rule-based

def test_rule_nearest_tier_only():
    cfg = RuleConfig()
    g = extract_rule_based([EGO, obj(3.0)], cfg)
    a = g.adjacency.data
    assert a[0, 0, 1] == 1 and a[0, 1, 0] == 1
    assert a[1:5].sum() == 0


def test_rule_front_sector_only():
    cfg = RuleConfig()
    a = extract_rule_based([EGO, obj(30.0, 0.0)], cfg).adjacency.data
    names = cfg.relation_names
    sectors = {names[r] for r in range(5, 9) if a[r].sum() > 0}
    assert sectors == {"front"}
    assert a[names.index("front"), 0, 1] == 1
    assert a[names.index("front"), 1, 0] == 0


def test_rule_out_of_range_has_no_distance_edge():
    a = extract_rule_based([EGO, obj(80.0, 170.0)]).adjacency.data
    assert a[:5].sum() == 0
    assert a[RuleConfig().relation_names.index("rear"), 0, 1] == 1


@pytest.mark.parametrize("r,tier", [(0.0, 0), (4.0, 0), (4.01, 1), (7.0, 1), (25.0, 4), (25.1, None)])
def test_tier_boundaries(r, tier):
    assert RuleConfig().tier_of(r) == tier


@pytest.mark.parametrize("b,name", [(0.0, "front"), (44.9, "front"), (45.0, "left"), (-45.0, "front"),
                                    (-90.0, "right"), (135.0, "rear"), (-180.0, "rear"), (180.0, "rear")])
def test_sector_boundaries(b, name):
    cfg = RuleConfig()
    assert cfg.sector_names[cfg.sector_of(b)] == name


def test_rule_graph_invariants():
    objs = [EGO] + [obj(r, b) for r, b in [(2.0, 10.0), (9.0, -100.0), (15.0, 60.0)]]
    g = extract_rule_based(objs)
    a = g.adjacency.data
    assert g.mode == HARD
    assert set(np.unique(a)) <= {0.0, 1.0}
    assert np.all(np.diagonal(a, axis1=1, axis2=2) == 0)
    np.testing.assert_array_equal(g.node_features.data[1, 12], 0.02)


def test_rule_graphs_for_sequence_stack():
    frames = [Frame(t, (EGO, obj(3.0 + t))) for t in range(3)]
    assert rule_graphs_for_sequence(frames).shape == (3, 9, 2, 2)


def test_scene_graph_json_is_sparse():
    g = extract_rule_based([EGO, obj(3.0)])
    d = json.loads(g.to_json())
    assert d["mode"] == "hard"
    assert sorted(map(tuple, d["edges"])) == [(0, 0, 1, 1.0), (0, 1, 0, 1.0), (6, 0, 1, 1.0)]
