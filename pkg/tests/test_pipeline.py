import math

import numpy as np
import pytest

from rs2g import autodiff as ad
from rs2g.autodiff import Tensor, check_gradients
from rs2g.pipeline import (
    ConfigurationError,
    ModelBundle,
    ModelConfig,
    assess_risk,
    class_weights,
    predict_all,
    train,
)
from rs2g.scene import DOMAIN_A, DetectedObject, Frame, SceneSequence, domain_config, generate_synthetic

TINY_DOMAIN = domain_config("A", min_vehicles=1, max_vehicles=3, n_frames=3, frame_dt_s=1.0,
                            lane_change_duration_s=0.5)
TINY = dict(relations=2, node_width=6, spatial_hidden=(5, 5), lstm_hidden=4, classifier_hidden=4)


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic(TINY_DOMAIN, 12, 0.5, seed=0)


@pytest.fixture(scope="module")
def small_data():
    return generate_synthetic(DOMAIN_A, 16, 0.25, seed=3)


def zero_classifier(model):
    for w, b in model.classifier.layers:
        w.data[...] = 0.0
        b.data[...] = 0.0


@pytest.mark.parametrize("extractor", ["rule", "rs2g-1d", "rs2g-2d"])
def test_zero_head_gives_even_split_and_label_one(extractor, small_data):
    model = ModelBundle(ModelConfig(extractor=extractor))
    zero_classifier(model)
    pred = assess_risk(small_data[0], model)
    assert pred.probabilities == (0.5, 0.5)
    assert pred.label == 1
    loss = model.loss(model.prepare(small_data[0]), training=False)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_prediction_is_deterministic(small_data):
    a = ModelBundle(ModelConfig(init_seed=4))
    b = ModelBundle(ModelConfig(init_seed=4))
    for s in small_data:
        assert assess_risk(s, a) == assess_risk(s, b) == assess_risk(s, a)


@pytest.mark.parametrize("extractor", ["rule", "rs2g-2d"])
def test_prediction_equals_manual_stage_composition(extractor, small_data):
    from rs2g.extraction import binarize, extract_learned, rule_adjacency, SceneGraph
    model = ModelBundle(ModelConfig(extractor=extractor, init_seed=1))
    seq = small_data[1]
    embeddings = []
    for f in seq.frames:
        if extractor == "rule":
            from rs2g.scene import encode_frame
            g = SceneGraph(Tensor(encode_frame(f)), Tensor(rule_adjacency(f.objects, model.rule_config)))
        else:
            g = binarize(extract_learned(list(f.objects), model.node_encoder, model.edge_encoder), model.gamma)
        embeddings.append(model.spatial(g))
    z = model.temporal(ad.stack(embeddings))
    probs = ad.softmax(model.classifier(z)).data
    pred = assess_risk(seq, model)
    np.testing.assert_allclose(pred.probabilities, probs, rtol=0, atol=1e-12)
    assert pred.label == int(probs[1] >= probs[0])


def test_probabilities_sum_to_one(small_data):
    for extractor in ("rule", "rs2g-2d"):
        model = ModelBundle(ModelConfig(extractor=extractor, temporal="lstm-last", init_seed=2))
        for p in predict_all(model, small_data):
            assert abs(sum(p.probabilities) - 1.0) <= 1e-6
            assert p.label == int(p.probabilities[1] >= p.probabilities[0])


def test_variable_object_count_sequence():
    ego = DetectedObject("ego", (0.5, 0.5, 0.0, 0.0), 0.0, 0.0)
    car = lambda r: DetectedObject("car", (0.4, 0.6, 0.1, 0.2), r, 10.0)
    frames = (Frame(0.0, (ego, car(10.0))), Frame(0.5, (ego, car(6.0), car(20.0))),
              Frame(1.0, (ego,)))
    seq = SceneSequence("v", frames, 0)
    for extractor in ("rule", "rs2g-2d"):
        model = ModelBundle(ModelConfig(extractor=extractor))
        assert not model.prepare(seq).batched
        p = assess_risk(seq, model)
        assert abs(sum(p.probabilities) - 1) < 1e-12


def test_configuration_errors():
    with pytest.raises(ConfigurationError, match="extractor"):
        ModelBundle(ModelConfig(extractor="rule-ish"))
    with pytest.raises(ConfigurationError, match="node_width"):
        ModelBundle(ModelConfig(extractor="rule", node_width=8))
    with pytest.raises(ConfigurationError, match="gamma"):
        ModelBundle(ModelConfig(gamma=1.0))
    with pytest.raises(ConfigurationError, match="edge_training"):
        ModelBundle(ModelConfig(edge_training="gumbel"))


def test_model_bundle_registers_everything():
    model = ModelBundle(ModelConfig())
    prefixes = {n.split(".")[0] for n in model.params}
    assert prefixes == {"node_encoder", "edge_encoder", "spatial", "temporal", "classifier"}
    rule = ModelBundle(ModelConfig(extractor="rule"))
    assert {n.split(".")[0] for n in rule.params} == {"spatial", "temporal", "classifier"}
    assert rule.n_relations == 9


# ------------------------------------------------------------ gradients

@pytest.mark.parametrize("extractor", ["rule", "rs2g-1d", "rs2g-2d"])
@pytest.mark.parametrize("temporal", ["lstm-attn", "mean"])
def test_full_pipeline_gradients_soft_edges(extractor, temporal, tiny_data):
    widths = {**TINY, "node_width": 15} if extractor == "rule" else TINY
    cfg = ModelConfig(extractor=extractor, temporal=temporal, edge_training="soft", **widths)
    model = ModelBundle(cfg)
    seq = tiny_data[0]
    assert len(seq.frames) == 3 and len(seq.frames[0].objects) <= 4
    prep = model.prepare(seq)
    errs = check_gradients(lambda: model.loss(prep, training=True), dict(model.params.items()))
    assert max(errs.values()) < 1e-3, errs


def test_straight_through_gradients_for_fixed_graph(tiny_data):
    model = ModelBundle(ModelConfig(**TINY))
    prep = model.prepare(tiny_data[2])
    params = {n: t for n, t in model.params.items() if not n.startswith(("edge_encoder", "node_encoder"))}
    errs = check_gradients(lambda: model.loss(prep, training=True), params)
    assert max(errs.values()) < 1e-3, errs
    model.params.zero_grad()
    with ad.Tape() as tape:
        loss = model.loss(prep, training=True)
    tape.backward(loss)
    assert any(np.any(g != 0) for n, g in model.params.grads().items() if n.startswith("edge_encoder"))


def test_straight_through_forward_equals_evaluation_graph(small_data):
    model = ModelBundle(ModelConfig(init_seed=3))
    prep = model.prepare(small_data[0])
    train_logits = model.logits(prep, training=True).data
    eval_logits = model.logits(prep, training=False).data
    np.testing.assert_array_equal(train_logits, eval_logits)


# -------------------------------------------------------------- training

def test_zero_lr_leaves_parameters(tiny_data):
    model = ModelBundle(ModelConfig(**TINY))
    before = model.params.copy_data()
    result = train(model, tiny_data, epochs=2, lr=0.0, seed=0, adam=False)
    for n, v in model.params.copy_data().items():
        assert np.array_equal(v, before[n])
    assert result.loss_curve[0] == result.loss_curve[1]


def test_training_is_bit_reproducible(tiny_data):
    def run():
        m = ModelBundle(ModelConfig(**TINY, init_seed=5))
        r = train(m, tiny_data, epochs=2, lr=1e-2, seed=7)
        return r.loss_curve, {n: v.tobytes() for n, v in m.params.copy_data().items()}
    assert run() == run()


def test_training_reduces_loss_on_separable_set():
    ds = generate_synthetic(DOMAIN_A, 200, 0.25, seed=11)
    model = ModelBundle(ModelConfig(extractor="rule"))
    curve = train(model, ds, epochs=2, seed=0).loss_curve
    assert curve[-1] < curve[0]


def test_training_needs_both_classes(tiny_data):
    safe = [s for s in tiny_data if s.label == 0]
    with pytest.raises(ValueError, match="both classes"):
        train(ModelBundle(ModelConfig(**TINY)), safe, epochs=1)


def test_non_finite_loss_names_epoch_and_sequence(tiny_data, monkeypatch):
    model = ModelBundle(ModelConfig(**TINY))
    monkeypatch.setattr(model, "loss", lambda prep, training=True, weight=1.0: Tensor._result(np.array(np.nan), False))
    with pytest.raises(FloatingPointError, match=r"epoch 0, sequence A-0-"):
        train(model, tiny_data, epochs=1)


def test_class_weights_inverse_frequency():
    w = class_weights([0, 0, 0, 1])
    assert w == {0: 4 / 6, 1: 2.0}


def test_checkpoint_roundtrip(tmp_path, small_data):
    model = ModelBundle(ModelConfig(extractor="rs2g-1d", relations=5, gamma=0.4, pool_ratio=0.75, init_seed=9))
    path = tmp_path / "m.json"
    model.save(path)
    back = ModelBundle.load(path)
    assert back.config == model.config
    for s in small_data:
        assert assess_risk(s, back) == assess_risk(s, model)
