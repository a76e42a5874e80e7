import os
from pathlib import Path

import numpy as np
import pytest

import rkt


def test_generate_is_deterministic():
    a, ya = rkt.generate(classes=4, per_class=5, seed=3)
    b, yb = rkt.generate(classes=4, per_class=5, seed=3)
    assert a.shape == (20, 1, 16, 16)
    assert np.array_equal(a, b)
    assert ya == yb
    assert sorted(set(ya)) == [0, 1, 2, 3]


def test_trigger_blend():
    x = np.full((1, 16, 16), 0.2)
    assert np.array_equal(rkt.apply_trigger(x, 0.0), x)
    y = rkt.apply_trigger(x, 0.5)
    assert set(np.round(np.unique(y), 12)) <= {0.1, 0.2, 0.6}


def test_whitening_diagonal():
    s = rkt.key_stats(np.diag([2.0, 1.0]), 1e-14)
    assert np.allclose(s.Z, np.diag([0.5, 1.0]))
    assert np.allclose(s.whiten(np.array([2.0, 3.0])), [1.0, 3.0])


def test_span_residual():
    K = np.array([[1.0], [0.0]])
    _, rel, inside = rkt.span_residual(K, np.array([1.0, 0.0]))
    assert inside and rel < 1e-6
    r, rel, inside = rkt.span_residual(K, np.array([0.0, 1.0]))
    assert not inside
    assert np.allclose(r, [0.0, 1.0])


def test_model_predict_and_checkpoint(tmp_path):
    m = rkt.Model.small_cnn([1, 16, 16], 4, 7)
    assert m.editable_layers == [1, 3, 6, 9]
    x = np.random.default_rng(0).random((1, 16, 16))
    logits, label = m.predict(x)
    assert logits.shape == (4,)
    assert label == int(np.argmax(logits))
    assert m.forward(x[None]).shape == (1, 4)
    path = tmp_path / "m.rkt"
    rkt.save_checkpoint(path, m)
    back = rkt.load_checkpoint(path)
    assert back.digest() != "" and back.editable_layers == m.editable_layers
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 8, 8)))


def test_attribution_zero_for_identical_inputs():
    m = rkt.Model.small_cnn([1, 16, 16], 4, 8)
    x = np.random.default_rng(1).random((1, 16, 16))
    assert not rkt.layer_ig(m, 3, x, x, 0, 4).any()


def test_locate_and_pcc():
    assert rkt.locate([1, 3, 5], [0.1, 0.9, 0.3]) == 3
    assert rkt.locate([1, 3, 5], [0.2, 0.2, 0.2]) == 5
    a = np.arange(6.0).reshape(2, 3)
    assert rkt.pcc(a, a) == pytest.approx(1.0)
    assert rkt.pcc(a, -a) == pytest.approx(-1.0)


def test_config_round_trip_and_errors():
    c = rkt.parse_config("run.seed = 4\nrectify.pairs = 3\n")
    assert c.seed == 4 and c.pairs == 3
    assert rkt.parse_config(c.serialize()) == c
    with pytest.raises(rkt.ConfigError, match="line 1"):
        rkt.parse_config("run.sed = 1\n")
    src = Path(os.environ.get("RKT_SOURCE_DIR", Path(__file__).resolve().parents[2]))
    rkt.load_config(src / "configs" / "trojan.cfg").validate()


def test_small_experiment_end_to_end():
    c = rkt.parse_config(
        "data.per_class = 60\ncorruption.rate = 0.05\ntrain.epochs = 6\ntrain.milestones = 4\n"
        "rectify.reference_samples = 80\n"
    )
    exp = rkt.Experiment(c)
    model = exp.train()
    before = exp.evaluate(model, ig_steps=8)
    assert 0.0 <= before["overall_accuracy"] <= 1.0
    layer, layers, scores = exp.locate(model)
    assert layer in layers and len(scores) == 4
    rectified, report = exp.rectify(model, "dynamic")
    after = exp.evaluate(rectified, ig_steps=8)
    assert before["overall_accuracy"] - after["overall_accuracy"] <= 0.03 + 1e-12
    assert '"termination"' in report
