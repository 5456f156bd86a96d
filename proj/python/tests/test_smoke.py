import json

import numpy as np
import pytest

import morelab


def test_schema_and_splits():
    schema = morelab.RelationSchema()
    assert len(schema) == 22
    assert schema.num_relations == 21
    assert schema.labels[schema.none_index] == "none"
    assert morelab.split_by_reference_ratio(2000) == (1528, 172, 300)
    with pytest.raises(ValueError):
        schema.index("rel_99")


def test_generate_instance_is_deterministic():
    a = morelab.generate_instance(11, "x")
    b = morelab.generate_instance(11, "x")
    assert a.to_json() == b.to_json()
    assert a.rgb.shape == (3, 64, 64)
    assert a.depth.shape == (1, 64, 64)
    assert np.array_equal(a.rgb, b.rgb)
    assert len(a.gold) == len(a.objects) * len(a.entities)
    for e, o, rel in a.gold:
        assert rel in morelab.RelationSchema().labels


def test_dataset_round_trip(tmp_path):
    stats = morelab.generate_dataset(7, 6, 2, 2, tmp_path)
    assert stats["train"]["instances"] == 6
    train = morelab.read_split(str(tmp_path / "train.jsonl"))
    assert [i.id for i in train] == [f"train-{k:06d}" for k in range(6)]
    fresh = morelab.generate_instance(0, "unused")
    assert fresh.rgb.dtype == np.float64
    assert morelab.corpus_stats(train)["instances"] == 6


def test_position_feature():
    feat = morelab.position_feature(morelab.BBox(0, 0, 32, 16), 64, 64)
    assert feat == pytest.approx((0.25, 0.125, 0.5, 0.25, 0.125))


def test_metrics():
    gold = ["rel_01", "none", "rel_02", "none"]
    perfect = morelab.evaluate(gold, gold)
    assert perfect["f1"] == 1.0 and perfect["accuracy"] == 1.0
    lazy = morelab.evaluate(["none"] * 4, gold)
    assert lazy["recall"] == 0.0 and lazy["accuracy"] == 0.5
    d = morelab.disambiguation_eval([(0, 0, 0, "rel_03")], [(0, 0, 0, "rel_01")], [1])
    assert d["full"]["true_positive"] == 1
    assert morelab.cohen_kappa_weighted([0, 1, 2, 2], [0, 1, 2, 2], 3) == 1.0
    assert morelab.cohen_kappa_weighted([0, 0, 1, 1], [0, 1, 0, 1], 2) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(RuntimeError):
        morelab.cohen_kappa_weighted([1, 1], [1, 1], 3)


def test_adamw_step_in_place():
    w = np.array([2.0, -3.0])
    state = morelab.AdamWState()
    morelab.adamw_step([w], [np.zeros(2)], state, lr=0.1, weight_decay=0.01)
    assert w == pytest.approx([2.0 * 0.999, -3.0 * 0.999], rel=1e-15)
    assert state.step == 1
    with pytest.raises(RuntimeError):
        morelab.adamw_step([w], [np.array([np.nan, 0.0])], state)


def test_model_train_save_load(tmp_path):
    config = morelab.ModelConfig("tiny")
    model = morelab.Model(config)
    assert model.num_parameters > 1000
    data = [morelab.generate_instance(i, f"t{i}") for i in range(4)]
    tc = morelab.TrainConfig()
    tc.epochs = 2
    tc.batch_size = 8
    log = morelab.train(model, data, data[:2], tc)
    assert log.splitlines()[0] == "epoch,loss,dev_f1"
    assert len(log.splitlines()) == 3
    model.save(str(tmp_path / "m"))
    back = morelab.Model.load(str(tmp_path / "m"))
    assert back.scores(data[0]) == model.scores(data[0])
    assert len(back.predict(data[0])) == len(data[0].gold)


def test_gradcheck():
    r = morelab.gradcheck("small")
    assert r["max_rel_error"] < 1e-4
    assert r["coordinates"] > 1000
    with pytest.raises(ValueError):
        morelab.gradcheck("enormous")
