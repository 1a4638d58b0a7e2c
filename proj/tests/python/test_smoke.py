import json
import math
import os
import pathlib

import numpy as np
import pytest

import shapeformer as sf

DATA = pathlib.Path(os.environ.get("SHAPEFORMER_DATA_DIR", pathlib.Path(__file__).parents[2] / "data"))
TINY = {"d_spe": 16, "d_gen": 8, "heads": 4, "epochs": 2, "window": 10, "shapelets_per_class": 2,
        "dropout": 0.0, "threads": 1}


def motif(per_class=4, length=30, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 0.05, size=(2 * per_class, 2, length))
    x[:per_class, 0, 10:15] += [0, 2.5, 5, 2.5, 0]
    y = [0] * per_class + [1] * per_class
    return sf.dataset_from_array(x, y, ["motif", "flat"])


def test_metrics():
    assert sf.cid([0.3, 1.0, -2.0], [0.3, 1.0, -2.0]) == 0.0
    assert sf.cid([0, 1, 0], [0, 0, 0]) == 1e6
    assert sf.psd([0, 1, 2, 3], [1, 2]) == 0.0
    gain, threshold = sf.information_gain([1, 2, 9, 10], [True, True, False, False])
    assert gain == pytest.approx(1.0)
    assert threshold == 5.5
    assert sf.extract_pips([0, 0, 1, 0, 0], 3) == [0, 2, 4]
    with pytest.raises(sf.ContractViolation):
        sf.cid([1, 2], [1, 2, 3])


def test_array_round_trip(tmp_path):
    d = motif()
    assert len(d) == 8 and d.num_variables == 2 and d.series_length == 30
    sf.write_ts(d, tmp_path / "m.ts")
    back = sf.load_ts(tmp_path / "m.ts")
    np.testing.assert_array_equal(back.values, d.values)
    assert back.labels == d.labels
    norm, mean, std = sf.normalize(d)
    v = norm.values
    assert np.allclose(v.mean(axis=(0, 2)), 0, atol=1e-12)
    a, b = sf.split_train_val(d, 0.75, 1)
    assert (len(a), len(b)) == (6, 2)
    with pytest.raises(sf.InputError):
        sf.load_ts(tmp_path / "absent.ts")


def test_discover_train_evaluate(tmp_path):
    d = motif()
    d.split = sf.SplitTag.train
    pool = sf.discover(d, {"shapelets_per_class": 2})
    assert len(pool) == 4
    assert json.loads(pool.to_json())["shapelets"][0]["gain"] == pytest.approx(1.0)
    pool.save(tmp_path / "pool.json")
    assert sf.load_pool(tmp_path / "pool.json").digest == pool.digest

    model = sf.train(d, pool, {**TINY, "protocol": "full", "epochs": 3})
    report = json.loads(model.report)
    assert len(report["epochs"]) == 3
    assert report["epochs"][0]["train_loss"] == pytest.approx(math.log(2), rel=1e-5)
    ev = sf.evaluate(model, d)
    assert len(ev["predictions"]) == 8
    model.save(tmp_path / "ck")
    again = sf.load_checkpoint(tmp_path / "ck")
    assert again.predict(d) == model.predict(d)

    d.split = sf.SplitTag.test
    with pytest.raises(sf.ContractViolation):
        sf.train(d, pool, TINY)


@pytest.mark.skipif(not (DATA / "BasicMotions").exists(), reason="BasicMotions not available")
def test_run_experiment_basicmotions():
    train = sf.load_ts(DATA / "BasicMotions" / "BasicMotions_TRAIN.ts")
    test = sf.load_ts(DATA / "BasicMotions" / "BasicMotions_TEST.ts")
    assert train.classes == ["Standing", "Running", "Walking", "Badminton"]
    out = sf.run_experiment(train, test, TINY)
    assert 0.0 <= out["test"]["accuracy"] <= 1.0
    assert len(out["report"]["epochs"]) == 2
