"""Smoke test for the fairtab_py extension.

Build and run:
    cargo build --release -p fairtab-py --features extension-module
    cp target/release/libfairtab_py.so python/fairtab_py.so
    python3 python/smoke_test.py
"""

import json
import tempfile
from pathlib import Path

import fairtab_py as ft

SMALL = {
    "folds": 2,
    "seed": 3,
    "model": {"embed_dim": 4, "layers": 1, "heads": 2, "key_dim": 2,
              "value_dim": 2, "ff_hidden": 8, "head_hidden": [4]},
    "train": {"epochs": 2, "batch_size": 64},
}


def main():
    assert "auroc-weighted+DP" in ft.methods()
    assert ft.auroc([0.1, 0.9, 0.4], [0, 1, 1]) == 1.0
    assert ft.auroc([0.5, 0.5], [1, 1]) is None
    assert abs(ft.reduction_fraction(0.1176, 0.0715) - 0.392) < 1e-3
    assert ft.dpd([1, 0, 1, 1], [0, 0, 1, None]) == 0.5

    ds = ft.Dataset.synthesize(n=500, seed=1)
    assert len(ds) == 500
    assert ds.tasks[0] == "MALIGNANCY"
    assert "GENDER" in ds.sensitive

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        ds.save(tmp / "data")
        again = ft.Dataset.load(tmp / "data" / "data.csv", tmp / "data" / "schema.json")
        assert len(again) == 500

        report = json.loads(ft.train(ds, tmp / "run", json.dumps(SMALL)))
        assert len(report["folds"]) == 2
        same = json.loads(ft.train(ds, tmp / "run2", json.dumps(SMALL)))
        assert report == same

        run = ft.Run.load(tmp / "run")
        probs = run.predict_proba(ds, fold=1)
        assert len(probs) == 5 and len(probs[0]) == len(run.test_rows(1))
        assert all(0.0 < p < 1.0 for p in probs[0])

        evaluated = json.loads(run.evaluate(ds))
        assert evaluated["folds"] == report["folds"]

        table = json.loads(run.importance(ds, identity=True, repetitions=1))
        assert all(e["mean_drop"] == 0.0 for e in table["entries"])

        cdf = json.loads(run.cdf(ds, step=0.25))
        assert len(cdf[0]["grid"]) == 5

        bad = dict(SMALL, train={"method": "auroc-weighted+EO"})
        try:
            ft.train(ds, tmp / "bad", json.dumps(bad))
        except ValueError as e:
            assert "fairness_attribute" in str(e)
        else:
            raise AssertionError("expected a config error")
        assert not (tmp / "bad").exists()

    print("smoke test passed")


if __name__ == "__main__":
    main()
