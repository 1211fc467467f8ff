import json

import numpy as np
import pytest

from stagewise import io
from stagewise.bif import InfluenceTrajectory
from stagewise.dataset import build_hierarchy_dataset
from stagewise.linnet import TrainConfig, fit


class TestCSV:
    def test_schema_line_and_roundtrip(self, tmp_path):
        p = io.write_csv(tmp_path / "a.csv", ["x", "y"], [[1, 0.1], [2, np.float64(1 / 3)]])
        assert p.read_text().splitlines()[0] == f"# schema_version: {io.SCHEMA_VERSION}"
        header, rows = io.read_csv(p)
        assert header == ["x", "y"]
        # floats are written with repr, so they read back bit for bit
        assert float(rows[1][1]) == 1 / 3

    def test_json_sorted_and_finite(self, tmp_path):
        p = io.write_json({"b": np.float64(np.nan), "a": np.arange(2)}, tmp_path / "r.json")
        d = json.loads(p.read_text())
        assert list(d) == ["a", "b", "schema_version"]
        assert d["b"] == "nan" and d["a"] == [0, 1]


class TestArtifacts:
    def test_checkpoint_roundtrip(self, tmp_path, small_net):
        p = io.save_checkpoint(small_net, tmp_path / "ck" / "epoch_000010", {"epoch": 10})
        back = io.load_checkpoint(p)
        np.testing.assert_array_equal(back.w1, small_net.w1)
        np.testing.assert_array_equal(back.w2, small_net.w2)
        side = json.loads(p.with_suffix(".json").read_text())
        assert side["epoch"] == 10 and side["w1_shape"] == [3, 8]

    def test_trajectory_roundtrip(self, tmp_path):
        names = ["a", "b", "c"]
        trs = [
            InfluenceTrajectory([0, 50, 100], [0.0, -0.25, 1e-17], "bif", 0, 1),
            InfluenceTrajectory([0, 50, 100], [0.0, 0.5, 0.125], "loo", 0, 2),
        ]
        back = io.read_trajectories(io.write_trajectories(trs, names, tmp_path / "t.csv"), names)
        for a, b in zip(sorted(trs, key=lambda t: t.method), sorted(back, key=lambda t: t.method)):
            assert (a.method, a.source, a.query) == (b.method, b.source, b.query)
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.epochs, b.epochs)

    def test_dataset_files(self, tmp_path):
        ds = build_hierarchy_dataset(3)
        paths = io.write_dataset(ds, tmp_path)
        assert [p.name for p in paths] == ["input.csv", "output.csv", "items.csv"]
        header, rows = io.read_csv(paths[1])
        assert len(header) == 16 and len(rows) == 8
        np.testing.assert_array_equal(np.array([r[1:] for r in rows], float), ds.output)

    def test_loss_trace(self, tmp_path):
        ds = build_hierarchy_dataset(2)
        tr = fit(ds, TrainConfig(epochs=5, checkpoint_every=5))
        header, rows = io.read_csv(io.write_loss_trace(tr, ds, tmp_path / "l.csv"))
        assert header[-2:] == ["total", "objective"] and len(rows) == 6
        assert float(rows[3][-2]) == pytest.approx(tr.total_loss[3], rel=0, abs=0)
