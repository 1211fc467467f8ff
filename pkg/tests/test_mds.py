import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import special_ortho_group

from stagewise.linnet import hidden_reps
from stagewise.mds import Embedding, align_sequence, child_separation, classical_mds, detect_branches, embed_checkpoints


@pytest.fixture(scope="module")
def frames(ds, full_trace):
    marks = {e: full_trace.checkpoints[e] for e in range(0, 10001, 50)}
    return embed_checkpoints(marks, ds, 2**3 - 1)


class TestClassicalMDS:
    def test_recovers_planar_distances(self):
        pts = np.random.default_rng(0).normal(size=(6, 2))
        emb = classical_mds(pts, 2)
        np.testing.assert_allclose(pdist(emb.coords), pdist(pts), atol=1e-12)

    def test_embedded_plane(self):
        # a 2-D configuration rotated into 5-D needs only two coordinates
        pts = np.zeros((7, 5))
        pts[:, :2] = np.random.default_rng(1).normal(size=(7, 2))
        pts = pts @ special_ortho_group.rvs(5, random_state=2)
        emb = classical_mds(pts, 2)
        np.testing.assert_allclose(pdist(emb.coords), pdist(pts), atol=1e-12)

    def test_identical_points(self):
        emb = classical_mds(np.ones((4, 3)), 2)
        assert not emb.coords.any() and emb.coords.shape == (4, 2)

    def test_k_range(self):
        with pytest.raises(ValueError):
            classical_mds(np.zeros((4, 2)), 4)

    def test_too_few_dimensions_warn(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        with pytest.warns(RuntimeWarning, match="positive eigenvalues"):
            emb = classical_mds(pts, 2)
        assert emb.coords.shape == (3, 1)

    def test_sign_convention(self):
        emb = classical_mds(np.random.default_rng(3).normal(size=(5, 3)), 2)
        for c in emb.coords.T:
            assert c[np.argmax(np.abs(c))] > 0


class TestAlignment:
    def test_rotation_undone(self):
        pts = np.random.default_rng(4).normal(size=(6, 2))
        th = 0.7
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        out = align_sequence([Embedding(pts), Embedding(pts @ rot)])
        np.testing.assert_allclose(out[1].coords, pts, atol=1e-12)

    def test_reduces_displacement(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(8, 2))
        moved = pts @ np.array([[0.0, 1.0], [-1.0, 0.0]]) + 0.01 * rng.normal(size=(8, 2))
        out = align_sequence([Embedding(pts), Embedding(moved)])
        assert np.linalg.norm(out[1].coords - pts) < 0.1 * np.linalg.norm(moved - pts)

    def test_point_count_mismatch(self):
        with pytest.raises(ValueError):
            align_sequence([Embedding(np.zeros((3, 2))), Embedding(np.zeros((4, 2)))])


class TestHierarchy:
    @pytest.mark.slow
    def test_first_axis_splits_kingdoms(self, ds, trained_net):
        x = classical_mds(hidden_reps(trained_net, ds), 2).coords[:, 0]
        animals, plants = ds.leaves_under(ds.tree[""][0]), ds.leaves_under(ds.tree[""][1])
        assert np.all(np.sign(x[animals]) == -np.sign(x[plants][0]))
        assert np.all(np.sign(x[plants]) == np.sign(x[plants][0]))

    @pytest.mark.slow
    def test_coarse_before_fine(self, ds, frames):
        ev = {e.label: e.epoch for e in detect_branches(frames, ds)}
        assert ev["animal/plant"] < ev["mammal/bird"] < ev["dog/cat"]
        assert ev["animal/plant"] < ev["flower/tree"] < ev["rose/daisy"]
        assert ev["mammal/bird"] < ev["sparrow/penguin"]

    def test_start_has_no_separation(self, ds, frames):
        assert child_separation(frames[0], ds, "") < 1e-2 * child_separation(frames[-1], ds, "")

    def test_threshold_validated(self, ds, frames):
        with pytest.raises(ValueError, match="threshold"):
            detect_branches(frames, ds, -0.1)
        with pytest.raises(ValueError):
            detect_branches([], ds)

    def test_zero_threshold_fires_at_start(self, ds, frames):
        assert all(e.epoch == 0 for e in detect_branches(frames, ds, 0.0))

    def test_levels_and_groups(self, ds, frames):
        events = detect_branches(frames, ds)
        assert len(events) == 7
        assert [e.level for e in events].count(3) == 4
        root = events[0]
        assert sorted(root.group_pair[0] + root.group_pair[1]) == list(range(8))
