from dataclasses import replace

import numpy as np
import pytest

from stagewise.bif import InfluenceTrajectory
from stagewise.experiments import sign_change_epoch
from stagewise.linnet import fit
from stagewise.loo import loo_trace, trace_correlation, window_sweep, windowed_ablation


@pytest.fixture(scope="module")
def short_cfg(train_cfg):
    return replace(train_cfg, epochs=400, checkpoint_every=100)


@pytest.fixture(scope="module")
def dog_loo(ds, train_cfg, full_trace):
    return loo_trace(ds, ds.index("dog"), train_cfg, baseline=full_trace)


def traj(values, epochs=None):
    values = np.asarray(values, dtype=float)
    epochs = np.arange(values.size) if epochs is None else np.asarray(epochs)
    return InfluenceTrajectory(epochs, values, "loo", 0, 1)


class TestLOOTrace:
    def test_starts_at_zero(self, ds, dog_loo, full_trace):
        # both runs share the initialization; only the masked self entry differs
        dog = ds.index("dog")
        keep = np.arange(ds.n_items) != dog
        assert not dog_loo.delta[0, keep].any()
        assert dog_loo.delta[0, dog] == full_trace.per_sample_loss[0, dog]

    def test_original_starts_at_zero(self, ds, short_cfg):
        assert not loo_trace(ds, 0, short_cfg, evaluate="original").delta[0].any()

    def test_shape(self, ds, train_cfg, dog_loo):
        assert dog_loo.delta.shape == (train_cfg.epochs + 1, ds.n_items)

    def test_masked_self_entry_vanishes(self, ds, dog_loo):
        # the full run fits dog and the masked run scores it against a zero target
        assert abs(dog_loo.delta[-1, ds.index("dog")]) <= 1e-4

    def test_original_self_entry_negative(self, ds, train_cfg, full_trace):
        dog = ds.index("dog")
        lt = loo_trace(ds, dog, train_cfg, baseline=full_trace, evaluate="original")
        assert lt.delta[-1, dog] < -1.9

    def test_conventions_agree_off_diagonal(self, ds, short_cfg):
        a = loo_trace(ds, 2, short_cfg)
        b = loo_trace(ds, 2, short_cfg, evaluate="original")
        keep = np.arange(ds.n_items) != 2
        np.testing.assert_array_equal(a.delta[:, keep], b.delta[:, keep])

    def test_bad_evaluate(self, ds, short_cfg):
        with pytest.raises(ValueError, match="evaluate"):
            loo_trace(ds, 0, short_cfg, evaluate="both")

    def test_mismatched_baseline(self, ds, short_cfg):
        base = fit(ds, replace(short_cfg, epochs=100))
        with pytest.raises(ValueError, match="baseline"):
            loo_trace(ds, 0, short_cfg, baseline=base)

    def test_deterministic(self, ds, short_cfg):
        a, b = loo_trace(ds, 1, short_cfg), loo_trace(ds, 1, short_cfg)
        np.testing.assert_array_equal(a.delta, b.delta)

    @pytest.mark.slow
    def test_dog_on_sparrow_changes_sign(self, ds, dog_loo):
        t = dog_loo.trajectory(ds.index("sparrow"), range(0, 10001, 50))
        assert t.values.min() < 0 < t.values.max()
        assert t.peak_epoch("neg") < t.peak_epoch("pos")
        assert np.isfinite(sign_change_epoch(t))

    def test_trajectory_subsamples(self, dog_loo):
        t = dog_loo.trajectory(1, [0, 100, 200])
        assert t.epochs.tolist() == [0, 100, 200]
        np.testing.assert_array_equal(t.values, dog_loo.delta[[0, 100, 200], 1])


class TestWindowedAblation:
    def test_full_window_equals_loo(self, ds, short_cfg):
        w = windowed_ablation(ds, 3, 0, short_cfg.epochs, short_cfg)
        lt = loo_trace(ds, 3, short_cfg, evaluate="original")
        np.testing.assert_allclose(w.integrated_delta, lt.delta[1:].sum(axis=0), rtol=0, atol=1e-10)

    def test_zero_duration(self, ds, short_cfg):
        w = windowed_ablation(ds, 3, 100, 0, short_cfg)
        assert not w.integrated_delta.any()

    def test_window_out_of_range(self, ds, short_cfg):
        with pytest.raises(ValueError, match="window"):
            windowed_ablation(ds, 0, 350, 100, short_cfg)

    def test_needs_checkpoint(self, ds, short_cfg):
        base = fit(ds, short_cfg, checkpoints=[0])
        with pytest.raises(ValueError, match="checkpoint"):
            windowed_ablation(ds, 0, 150, 10, short_cfg, baseline=base)

    def test_self_effect_nonpositive(self, ds, short_cfg):
        # skipping a sample's updates can only hurt its own loss, to first order
        for t in (0, 100, 200):
            assert windowed_ablation(ds, 0, t, 50, short_cfg).integrated_delta[0] <= 0

    def test_sweep_starts(self, ds, short_cfg):
        ws = window_sweep(ds, 0, short_cfg, duration=100, every=150)
        assert [w.t_start for w in ws] == [0, 150, 300]


class TestTraceCorrelation:
    def test_identical_and_negated(self):
        v = np.sin(np.linspace(0, 3, 40))
        assert trace_correlation(traj(v), traj(v)) == pytest.approx(1.0, abs=1e-12)
        assert trace_correlation(traj(v), traj(-v)) == pytest.approx(-1.0, abs=1e-12)

    def test_null_is_small(self):
        rng = np.random.default_rng(0)
        r = [trace_correlation(traj(rng.normal(size=200)), traj(rng.normal(size=200))) for _ in range(200)]
        assert abs(np.mean(r)) < 0.3 and np.mean(np.abs(r)) < 0.3

    def test_needs_three_points(self):
        with pytest.raises(ValueError, match="3"):
            trace_correlation(traj([1.0, 2.0]), traj([3.0, 1.0]))

    def test_constant_is_nan(self):
        with pytest.warns(RuntimeWarning, match="constant"):
            r = trace_correlation(traj([1.0, 1.0, 1.0]), traj([1.0, 2.0, 0.0]))
        assert np.isnan(r)

    def test_merged_grid(self):
        # a linear trace sampled on two different grids is still perfectly correlated
        a = traj(np.arange(0, 101, 10) * 2.0, np.arange(0, 101, 10))
        b = traj(np.arange(0, 101, 25) * 2.0 + 1.0, np.arange(0, 101, 25))
        assert trace_correlation(a, b) == pytest.approx(1.0, abs=1e-12)
