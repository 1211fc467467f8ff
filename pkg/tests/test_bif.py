import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagewise.bif import (
    BIFMatrix,
    InfluenceTrajectory,
    bif_from_traces,
    bif_matrices,
    group_influence,
    normalized_bif,
    trajectory,
)
from stagewise.sgld import SGLDConfig, TraceMatrix, run_chains


def traces(values, chains=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n = values.shape[1]
    chains = np.zeros(n, dtype=int) if chains is None else np.asarray(chains)
    idx = np.column_stack([chains, np.arange(n)])
    return TraceMatrix(values, tuple(range(values.shape[0])), idx)


FAST = SGLDConfig(chains=2, steps_per_chain=50)


class TestFromTraces:
    def test_hand_covariance(self):
        # deviations (-1.5, -0.5, 0.5, 1.5) and (-0.5, -1.5, 1.5, 0.5): products sum to 3
        expected = np.cov([1, 2, 3, 4], [2, 1, 4, 3])[0, 1]
        assert expected == pytest.approx(1.0, abs=1e-15)
        b = bif_from_traces(traces([1, 2, 3, 4]), traces([2, 1, 4, 3]))
        assert b.values[0, 0] == pytest.approx(-1.0, abs=1e-15)
        raw = bif_from_traces(traces([1, 2, 3, 4]), traces([2, 1, 4, 3]), raw_covariance=True)
        assert raw.values[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_constant_rows(self):
        b = bif_from_traces(traces([[3, 3, 3]]), traces([[1, 5, 2]]))
        assert b.values[0, 0] == 0.0

    def test_self_influence_nonpositive(self):
        rng = np.random.default_rng(0)
        t = traces(rng.normal(size=(5, 40)))
        assert np.all(np.diag(bif_from_traces(t, t).values) <= 0)

    def test_column_mismatch(self):
        with pytest.raises(ValueError, match="column"):
            bif_from_traces(traces([1, 2, 3]), traces([1, 2]))

    def test_needs_two_draws(self):
        with pytest.raises(ValueError):
            bif_from_traces(traces([[1.0]]), traces([[2.0]]))

    def test_per_chain_centering(self):
        # each chain is constant but chains differ: global sees variance, per-chain does not
        t = traces([[0, 0, 5, 5]], chains=[0, 0, 1, 1])
        assert bif_from_traces(t, t).values[0, 0] < 0
        assert bif_from_traces(t, t, centering="per_chain").values[0, 0] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), rows=st.integers(1, 6), cols=st.integers(2, 30))
    def test_symmetry(self, seed, rows, cols):
        t = traces(np.random.default_rng(seed).normal(size=(rows, cols)))
        b = bif_from_traces(t, t).values
        assert np.abs(b - b.T).max() <= 1e-12


class TestNormalized:
    def test_diagonal_is_minus_one(self):
        t = traces(np.random.default_rng(1).normal(size=(4, 30)))
        np.testing.assert_allclose(np.diag(normalized_bif(t, t).values), -1.0, atol=1e-15)

    def test_negated_observable(self):
        t = traces(np.random.default_rng(2).normal(size=(3, 30)))
        neg = traces(-t.values)
        np.testing.assert_allclose(np.diag(normalized_bif(t, neg).values), 1.0, atol=1e-15)

    def test_row_scale_invariance(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(4, 25))
        scaled = v.copy()
        scaled[2] *= 10.0
        a = normalized_bif(traces(v), traces(v)).values
        b = normalized_bif(traces(scaled), traces(v)).values
        np.testing.assert_array_equal(a[[0, 1, 3]], b[[0, 1, 3]])
        np.testing.assert_allclose(a[2], b[2], rtol=0, atol=1e-15)

    def test_zero_variance_flagged(self):
        t = traces([[1, 1, 1], [1, 2, 4]])
        with pytest.warns(RuntimeWarning, match="zero-variance"):
            b = normalized_bif(t, t)
        assert b.values[0, 1] == 0.0 and b.zero_variance[0, 1]
        assert b.normalized

    def test_bounded(self):
        rng = np.random.default_rng(4)
        b = normalized_bif(traces(rng.normal(size=(6, 12))), traces(rng.normal(size=(5, 12)))).values
        assert np.all(np.abs(b) <= 1.0)


class TestTrajectory:
    def test_single_checkpoint(self, ds, full_trace):
        tr = trajectory({400: full_trace.checkpoints[400]}, ds, 0, 1, FAST)
        assert len(tr) == 1 and tr.method == "bif"

    def test_empty(self, ds):
        with pytest.raises(ValueError):
            trajectory({}, ds, 0, 1, FAST)

    def test_checkpoint_seed_independent_of_others(self, ds, full_trace):
        c = full_trace.checkpoints
        a = bif_matrices({400: c[400]}, ds, FAST)
        b = bif_matrices({300: c[300], 400: c[400]}, ds, FAST)
        np.testing.assert_array_equal(a[400].values, b[400].values)

    def test_matrix_symmetric_on_checkpoint(self, ds, full_trace):
        big_l, big_phi = run_chains(full_trace.checkpoints[600], ds, range(8), range(8), FAST)
        b = bif_from_traces(big_l, big_phi).values
        assert np.abs(b - b.T).max() <= 1e-12
        assert np.all(np.diag(b) <= 0)

    def test_group_influence(self):
        b = BIFMatrix(np.arange(9.0).reshape(3, 3))
        assert group_influence(b, [0, 1], [0, 1]) == pytest.approx(2.0)
        assert group_influence(b, [0], [0], drop_same=False) == 0.0
        with pytest.raises(ValueError):
            group_influence(b, [0], [0])


class TestInfluenceTrajectory:
    def test_validates(self):
        with pytest.raises(ValueError):
            InfluenceTrajectory([0, 1], [1.0], "bif", 0, 1)
        with pytest.raises(ValueError):
            InfluenceTrajectory([1, 0], [1.0, 2.0], "bif", 0, 1)
        with pytest.raises(ValueError):
            InfluenceTrajectory([0, 1], [1.0, 2.0], "magic", 0, 1)

    def test_peaks(self):
        t = InfluenceTrajectory([0, 10, 20, 30], [0.0, -3.0, 2.0, 1.0], "bif", 0, 1)
        assert t.peak_epoch("abs") == 10
        assert t.peak_epoch("pos") == 20
        assert t.peak_epoch("neg") == 10
