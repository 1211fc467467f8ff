import numpy as np
import pytest

from stagewise.classical_if import (
    DampingSpec,
    SingularDampingError,
    classical_trajectory,
    damped_if,
    damped_system,
    factor_damped,
    influence_from_gradients,
    spectral_bound,
)
from stagewise.linnet import LinearNet, gauss_newton


class TestDampingSpec:
    def test_hessian_needs_damping(self):
        with pytest.raises(ValueError):
            DampingSpec(0.0, "hessian")
        assert DampingSpec(0.0, "gnh").method == "classical_gnh"

    def test_kind(self):
        with pytest.raises(ValueError):
            DampingSpec(0.1, "fisher")


class TestSpectralBound:
    def test_indefinite(self):
        m = np.diag([3.0, -5.0, 1.0])
        assert spectral_bound(m) == pytest.approx(5.0, rel=1e-6)

    def test_plus_minus_pair(self):
        m = np.diag([2.0, -2.0])
        assert spectral_bound(m) == pytest.approx(2.0, rel=1e-6)

    def test_zero(self):
        assert spectral_bound(np.zeros((3, 3))) == 0.0


class TestRegularQuadratic:
    """l_i(w) = (w - a_i)^2 / 2 with n samples: M = n and IF has a closed form."""

    a = np.array([0.3, -1.2, 2.0, 0.7])
    w = 0.45

    def closed_form(self, i, j, gamma_rel):
        n = self.a.size
        return -(self.w - self.a[j]) * (self.w - self.a[i]) / (n + gamma_rel * n)

    @pytest.mark.parametrize("gamma_rel", [0.0, 1e-9, 1e-3, 0.5])
    def test_matches(self, gamma_rel):
        sys_ = factor_damped(np.array([[float(self.a.size)]]), gamma_rel)
        for i in range(4):
            for j in range(4):
                got = influence_from_gradients(np.array([self.w - self.a[i]]), np.array([self.w - self.a[j]]), sys_)
                assert got == pytest.approx(self.closed_form(i, j, gamma_rel), abs=1e-6)

    def test_gamma_limit(self):
        sys_ = factor_damped(np.array([[4.0]]), 1e-12)
        got = influence_from_gradients(np.array([self.w - self.a[0]]), np.array([self.w - self.a[1]]), sys_)
        assert abs(got - self.closed_form(0, 1, 0.0)) <= 1e-6


class TestDampedIF:
    def test_zero_gradient(self, ds, trained_net):
        # every sample is fit at convergence up to ~1e-5, so build a truly zero one
        net = LinearNet(np.zeros((3, 8)), np.zeros((15, 3)))
        assert damped_if(net, ds, 0, 1, DampingSpec()) == 0.0

    def test_self_influence_nonpositive(self, ds, full_trace):
        for e in (300, 600, 1000):
            assert damped_if(full_trace.checkpoints[e], ds, 0, 0, DampingSpec(1.0, "gnh")) <= 0

    def test_system_reuse(self, ds, full_trace):
        net = full_trace.checkpoints[500]
        spec = DampingSpec(0.1, "gnh")
        sys_ = damped_system(net, ds, spec)
        assert damped_if(net, ds, 0, 1, spec, system=sys_) == damped_if(net, ds, 0, 1, spec)

    def test_residual_check(self, ds, full_trace):
        net = full_trace.checkpoints[500]
        sys_ = damped_system(net, ds, DampingSpec(0.1, "gnh"))
        g = np.random.default_rng(0).normal(size=net.n_params)
        x = sys_.solve(g)
        assert np.linalg.norm(sys_.matrix @ x - g) <= 1e-8 * np.linalg.norm(g)
        assert sys_.gamma_star == pytest.approx(0.1 * np.abs(np.linalg.eigvalsh(gauss_newton(net, ds))).max(), rel=1e-5)

    def test_singular_gnh_without_damping(self, ds, full_trace):
        with pytest.raises(SingularDampingError, match="larger gamma_rel"):
            damped_system(full_trace.checkpoints[500], ds, DampingSpec(0.0, "gnh"))

    def test_indefinite_hessian_small_damping(self, ds, full_trace):
        with pytest.raises(SingularDampingError, match="larger gamma_rel"):
            damped_system(full_trace.checkpoints[300], ds, DampingSpec(1e-4, "hessian"))


class TestTrajectory:
    def test_zero_checkpoint(self, ds):
        ckpt = {0: LinearNet(np.zeros((3, 8)), np.zeros((15, 3)))}
        t = classical_trajectory(ckpt, ds, 0, 1, DampingSpec())
        assert t.values.tolist() == [0.0]

    def test_empty(self, ds):
        with pytest.raises(ValueError):
            classical_trajectory({}, ds, 0, 1, DampingSpec())

    def test_sign_pattern_shared_across_damping(self, ds, full_trace):
        marks = range(0, 1501, 50)
        ckpts = {e: full_trace.checkpoints[e] for e in marks}
        dog, cat = ds.index("dog"), ds.index("cat")
        lo = classical_trajectory(ckpts, ds, dog, cat, DampingSpec(1e-3, "gnh"))
        hi = classical_trajectory(ckpts, ds, dog, cat, DampingSpec(10.0, "gnh"))
        for t in (lo, hi):
            assert t.values.min() < 0 < t.values.max()
            # early negative dip comes before the positive peak
            assert t.peak_epoch("neg") < t.peak_epoch("pos")
        assert np.abs(lo.values).max() > np.abs(hi.values).max()
