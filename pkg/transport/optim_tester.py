import numpy as np
import pytest

from transport.optim import AdamState, OptimizerError, adam_step


class AdamStepTester:
    def test_zero_gradient_leaves_params(self):
        params = [np.array([1.0, -2.0]), np.ones((2, 2))]
        state = AdamState.for_parameters(params)
        new, _ = adam_step(state, params, [np.zeros(2), np.zeros((2, 2))])
        for p, q in zip(params, new):
            np.testing.assert_array_equal(p, q)

    def test_first_step_moves_by_learning_rate(self):
        state = AdamState(learning_rate=0.1, beta1=0.5, beta2=0.99)
        (theta,), state = adam_step(state, [np.zeros(())], [np.ones(())])
        assert theta == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
        assert state.t == 1

    @pytest.mark.parametrize("g", [1e-4, 0.3, -7.0, 250.0])
    def test_first_step_scale_invariance(self, g):
        state = AdamState(learning_rate=1e-3)
        (theta,), _ = adam_step(state, [np.zeros(1)], [np.array([g])])
        assert abs(theta[0]) == pytest.approx(1e-3, rel=1e-3)
        assert np.sign(theta[0]) == -np.sign(g)

    def test_split_state_equivalence(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=3), rng.normal(size=(2, 2))
        joint = AdamState.for_parameters([a, b], learning_rate=0.01)
        sa = AdamState.for_parameters([a], learning_rate=0.01)
        sb = AdamState.for_parameters([b], learning_rate=0.01)
        pa, pb = [a], [b]
        pj = [a, b]
        for _ in range(5):
            ga, gb = rng.normal(size=3), rng.normal(size=(2, 2))
            pj, _ = adam_step(joint, pj, [ga, gb])
            pa, _ = adam_step(sa, pa, [ga])
            pb, _ = adam_step(sb, pb, [gb])
        np.testing.assert_array_equal(pj[0], pa[0])
        np.testing.assert_array_equal(pj[1], pb[0])

    def test_second_moment_nonnegative(self):
        state = AdamState.for_parameters([np.zeros(4)])
        params = [np.zeros(4)]
        for g in ([1.0, -1.0, 0.0, 2.0], [-3.0, 0.5, 0.0, 0.0]):
            params, state = adam_step(state, params, [np.array(g)])
        assert np.all(state.v[0] >= 0)

    def test_non_finite_gradient_rejected(self):
        state = AdamState.for_parameters([np.zeros(2)])
        with pytest.raises(OptimizerError):
            adam_step(state, [np.zeros(2)], [np.array([np.inf, 0.0])])
        assert state.t == 0

    def test_shape_mismatch_rejected(self):
        state = AdamState.for_parameters([np.zeros(2)])
        with pytest.raises(OptimizerError):
            adam_step(state, [np.zeros(2)], [np.zeros(3)])

    def test_without_bias_correction_first_step_overshoots(self):
        state = AdamState(learning_rate=0.1, bias_correction=False)
        (theta,), _ = adam_step(state, [np.zeros(())], [np.ones(())])
        # m = 0.5, sqrt(v) = 0.1
        assert theta == pytest.approx(-0.5, rel=1e-6)
