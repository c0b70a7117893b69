import numpy as np
import pytest

from evaluation.metrics import (
    EVAL_COLUMNS,
    empirical_transport_cost,
    empirical_w2,
    evaluate_map,
    frechet_gaussian,
    l2_uvp,
)
from oracle.discrete_oracle import cost_matrix
from oracle.gaussian_oracle import AffineMap, Gaussian, gaussian_w2
from sampling.samplers import PointCloud
from transport.embedding import Embedding

IDENTITY = AffineMap(np.eye(2), np.zeros(2))
IDENTITY_Q = Embedding(kind="identity", input_dim=2, output_dim=2)


def samples(n=1000, seed=0, dim=2):
    return PointCloud.of(np.random.default_rng(seed).normal(size=(n, dim)))


class L2UvpTester:
    def test_exact_map(self):
        t = AffineMap(np.eye(2), [2.0, 0.0])
        assert l2_uvp(t, t, samples(), 2.0) == 0.0

    def test_constant_offset(self):
        t = AffineMap(np.eye(2), [2.0, 0.0])
        g = AffineMap(np.eye(2), [2.2, 0.0])
        assert l2_uvp(g, t, samples(), 2.0) == pytest.approx(2.0)

    def test_unfit_baseline(self):
        t = AffineMap(np.eye(2), [2.0, 0.0])
        assert l2_uvp(IDENTITY, t, samples(), 2.0) == pytest.approx(200.0)

    def test_shared_perturbation_cancels(self):
        x = samples(seed=3)
        g = AffineMap([[1.1, 0.2], [0.0, 0.9]], [0.1, -0.3])
        t = AffineMap(np.eye(2), [1.0, 0.0])
        shift = np.array([0.5, -2.0])
        g2 = AffineMap(g.matrix, g.offset + shift)
        t2 = AffineMap(t.matrix, t.offset + shift)
        assert l2_uvp(g, t, x, 3.0) == pytest.approx(l2_uvp(g2, t2, x, 3.0), rel=1e-12)

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            l2_uvp(IDENTITY, IDENTITY, samples(), 0.0)


class FrechetGaussianTester:
    def test_equal_covariances(self):
        a, b = Gaussian([0.0], [[1.0]]), Gaussian([2.0], [[1.0]])
        assert frechet_gaussian(a, b) == pytest.approx(4.0)
        assert 2 * gaussian_w2(a, b) == pytest.approx(4.0)

    def test_identical_inputs(self):
        cloud = samples(500, seed=1)
        assert frechet_gaussian(cloud, cloud) == pytest.approx(0.0, abs=1e-9)

    def test_symmetry(self):
        a, b = samples(300, seed=1), PointCloud.of(samples(300, seed=2).points * [2.0, 0.5] + 1.0)
        assert abs(frechet_gaussian(a, b) - frechet_gaussian(b, a)) < 1e-10

    def test_mixed_inputs(self):
        cloud = samples(200, seed=4)
        fitted = Gaussian.from_samples(cloud)
        assert frechet_gaussian(cloud, Gaussian(np.zeros(2), np.eye(2))) == \
            pytest.approx(frechet_gaussian(fitted, Gaussian(np.zeros(2), np.eye(2))))


class TransportCostTester:
    def test_identity(self):
        assert empirical_transport_cost(IDENTITY, IDENTITY_Q, samples()) == 0.0

    def test_unit_shift(self):
        g = AffineMap(np.eye(2), [1.0, 0.0])
        assert empirical_transport_cost(g, IDENTITY_Q, samples()) == pytest.approx(0.5)

    def test_map_matching_zero_pad(self):
        q = Embedding(kind="zero_pad", input_dim=2, output_dim=4)
        g = AffineMap(np.eye(4, 2), np.zeros(4))
        assert empirical_transport_cost(g, q, samples()) == 0.0


class EmpiricalW2Tester:
    def test_same_cloud(self):
        cloud = samples(50)
        assert empirical_w2(cloud, cloud) == 0.0

    def test_monotone_one_dimensional(self):
        assert empirical_w2(PointCloud.of([[0.0], [1.0]]), PointCloud.of([[1.0], [2.0]])) == 0.5

    def test_not_worse_than_fixed_pairing(self):
        rng = np.random.default_rng(5)
        X, Y = PointCloud.of(rng.normal(size=(60, 2))), PointCloud.of(rng.normal(size=(60, 2)) + 1.0)
        fixed_pairing = np.mean(np.diag(cost_matrix(X, Y)))
        assert empirical_w2(X, Y) <= fixed_pairing


class EvaluateMapTester:
    def test_report_row(self):
        x, y = samples(600, seed=1), samples(600, seed=2)
        t = AffineMap(np.eye(2), [0.0, 0.0])
        report = evaluate_map(IDENTITY, IDENTITY_Q, x, y, seed=9, T_star=t, nu_variance=2.0, iteration=4)
        row = report.to_row()
        assert list(row) == EVAL_COLUMNS
        assert row["l2_uvp_percent"] == 0.0
        assert row["sample_count"] == 600 and row["seed"] == 9 and row["iteration"] == 4
        assert row["empirical_w2_pushforward_vs_target"] >= 0

    def test_without_reference_map(self):
        report = evaluate_map(IDENTITY, IDENTITY_Q, samples(100, seed=1), samples(100, seed=2), seed=0)
        assert report.l2_uvp_percent is None
