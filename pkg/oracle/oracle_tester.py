import numpy as np
import pytest

from oracle.bound_verifier import affine_l2_distance_sq, verify_bound
from oracle.discrete_oracle import discrete_ot
from oracle.gaussian_oracle import (
    AffineMap,
    Gaussian,
    OracleError,
    QuadraticPotential,
    conjugate,
    embedded_ot_map,
    frechet_distance,
    gaussian_ot_map,
    gaussian_w2,
    sqrtm_psd,
)
from sampling.samplers import PointCloud
from transport.embedding import Embedding


def random_spd(rng, dim):
    a = rng.normal(size=(dim, dim))
    return a @ a.T + 0.5 * np.eye(dim)


def translation_case(delta, offset_gap, b=(1.0, -0.5)):
    """mu = N(0, I), nu = N(b, I), psi_hat = 1/2||y - b_hat||^2, G_hat = x + b_hat'."""
    b = np.array(b)
    b_hat = b + np.asarray(delta)
    b_hat_prime = b_hat + np.asarray(offset_gap)
    mu = Gaussian(np.zeros(2), np.eye(2))
    nu = Gaussian(b, np.eye(2))
    return mu, nu, QuadraticPotential(np.eye(2), b_hat), AffineMap(np.eye(2), b_hat_prime)


class GaussianTester:
    def test_rejects_asymmetric(self):
        with pytest.raises(OracleError):
            Gaussian(np.zeros(2), [[1.0, 0.5], [0.0, 1.0]])

    def test_clamps_tiny_negative_eigenvalues(self):
        g = Gaussian(np.zeros(2), [[1.0, 1.0], [1.0, 1.0 - 1e-12]])
        assert np.linalg.eigvalsh(g.covariance).min() >= -1e-15

    def test_rejects_indefinite(self):
        with pytest.raises(OracleError):
            Gaussian(np.zeros(2), np.diag([1.0, -0.1]))

    def test_from_samples_needs_enough_points(self):
        with pytest.raises(OracleError):
            Gaussian.from_samples(PointCloud.of(np.zeros((2, 2))))

    def test_sqrtm_squares_back(self):
        rng = np.random.default_rng(0)
        for dim in (1, 2, 5):
            s = random_spd(rng, dim)
            root = sqrtm_psd(s)
            assert np.linalg.norm(root @ root - s) < 1e-9


class GaussianOtMapTester:
    def test_pure_translation(self):
        t = gaussian_ot_map(Gaussian(np.zeros(2), np.eye(2)), Gaussian([2.0, 0.0], np.eye(2)))
        np.testing.assert_allclose(t.matrix, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(t.offset, [2.0, 0.0], atol=1e-12)

    def test_one_dimensional_scaling(self):
        t = gaussian_ot_map(Gaussian([0.0], [[1.0]]), Gaussian([0.0], [[4.0]]))
        assert t.matrix[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_singular_source_rejected(self):
        with pytest.raises(OracleError):
            gaussian_ot_map(Gaussian(np.zeros(2), np.diag([1.0, 0.0])), Gaussian(np.zeros(2), np.eye(2)))

    def test_pushforward_moments(self):
        rng = np.random.default_rng(1)
        mu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        nu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        n = 100_000
        pushed = gaussian_ot_map(mu, nu).apply(mu.sample(n, rng)).points
        stderr_mean = np.sqrt(np.diag(nu.covariance) / n)
        assert np.all(np.abs(pushed.mean(axis=0) - nu.mean) < 3 * stderr_mean)
        cov = np.cov(pushed, rowvar=False)
        # var of a sample covariance entry: (S_ij^2 + S_ii S_jj) / n
        s = nu.covariance
        stderr_cov = np.sqrt((s ** 2 + np.outer(np.diag(s), np.diag(s))) / n)
        assert np.all(np.abs(cov - s) < 3 * stderr_cov)

    def test_affine_map_pushforward_is_exact(self):
        rng = np.random.default_rng(2)
        mu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        nu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        pushed = gaussian_ot_map(mu, nu).pushforward(mu)
        np.testing.assert_allclose(pushed.mean, nu.mean, atol=1e-10)
        np.testing.assert_allclose(pushed.covariance, nu.covariance, atol=1e-9)


class GaussianW2Tester:
    def test_identical(self):
        g = Gaussian([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
        assert gaussian_w2(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_translation(self):
        assert gaussian_w2(Gaussian([0.0], [[1.0]]), Gaussian([2.0], [[1.0]])) == pytest.approx(2.0)

    def test_scaling(self):
        assert gaussian_w2(Gaussian([0.0], [[1.0]]), Gaussian([0.0], [[4.0]])) == pytest.approx(0.5)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = Gaussian(rng.normal(size=3), random_spd(rng, 3))
        b = Gaussian(rng.normal(size=3), random_spd(rng, 3))
        assert abs(gaussian_w2(a, b) - gaussian_w2(b, a)) < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(OracleError):
            gaussian_w2(Gaussian([0.0], [[1.0]]), Gaussian([0.0, 0.0], np.eye(2)))

    def test_analytic_map_attains_cost(self):
        rng = np.random.default_rng(4)
        mu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        nu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        x = mu.sample(10_000, rng).points
        costs = 0.5 * np.sum((x - gaussian_ot_map(mu, nu)(x)) ** 2, axis=1)
        stderr = costs.std(ddof=1) / np.sqrt(len(costs))
        assert abs(costs.mean() - gaussian_w2(mu, nu)) < 3 * stderr

    def test_frechet_is_twice_w2(self):
        rng = np.random.default_rng(5)
        a = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        b = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        assert abs(frechet_distance(a, b) - 2 * gaussian_w2(a, b)) < 1e-9


class EmbeddedOtMapTester:
    def test_identity_embedding_matches_plain_map(self):
        rng = np.random.default_rng(6)
        mu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        nu = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        plain = gaussian_ot_map(mu, nu)
        embedded = embedded_ot_map(mu, nu, np.eye(2))
        np.testing.assert_allclose(embedded.matrix, plain.matrix, atol=1e-9)
        np.testing.assert_allclose(embedded.offset, plain.offset, atol=1e-9)

    def test_rank_two_target_in_four_dimensions(self):
        c = 0.5
        lift = np.vstack([np.eye(2), c * np.eye(2)])
        b = np.array([1.0, -1.0, 0.5, 2.0])
        mu = Gaussian(np.zeros(2), np.eye(2))
        nu = Gaussian(b, lift @ lift.T)
        q = Embedding(kind="zero_pad", input_dim=2, output_dim=4).as_matrix()
        g_star = embedded_ot_map(mu, nu, q)
        np.testing.assert_allclose(g_star.matrix, lift, atol=1e-9)
        np.testing.assert_allclose(g_star.offset, b, atol=1e-9)

    def test_full_rank_target_has_no_map(self):
        q = Embedding(kind="zero_pad", input_dim=2, output_dim=4).as_matrix()
        with pytest.raises(OracleError):
            embedded_ot_map(Gaussian(np.zeros(2), np.eye(2)), Gaussian(np.ones(4), np.eye(4)), q)


class DiscreteOtTester:
    def test_same_points(self):
        cloud = PointCloud.of(np.random.default_rng(0).normal(size=(6, 2)))
        perm, cost = discrete_ot(cloud, cloud)
        np.testing.assert_array_equal(perm, np.arange(6))
        assert cost == 0.0

    def test_one_dimensional_monotone(self):
        for method in ("exhaustive", "assignment"):
            perm, cost = discrete_ot(PointCloud.of([[0.0], [1.0]]), PointCloud.of([[1.0], [2.0]]), method=method)
            np.testing.assert_array_equal(perm, [0, 1])
            assert cost == 0.5

    def test_solvers_agree_exactly(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            X = PointCloud.of(rng.normal(size=(7, 2)))
            Y = PointCloud.of(rng.normal(size=(7, 2)))
            _, brute = discrete_ot(X, Y, method="exhaustive")
            _, fast = discrete_ot(X, Y, method="assignment")
            assert brute == fast

    def test_unequal_cardinality(self):
        with pytest.raises(OracleError):
            discrete_ot(PointCloud.of(np.zeros((3, 2))), PointCloud.of(np.zeros((4, 2))))

    def test_approaches_gaussian_cost(self):
        rng = np.random.default_rng(8)
        mu = Gaussian(np.zeros(2), np.eye(2))
        nu = Gaussian([1.5, 0.0], np.diag([2.0, 0.5]))
        exact = gaussian_w2(mu, nu)
        gaps = [abs(discrete_ot(mu.sample(n, rng), nu.sample(n, rng))[1] - exact) for n in (32, 128, 512)]
        assert gaps[2] < gaps[0]


class ConjugateTester:
    def test_self_conjugate(self):
        x = np.array([1.0, -2.0])
        y, value = conjugate(QuadraticPotential(np.eye(2), np.zeros(2)), x)
        np.testing.assert_allclose(y, x)
        assert value == pytest.approx(2.5)

    def test_half_curvature(self):
        x = np.array([1.0, 3.0])
        y, value = conjugate(QuadraticPotential(0.5 * np.eye(2), np.zeros(2)), x)
        np.testing.assert_allclose(y, 2 * x)
        assert value == pytest.approx(10.0)

    def test_matches_gradient_ascent(self):
        rng = np.random.default_rng(9)
        psi = QuadraticPotential(random_spd(rng, 3), rng.normal(size=3), constant=0.7)
        x = rng.normal(size=3)
        y_star, value = conjugate(psi, x)
        y = np.zeros(3)
        step = 1.0 / np.linalg.eigvalsh(psi.curvature).max()
        for _ in range(5000):
            y = y + step * (x - psi.gradient(y)[0])
        assert abs((x @ y - psi.value(y)[0]) - value) < 1e-6
        np.testing.assert_allclose(y, y_star, atol=1e-5)

    def test_batched(self):
        psi = QuadraticPotential(2 * np.eye(2), np.ones(2))
        xs = np.array([[0.0, 0.0], [2.0, 4.0]])
        ys, values = conjugate(psi, xs)
        np.testing.assert_allclose(ys, [[1.0, 1.0], [2.0, 3.0]])
        assert values.shape == (2,)


class VerifyBoundTester:
    def test_colinear_case_is_tight(self):
        report = verify_bound(*translation_case([0.3, 0.0], [0.4, 0.0]), n_mc=100_000)
        assert report.epsilon_1 == pytest.approx(0.08, abs=1e-9)
        assert report.epsilon_2 == pytest.approx(0.045, abs=1e-9)
        assert report.map_error_sq == pytest.approx(0.49, abs=1e-9)
        assert abs(report.bound - report.map_error_sq) < 1e-6
        assert report.twice_w2_sq == pytest.approx(0.49, abs=1e-9)
        assert report.holds

    def test_opposite_directions_leave_slack(self):
        report = verify_bound(*translation_case([0.3, 0.0], [-0.4, 0.0]))
        assert report.map_error_sq == pytest.approx(0.01, abs=1e-9)
        assert report.bound == pytest.approx(0.49, abs=1e-6)
        assert report.holds

    def test_exact_solution(self):
        report = verify_bound(*translation_case([0.0, 0.0], [0.0, 0.0]))
        for value in (report.epsilon_1, report.epsilon_2, report.map_error_sq, report.twice_w2_sq, report.bound):
            assert abs(value) < 1e-9
        assert report.holds

    def test_random_configurations(self):
        rng = np.random.default_rng(10)
        for k in range(50):
            report = verify_bound(*translation_case(rng.normal(scale=0.5, size=2), rng.normal(scale=0.5, size=2)),
                                  n_mc=100_000, seed=k)
            assert report.holds
            assert report.frechet <= report.twice_w2_sq + 1e-9

    def test_curved_potential_and_linear_map(self):
        rng = np.random.default_rng(11)
        mu = Gaussian(np.zeros(2), np.eye(2))
        nu = Gaussian([0.5, 1.0], np.diag([2.0, 0.5]))
        psi = QuadraticPotential(random_spd(rng, 2), rng.normal(size=2))
        g_hat = AffineMap(np.eye(2) + 0.2 * rng.normal(size=(2, 2)), rng.normal(size=2))
        report = verify_bound(mu, nu, psi, g_hat, n_mc=100_000)
        assert report.holds

    def test_affine_distance_closed_form(self):
        mu = Gaussian([1.0, 0.0], np.diag([2.0, 1.0]))
        a = AffineMap(np.eye(2), np.zeros(2))
        b = AffineMap(np.zeros((2, 2)), np.zeros(2))
        # E||x||^2 = ||m||^2 + tr(S)
        assert affine_l2_distance_sq(a, b, mu) == pytest.approx(4.0)
