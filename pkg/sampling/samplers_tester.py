import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError
from scipy.stats import chisquare

from sampling.samplers import (
    DatasetSampler,
    DatasetSpec,
    PointCloud,
    SamplerError,
    sample,
    total_variance,
)


class PointCloudTester:
    def test_shape_checked(self):
        with pytest.raises(SamplerError):
            PointCloud(dim=3, points=np.zeros((4, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(SamplerError):
            PointCloud.of([[0.0, np.nan]])

    def test_empty_cloud(self):
        cloud = PointCloud(dim=2, points=np.zeros((0, 2)))
        assert len(cloud) == 0


class DatasetSpecTester:
    def test_gaussian_cov_shape(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="gaussian", mean=[0, 0], cov=[[1.0]])

    def test_degraded_pair_needs_base(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="degraded_pair")

    def test_mask_inside_base(self):
        with pytest.raises(ValidationError):
            DatasetSpec(kind="degraded_pair", base={"kind": "swiss_roll"},
                        degradation={"kind": "coordinate_mask", "masked": [2]})

    def test_dims(self):
        assert DatasetSpec(kind="gaussian", mean=[0, 0, 0, 0]).dim == 4
        assert DatasetSpec(kind="two_moons").dim == 2
        assert DatasetSpec(kind="degraded_pair", base={"kind": "s_curve"}).dim == 2


class SampleTester:
    def test_gaussian_moments(self):
        spec = DatasetSpec(kind="gaussian", mean=[0.0, 0.0], seed=4)
        points = sample(spec, 100_000).points
        n = len(points)
        # mean: standard error 1/sqrt(n); covariance entries: roughly sqrt(2/n) on the diagonal, sqrt(1/n) off it
        assert np.all(np.abs(points.mean(axis=0)) < 3 / np.sqrt(n))
        cov = np.cov(points, rowvar=False)
        assert np.all(np.abs(np.diag(cov) - 1.0) < 3 * np.sqrt(2 / n))
        assert abs(cov[0, 1]) < 3 / np.sqrt(n)

    def test_ring_components_uniform(self):
        spec = DatasetSpec(kind="gaussian_mixture_ring", components=8, radius=4.0, component_std=0.4, seed=9)
        points = sample(spec, 80_000).points
        angles = 2 * np.pi * np.arange(8) / 8
        centers = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        nearest = np.argmin(((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1), axis=1)
        counts = np.bincount(nearest, minlength=8)
        assert chisquare(counts).pvalue > 0.001

    def test_zero_degradation_matches_base(self):
        base = {"kind": "swiss_roll", "seed": 3}
        spec = DatasetSpec(kind="degraded_pair", base=base, degradation={"sigma": 0.0}, seed=5)
        np.testing.assert_array_equal(sample(spec, 50, 1000).points,
                                      sample(DatasetSpec(**base), 50, 1000).points)

    def test_noise_degradation_variance(self):
        base = DatasetSpec(kind="two_moons", seed=1)
        spec = DatasetSpec(kind="degraded_pair", base=base, degradation={"sigma": 0.3}, seed=2)
        diff = sample(spec, 20_000).points - sample(base, 20_000).points
        assert np.std(diff) == pytest.approx(0.3, rel=0.03)

    def test_coordinate_mask(self):
        spec = DatasetSpec(kind="degraded_pair", base={"kind": "circles"},
                           degradation={"kind": "coordinate_mask", "masked": [1]})
        points = sample(spec, 100).points
        assert np.all(points[:, 1] == 0.0)
        assert np.any(points[:, 0] != 0.0)

    @pytest.mark.parametrize("kind", ["gaussian_mixture_ring", "two_moons", "circles", "s_curve", "swiss_roll"])
    def test_toy_kinds_are_planar(self, kind):
        cloud = sample(DatasetSpec(kind=kind), 64)
        assert cloud.points.shape == (64, 2)

    def test_negative_count_rejected(self):
        with pytest.raises(SamplerError):
            sample(DatasetSpec(kind="circles"), -1)

    def test_distinct_seeds_differ(self):
        a = sample(DatasetSpec(kind="gaussian", seed=1), 10).points
        b = sample(DatasetSpec(kind="gaussian", seed=2), 10).points
        assert not np.allclose(a, b)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(0, 3000), m=st.integers(0, 3000), p=st.integers(0, 5000))
    def test_stream_windows_compose(self, n, m, p):
        spec = DatasetSpec(kind="two_moons", seed=7)
        whole = sample(spec, n + m, p).points
        np.testing.assert_array_equal(sample(spec, n, p).points, whole[:n])
        np.testing.assert_array_equal(sample(spec, m, p + n).points, whole[n:])


class DatasetSamplerTester:
    def test_draw_advances(self):
        spec = DatasetSpec(kind="s_curve", seed=2)
        sampler = DatasetSampler(spec)
        first = sampler.draw(10)
        second = sampler.draw(5)
        assert sampler.position == 15
        np.testing.assert_array_equal(np.vstack([first.points, second.points]), sample(spec, 15).points)

    def test_clone_is_independent(self):
        sampler = DatasetSampler(DatasetSpec(kind="circles"))
        sampler.draw(3)
        clone = sampler.clone()
        clone.draw(4)
        assert sampler.position == 3 and clone.position == 7


class TotalVarianceTester:
    def test_gaussian_trace(self):
        assert total_variance(DatasetSpec(kind="gaussian", mean=[0, 0], cov=[[4, 0], [0, 1]])) == 5.0

    def test_ring_matches_monte_carlo(self):
        spec = DatasetSpec(kind="gaussian_mixture_ring", seed=3)
        points = sample(spec, 50_000).points
        empirical = np.trace(np.cov(points, rowvar=False))
        assert total_variance(spec) == pytest.approx(empirical, rel=0.02)
