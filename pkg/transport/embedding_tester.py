import numpy as np
import pytest
from pydantic import ValidationError

from sampling.samplers import PointCloud
from transport.embedding import Embedding, embed


class EmbeddingTester:
    def test_identity(self):
        q = Embedding(kind="identity", input_dim=2, output_dim=2)
        np.testing.assert_array_equal(embed(q, PointCloud.of([[1.0, 2.0]])).points, [[1.0, 2.0]])

    def test_zero_pad(self):
        q = Embedding(kind="zero_pad", input_dim=2, output_dim=4)
        np.testing.assert_array_equal(embed(q, PointCloud.of([[1.0, 2.0]])).points, [[1.0, 2.0, 0.0, 0.0]])

    def test_linear_interp_midpoint(self):
        q = Embedding(kind="linear_interp_upsample", input_dim=2, output_dim=3)
        np.testing.assert_array_equal(embed(q, PointCloud.of([[0.0, 2.0]])).points, [[0.0, 1.0, 2.0]])

    def test_explicit_matrix(self):
        m = [[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]]
        q = Embedding(kind="explicit_matrix", input_dim=2, output_dim=3, matrix=m)
        np.testing.assert_array_equal(embed(q, PointCloud.of([[1.0, -1.0]])).points, [[1.0, -1.0, 2.0]])

    @pytest.mark.parametrize("kind,h,d", [("identity", 3, 3), ("zero_pad", 2, 5), ("linear_interp_upsample", 3, 7)])
    def test_matrix_agrees_with_apply(self, kind, h, d):
        q = Embedding(kind=kind, input_dim=h, output_dim=d)
        x = np.random.default_rng(0).normal(size=(6, h))
        np.testing.assert_allclose(q.apply(PointCloud.of(x)).points, x @ q.as_matrix().T, atol=1e-14)

    def test_invalid_combinations(self):
        with pytest.raises(ValidationError):
            Embedding(kind="identity", input_dim=2, output_dim=3)
        with pytest.raises(ValidationError):
            Embedding(kind="zero_pad", input_dim=4, output_dim=2)
        with pytest.raises(ValidationError):
            Embedding(kind="explicit_matrix", input_dim=2, output_dim=3, matrix=[[1.0, 0.0]])

    def test_dimension_mismatch(self):
        q = Embedding(kind="zero_pad", input_dim=2, output_dim=4)
        with pytest.raises(ValueError):
            q.apply(PointCloud.of([[1.0, 2.0, 3.0]]))
