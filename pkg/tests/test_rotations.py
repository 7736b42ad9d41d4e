import numpy as np
import pytest
from scipy import stats

from rosanna.rotations import OrthoBasis, gen_basis, gen_bases, project, unproject


class TestGenBases:
    def test_single_basis_is_identity(self):
        bs = gen_bases(5, 1, seed=3)
        assert bs.r_count == 1
        np.testing.assert_array_equal(bs[0].matrix, np.eye(5))

    @pytest.mark.parametrize("seed", [0, 1, 99])
    def test_orthogonal(self, seed):
        for b in gen_bases(16, 8, seed):
            m = b.matrix
            assert np.abs(m.T @ m - np.eye(16)).max() < 1e-6

    def test_isometry(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((10**4, 8))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        for b in gen_bases(8, 4, seed=2):
            np.testing.assert_allclose(np.linalg.norm(project(b, v), axis=1), 1.0, atol=1e-5)

    def test_independent_of_generation_order(self):
        full = gen_bases(6, 5, seed=9)
        np.testing.assert_array_equal(gen_basis(6, 3, 9).matrix, full[3].matrix)

    def test_seeds_differ(self):
        a, b = gen_basis(6, 1, 0), gen_basis(6, 1, 1)
        assert not np.allclose(a.matrix, b.matrix)

    def test_invalid(self):
        with pytest.raises(ValueError):
            gen_bases(0, 1)
        with pytest.raises(ValueError):
            gen_bases(3, 0)

    def test_rotated_vector_lands_uniformly_in_octants(self):
        # a fixed vector under Haar rotations is uniform on the sphere
        v = np.array([1.0, 0.0, 0.0])
        counts = np.zeros(8)
        for i in range(1, 2001):
            y = project(gen_basis(3, i, 4), v)
            counts[int((y[0] >= 0) * 4 + (y[1] >= 0) * 2 + (y[2] >= 0))] += 1
        assert stats.chisquare(counts).pvalue > 1e-3


class TestProject:
    def test_identity(self):
        v = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(project(gen_basis(3, 0, 0), v), v)

    def test_round_trip(self):
        b = gen_basis(7, 2, 1)
        v = np.random.default_rng(0).standard_normal(7)
        np.testing.assert_allclose(unproject(b, project(b, v)), v, atol=1e-5)

    def test_quarter_turn(self):
        # columns are the rotated axes: e1 -> (0, 1), e2 -> (-1, 0)
        m = np.array([[0.0, -1.0], [1.0, 0.0]])
        b = OrthoBasis(m, 1, 0)
        np.testing.assert_allclose(project(b, [1.0, 0.0]), [0.0, -1.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            project(gen_basis(3, 0, 0), np.zeros(4))
