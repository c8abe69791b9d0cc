import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nomad_projection.affinity import (
    NoiseModel,
    build_affinity,
    inverse_rank_weights,
    sample_heads,
    sample_noise_tails,
)
from nomad_projection.ann_index import ClusterAssignment, build_knn
from nomad_projection.errors import ConfigurationError, ParameterError


class TestInverseRankWeights:
    def test_single(self):
        assert inverse_rank_weights(1).tolist() == [1.0]

    def test_two_against_high_precision(self):
        mpmath.mp.dps = 40
        first = mpmath.e / (mpmath.e + mpmath.exp(mpmath.mpf(1) / 2))
        w = inverse_rank_weights(2)
        assert w[0] == pytest.approx(float(first), rel=1e-15)
        assert w[1] == pytest.approx(float(1 - first), rel=1e-15)
        assert w[0] == pytest.approx(0.622459, abs=1e-6)

    @given(st.integers(1, 500))
    def test_normalised_and_decreasing(self, k):
        w = inverse_rank_weights(k)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w > 0)
        assert np.all(np.diff(w) < 0)

    def test_zero(self):
        with pytest.raises(ParameterError):
            inverse_rank_weights(0)


class TestBuildAffinity:
    def setup_method(self):
        x = np.array([[0.0], [1.0], [3.0], [3.5], [100.0]])
        self.ca = ClusterAssignment.from_labels(x, [0, 0, 0, 0, 1])
        self.x = x

    def test_weights_follow_distance_order(self):
        aff = build_affinity(build_knn(self.x, self.ca, 3))
        nb, w = aff.of(0)
        assert nb.tolist() == [1, 2, 3]
        np.testing.assert_array_equal(w, inverse_rank_weights(3))

    def test_one_neighbor(self):
        aff = build_affinity(build_knn(self.x, self.ca, 1))
        nb, w = aff.of(2)
        assert nb.tolist() == [3] and w.tolist() == [1.0]

    def test_isolated_point(self):
        aff = build_affinity(build_knn(self.x, self.ca, 3))
        nb, w = aff.of(4)
        assert nb.size == 0 and w.size == 0
        assert 4 not in aff.heads()
        assert np.all(aff.weights[4] == 0)

    def test_rows_normalised(self):
        x = np.random.default_rng(0).normal(size=(300, 3))
        ca = ClusterAssignment.from_labels(x, np.arange(300) % 7)
        aff = build_affinity(build_knn(x, ca, 15))
        sums = aff.weights.sum(1)
        np.testing.assert_allclose(sums[aff.counts > 0], 1.0, atol=1e-12)


class TestSamplers:
    def test_single_eligible_head(self):
        rng = np.random.default_rng(0)
        assert set(sample_heads(np.array([3]), 100, rng).tolist()) == {3}

    def test_no_eligible_heads(self):
        with pytest.raises(ConfigurationError):
            sample_heads(np.array([], dtype=int), 4, np.random.default_rng(0))

    def test_batch_size(self):
        with pytest.raises(ParameterError):
            sample_heads(np.arange(3), 0, np.random.default_rng(0))

    @pytest.mark.parametrize("sampler", [sample_heads, sample_noise_tails])
    def test_uniform_within_one_percent(self, sampler):
        draws = sampler(np.arange(10), 10**6, np.random.default_rng(123))
        freq = np.bincount(draws, minlength=10) / 10**6
        assert np.all(np.abs(freq - 0.1) <= 0.01 * 0.1)

    @pytest.mark.parametrize("sampler", [sample_heads, sample_noise_tails])
    def test_same_seed_same_sequence(self, sampler):
        a = sampler(np.arange(50), 1000, np.random.default_rng(9))
        b = sampler(np.arange(50), 1000, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_noise_single(self):
        out = sample_noise_tails(np.array([7]), (4, 5), np.random.default_rng(1))
        assert out.shape == (4, 5) and np.all(out == 7)

    def test_noise_empty(self):
        with pytest.raises(ParameterError):
            sample_noise_tails(np.array([], dtype=int), 3, np.random.default_rng(1))


def test_noise_model():
    ca = ClusterAssignment.from_labels(np.arange(10.0)[:, None], [0] * 3 + [1] * 7)
    nm = NoiseModel.from_clusters(ca, 5)
    assert nm.cell_probs.tolist() == [0.3, 0.7]
    assert nm.cell_probs.sum() == 1.0
    with pytest.raises(ParameterError):
        NoiseModel(nm.cell_probs, 0)
