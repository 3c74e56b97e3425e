import math

import numpy as np
import pytest

from glmdiar.clustering import (
    AffinityMatrix,
    ClusteringConfig,
    RefinementConfig,
    build_affinity,
    canonical_labels,
    cluster_windows,
    estimate_num_speakers,
    refine_affinity,
    relabel_segments,
    spectral_cluster,
)
from glmdiar.numerics import ContractError, EigenDecomposition, sym_eig

from conftest import cone_embeddings


def same_partition(a, b):
    return np.array_equal(canonical_labels(a), canonical_labels(b))


class TestAffinity:
    def test_identical(self):
        np.testing.assert_allclose(build_affinity([[1, 2], [1, 2]]).values, np.ones((2, 2)), atol=1e-15)

    def test_orthogonal(self):
        np.testing.assert_array_equal(build_affinity([[1, 0], [0, 1]]).values, np.eye(2))

    def test_three_vectors(self):
        a = build_affinity([[1, 0], [1, 1], [0, 1]]).values
        r = 1 / math.sqrt(2)
        np.testing.assert_allclose([a[0, 1], a[0, 2], a[1, 2]], [r, 0, r], atol=1e-15)

    def test_zero_embedding_named(self):
        with pytest.raises(ContractError, match="window 2"):
            build_affinity([[1, 0], [0, 1], [0, 0]])

    def test_needs_two(self):
        with pytest.raises(ContractError):
            build_affinity([[1, 0]])

    def test_symmetric_unit_diagonal(self, rng):
        a = build_affinity(rng.normal(size=(30, 5))).values
        assert np.array_equal(a, a.T) and np.all(np.diag(a) == 1.0)


class TestRefine:
    def test_keep_all_is_identity(self, rng):
        a = build_affinity(np.abs(rng.normal(size=(10, 4))))
        cfg = RefinementConfig(1.0, apply_symmetrise=False, apply_row_max_normalise=False)
        np.testing.assert_array_equal(refine_affinity(a, cfg).values, a.values)

    def test_keep_all_with_normalisation_is_identity(self, rng):
        # cosine affinities already have unit row maxima on the diagonal
        a = build_affinity(np.abs(rng.normal(size=(10, 4))))
        np.testing.assert_allclose(refine_affinity(a, RefinementConfig(1.0)).values, a.values,
                                   atol=1e-15)

    def test_block_matrix_stays_block_dominant(self):
        a = np.full((6, 6), 0.2)
        a[:3, :3] = a[3:, 3:] = 0.9
        np.fill_diagonal(a, 1.0)
        out = refine_affinity(AffinityMatrix(a), RefinementConfig(0.5)).values
        # direct evaluation: off-block 0.2 falls below every row's median and shrinks
        assert out[0, 4] == pytest.approx(0.002, abs=1e-15)
        assert out[0, 1] == pytest.approx(0.9, abs=1e-15)

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    @pytest.mark.parametrize("deg", [False, True])
    def test_symmetric(self, rng, p, deg):
        a = build_affinity(rng.normal(size=(25, 6)))
        out = refine_affinity(a, RefinementConfig(p, apply_degree_normalise=deg)).values
        assert np.max(np.abs(out - out.T)) < 1e-12

    def test_percentile_range(self):
        with pytest.raises(ContractError):
            RefinementConfig(0.0)


class TestEstimate:
    def eig(self, values):
        return EigenDecomposition(np.array(values), np.eye(len(values)))

    def test_gap_after_third(self):
        assert estimate_num_speakers(self.eig([3.0, 2.9, 2.8, 0.1, 0.05])) == 3

    def test_all_equal(self):
        assert estimate_num_speakers(self.eig([1.0] * 6)) == 2

    def test_few_windows(self):
        assert estimate_num_speakers(self.eig([2.0, 1.0])) == 2

    def test_clamped_to_max(self):
        assert estimate_num_speakers(self.eig([1] * 8 + [0, 0]), max_k=4) <= 4

    def test_block_matrix(self):
        sizes = (4, 3, 3)
        a = np.zeros((10, 10))
        i = 0
        for s in sizes:
            a[i:i + s, i:i + s] = 1.0
            i += s
        # brute force: the all-ones blocks have eigenvalues equal to their sizes
        eig = sym_eig(a)
        np.testing.assert_allclose(eig.eigenvalues[:3], [4, 3, 3], atol=1e-12)
        assert estimate_num_speakers(eig) == 3

    def test_never_below_two(self, rng):
        for _ in range(20):
            vals = np.sort(rng.uniform(size=8))[::-1]
            assert estimate_num_speakers(self.eig(vals)) >= 2


class TestSpectral:
    def test_two_pairs(self):
        e = [[1, 0], [1, 0], [0, 1], [0, 1]]
        labels = spectral_cluster(build_affinity(e), 2, 0)
        assert labels[0] == labels[1] != labels[2] == labels[3]

    def test_k_equals_n(self, rng):
        e = np.abs(rng.normal(size=(5, 5))) + np.eye(5) * 5
        labels = spectral_cluster(build_affinity(e), 5, 0)
        assert labels.min() >= 0 and labels.max() < 5

    def test_k_out_of_range(self):
        with pytest.raises(ContractError):
            spectral_cluster(build_affinity([[1, 0], [0, 1]]), 3, 0)

    def test_permutation_invariance(self, rng):
        e, _ = cone_embeddings(3, 10, rng)
        perm = rng.permutation(len(e))
        a = spectral_cluster(build_affinity(e), 3, 0)
        b = spectral_cluster(build_affinity(e[perm]), 3, 0)
        assert same_partition(a[perm], b)


class TestRelabel:
    def test_single(self):
        assert list(relabel_segments([[1.0, 0.0]], [1], [[0]])) == [1]

    def test_mean_decides(self):
        e = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.1], [0.0, 0.3]])
        labels = np.array([0, 0, 1, 1, 0, 1])
        # direct computation: segment mean (0.5, 0.2) is nearer centre 0 ~ (0.67, 0.03)
        assert relabel_segments(e, labels, [[4, 5]])[0] == 0

    def test_identical_embeddings(self):
        e = np.ones((4, 3))
        out = relabel_segments(e, [0, 1, 0, 1], [[0], [1], [2, 3]])
        assert len(set(out)) == 1 and out[0] == 0

    def test_empty_label_skipped(self):
        out = relabel_segments([[1, 0], [0, 1]], [0, 2], [[0], [1]])
        assert list(out) == [0, 2]

    def test_scale_invariant(self, rng):
        e, truth = cone_embeddings(3, 6, rng)
        segs = [[i, i + 1] for i in range(0, len(e), 2)]
        scaled = e * rng.uniform(0.1, 10, size=(len(e), 1))
        assert np.array_equal(relabel_segments(e, truth, segs), relabel_segments(scaled, truth, segs))


class TestChain:
    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_cone_recovery(self, k):
        for seed in range(3):
            e, truth = cone_embeddings(k, 50, np.random.default_rng(seed))
            labels, found = cluster_windows(e, ClusteringConfig(), seed)
            assert found == k and same_partition(labels, truth)

    def test_degree_normalised_chain(self):
        rng = np.random.default_rng(1)
        e, truth = cone_embeddings(4, 30, rng)
        cfg = ClusteringConfig(RefinementConfig(0.25, apply_degree_normalise=True))
        labels, found = cluster_windows(e, cfg, 0)
        assert found == 4 and same_partition(labels, truth)

    def test_single_window(self):
        labels, k = cluster_windows(np.ones((1, 3)), ClusteringConfig(), 0)
        assert list(labels) == [0] and k == 1
