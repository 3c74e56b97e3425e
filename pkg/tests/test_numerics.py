import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmdiar.numerics import (
    ContractError,
    cosine_similarity,
    kmeans,
    kmeans_fit,
    sym_eig,
)


def random_symmetric(rng, n):
    a = rng.normal(size=(n, n))
    return 0.5 * (a + a.T)


class TestSymEig:
    def test_identity(self):
        np.testing.assert_allclose(sym_eig(np.eye(3)).eigenvalues, [1, 1, 1], atol=1e-14)

    def test_diagonal_sorted_descending(self):
        eig = sym_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(eig.eigenvalues, [3, 2, 1], atol=1e-14)
        np.testing.assert_allclose(np.abs(eig.eigenvectors), np.eye(3)[:, [0, 2, 1]], atol=1e-14)

    def test_two_by_two_hand_solution(self):
        eig = sym_eig([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(eig.eigenvalues, [3.0, 1.0], atol=1e-13)
        r = 1 / math.sqrt(2)
        v = eig.eigenvectors
        # canonical sign: largest-magnitude component positive, first wins ties
        np.testing.assert_allclose(v[:, 0], [r, r], atol=1e-13)
        np.testing.assert_allclose(abs(v[0, 1]), r, atol=1e-13)
        np.testing.assert_allclose(v[0, 1], -v[1, 1], atol=1e-13)

    @pytest.mark.parametrize("n", [1, 2, 5, 17, 64])
    def test_reconstruction_and_residuals(self, rng, n):
        a = random_symmetric(rng, n)
        eig = sym_eig(a)
        lam, v = eig.eigenvalues, eig.eigenvectors
        np.testing.assert_allclose(v @ np.diag(lam) @ v.T, a, atol=1e-8)
        norm = np.linalg.norm(a)
        for i in range(n):
            assert np.linalg.norm(a @ v[:, i] - lam[i] * v[:, i]) <= 1e-8 * norm
        np.testing.assert_allclose(np.linalg.norm(v, axis=0), 1.0, atol=1e-12)
        assert np.all(np.diff(lam) <= 0)

    def test_matches_lapack(self, rng):
        a = random_symmetric(rng, 30)
        np.testing.assert_allclose(sym_eig(a).eigenvalues, np.linalg.eigvalsh(a)[::-1], atol=1e-10)

    def test_rejects_non_square(self):
        with pytest.raises(ContractError, match="square"):
            sym_eig(np.zeros((2, 3)))

    def test_rejects_asymmetric(self):
        with pytest.raises(ContractError, match="symmetric"):
            sym_eig([[1.0, 2.0], [0.0, 1.0]])

    def test_tolerates_tiny_asymmetry(self):
        a = np.array([[1.0, 0.5], [0.5 + 1e-12, 1.0]])
        np.testing.assert_allclose(sym_eig(a).eigenvalues, [1.5, 0.5], atol=1e-11)


class TestKMeans:
    def test_identical_points_single_cluster(self):
        assert list(kmeans(np.ones((4, 2)), 1, 0)) == [0, 0, 0, 0]

    def test_separated_pairs(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
        labels = kmeans(pts, 2, 3)
        assert labels[0] == labels[1] != labels[2] == labels[3]

    def test_separated_pairs_brute_force(self, rng):
        # compare against the best of all 2-partitions of a small point set
        pts = rng.normal(size=(8, 2))
        pts[4:] += 6.0
        best = math.inf
        for mask in range(1, 2 ** 7):
            lab = np.array([(mask >> i) & 1 for i in range(8)])
            cost = sum(((pts[lab == c] - pts[lab == c].mean(0)) ** 2).sum() for c in (0, 1))
            best = min(best, cost)
        fit = kmeans_fit(pts, 2, 0)
        assert fit.inertia == pytest.approx(best, rel=1e-12)

    def test_k1_centroid_is_mean(self, rng):
        pts = rng.normal(size=(20, 3))
        fit = kmeans_fit(pts, 1, 7)
        assert set(fit.labels) == {0}
        np.testing.assert_allclose(fit.centroids[0], pts.mean(axis=0), atol=1e-14)

    def test_objective_never_increases(self, rng):
        pts = rng.normal(size=(200, 4))
        for seed in range(5):
            hist = kmeans_fit(pts, 6, seed).inertia_history
            assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_deterministic_given_seed(self, rng):
        pts = rng.normal(size=(50, 3))
        assert np.array_equal(kmeans(pts, 4, 11), kmeans(pts, 4, 11))

    def test_labels_in_range(self, rng):
        labels = kmeans(rng.normal(size=(30, 2)), 5, 0)
        assert labels.min() >= 0 and labels.max() < 5

    def test_k_too_large(self):
        with pytest.raises(ContractError, match="exceeds"):
            kmeans(np.zeros((3, 2)), 4, 0)

    def test_k_zero(self):
        with pytest.raises(ContractError):
            kmeans(np.zeros((3, 2)), 0, 0)

    def test_tie_goes_to_lowest_index(self):
        from glmdiar.numerics import assign_nearest

        labels, _ = assign_nearest(np.array([[0.0]]), np.array([[1.0], [-1.0]]))
        assert labels[0] == 0


class TestCosine:
    def test_equal(self):
        assert cosine_similarity([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_diagonal(self):
        assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.7071067812, abs=1e-10)

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            cosine_similarity([0, 0], [1, 0])

    def test_clamped(self):
        v = np.array([0.1, 0.2, 0.3])
        assert -1.0 <= cosine_similarity(v, 3 * v) <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        st.floats(1e-3, 1e3),
    )
    def test_symmetric_and_scale_invariant(self, a, b, alpha):
        a, b = np.array(a), np.array(b)
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        s = cosine_similarity(a, b)
        assert s == pytest.approx(cosine_similarity(b, a), abs=1e-12)
        assert s == pytest.approx(cosine_similarity(alpha * a, b), abs=1e-12)


class TestRestarts:
    def test_restarts_never_worse(self, rng):
        pts = np.concatenate([rng.normal(size=(30, 2)) + c for c in ([0, 0], [6, 0], [0, 6], [6, 6])])
        for seed in range(10):
            one = kmeans_fit(pts, 4, seed).inertia
            ten = kmeans_fit(pts, 4, seed, n_init=10).inertia
            assert ten <= one + 1e-12

    def test_restarts_deterministic(self, rng):
        pts = rng.normal(size=(60, 3))
        assert np.array_equal(kmeans(pts, 5, 2, n_init=5), kmeans(pts, 5, 2, n_init=5))

    def test_bad_restarts(self):
        with pytest.raises(ContractError):
            kmeans(np.zeros((3, 1)), 1, 0, n_init=0)
