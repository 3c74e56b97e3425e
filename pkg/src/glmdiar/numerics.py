"""Dense linear algebra and clustering primitives.

Everything here works in float64. The two loop-heavy kernels (the Jacobi
eigensolver and the k-means assignment step) come in a numba flavour and a
vectorised numpy flavour; :data:`glmdiar._accel.USE_NUMBA` picks one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit

JACOBI_TOL = 1e-12
MAX_SWEEPS = 100
KMEANS_MAX_ITER = 300


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]


def as_matrix(data, name="matrix") -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return a


# ---------------------------------------------------------------------------
# symmetric eigensolver
# ---------------------------------------------------------------------------

@njit
def _jacobi_cyclic(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j] * a[i, j]
    target = tol * math.sqrt(total)
    sweeps = 0
    while True:
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if math.sqrt(off) <= target:
            return a, v, sweeps
        if sweeps >= max_sweeps:
            return a, v, -1
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq


def _round_robin(n):
    """Pairings for one sweep: n-1 rounds of disjoint (p, q) index pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_roundrobin(a, tol, max_sweeps):
    # Same rotation as the cyclic kernel, but each round applies n/2 disjoint
    # rotations at once so the work stays inside numpy.
    n = a.shape[0]
    vt = np.eye(n)  # eigenvectors stored as rows
    target = tol * np.sqrt(np.sum(a * a))
    rounds = _round_robin(n)
    offdiag = ~np.eye(n, dtype=bool)
    # pivots below this are left alone: their squares sum to at most target**2 / 2
    skip = target / (2.0 * n)
    sweeps = 0
    while True:
        # summed directly: total minus diagonal cancels below ~1e-8 relative
        off = np.sum(a[offdiag] ** 2)
        if np.sqrt(off) <= target:
            return a, vt.T, sweeps
        if sweeps >= max_sweeps:
            return a, vt.T, -1
        sweeps += 1
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = a[p, q]
            live = np.abs(apq) > skip
            if not np.any(live):
                continue
            p, q, apq = p[live], q[live], apq[live]
            with np.errstate(over="ignore"):
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            safe = np.where(big, 1.0, theta)
            t = np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            g = np.empty((c.size, 2, 2))
            g[:, 0, 0] = c
            g[:, 0, 1] = -s
            g[:, 1, 0] = s
            g[:, 1, 1] = c
            pair = np.stack([p, q], axis=1)
            # rows only: a symmetric gives J^T a J = J^T (J^T a)^T, and row
            # gathers are contiguous where column scatters are strided
            for _ in range(2):
                a[pair] = g @ a[pair]
                a = np.ascontiguousarray(a.T)
            a[p, q] = 0.0
            a[q, p] = 0.0
            vt[pair] = g @ vt[pair]


def sym_eig(matrix) -> EigenDecomposition:
    """Eigen-decompose a real symmetric matrix by Jacobi rotations.

    Eigenvalues come back in non-increasing order; each eigenvector is
    unit-norm with its largest-magnitude component made positive so the
    result is reproducible across backends.
    """
    a = as_matrix(matrix)
    n, m = a.shape
    if n != m:
        raise ContractError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ContractError("sym_eig needs a symmetric matrix")
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))
    work = 0.5 * (a + a.T)
    kernel = _jacobi_cyclic if USE_NUMBA else _jacobi_roundrobin
    d, v, sweeps = kernel(np.ascontiguousarray(work), JACOBI_TOL, MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")
    w = np.diag(d).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    v /= np.linalg.norm(v, axis=0, keepdims=True)
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    v *= signs
    return EigenDecomposition(w, v)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

@njit
def _assign_loop(points, centroids):
    n, d = points.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = -1
        best_d = 0.0
        for c in range(k):
            acc = 0.0
            for j in range(d):
                diff = points[i, j] - centroids[c, j]
                acc += diff * diff
            if best < 0 or acc < best_d:
                best = c
                best_d = acc
        labels[i] = best
        dist[i] = best_d
    return labels, dist


def _assign_numpy(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)  # first minimum wins ties
    return labels.astype(np.int64), d2[np.arange(points.shape[0]), labels]


def assign_nearest(points, centroids):
    kernel = _assign_loop if USE_NUMBA else _assign_numpy
    return kernel(np.ascontiguousarray(points), np.ascontiguousarray(centroids))


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self):
        return self.inertia_history[-1]


def _plusplus_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centroids[c] = points[idx]
        closest = np.minimum(closest, ((points - centroids[c]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x, centroids):
    k = centroids.shape[0]
    labels, dist = assign_nearest(x, centroids)
    history = [float(dist.sum())]
    it = 0
    for it in range(1, KMEANS_MAX_ITER + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
        new_labels, dist = assign_nearest(x, centroids)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels, centroids, history, it)


def kmeans_fit(points, k: int, seed, n_init: int = 1) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    ``seed`` is an int or a ``numpy.random.Generator``. Stops when the
    assignment is unchanged or after 300 iterations. An emptied cluster keeps
    its previous centroid. With ``n_init > 1`` the starts are drawn in turn
    from the same generator and the lowest final inertia wins (earliest on
    ties).
    """
    x = as_matrix(points, "points")
    n = x.shape[0]
    if k < 1:
        raise ContractError("k must be at least 1")
    if k > n:
        raise ContractError(f"k={k} exceeds the number of points ({n})")
    if n_init < 1:
        raise ContractError("n_init must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        fit = _lloyd(x, _plusplus_init(x, k, rng))
        if best is None or fit.inertia < best.inertia:
            best = fit
    return best


def kmeans(points, k: int, seed, n_init: int = 1) -> np.ndarray:
    return kmeans_fit(points, k, seed, n_init).labels


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ContractError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
