"""Cosine-affinity spectral clustering with eigengap speaker counting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, EigenDecomposition, kmeans, sym_eig

SHRINK = 0.01


@dataclass(frozen=True)
class RefinementConfig:
    # fraction of each row kept unshrunk; 1.0 keeps everything
    row_threshold_percentile: float = 0.90
    apply_symmetrise: bool = True
    apply_row_max_normalise: bool = True
    # D^-1/2 A D^-1/2 last, so each separated block contributes an eigenvalue near 1
    apply_degree_normalise: bool = False

    def __post_init__(self):
        if not 0.0 < self.row_threshold_percentile <= 1.0:
            raise ContractError("row_threshold_percentile must lie in (0, 1]")


@dataclass(frozen=True)
class ClusteringConfig:
    refinement: RefinementConfig = RefinementConfig()
    max_k: int = 10
    # k-means++ starts on the spectral embedding; the lowest inertia is kept
    kmeans_restarts: int = 10


@dataclass(frozen=True)
class AffinityMatrix:
    values: np.ndarray

    @property
    def n(self):
        return self.values.shape[0]


def build_affinity(embeddings) -> AffinityMatrix:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ContractError("build_affinity needs at least two embeddings")
    norms = np.linalg.norm(e, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ContractError(f"embedding for window {int(zero[0])} is all zeros")
    u = e / norms[:, None]
    a = np.clip(u @ u.T, -1.0, 1.0)
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return AffinityMatrix(a)


def _symmetrise(a):
    return 0.5 * (a + a.T)


def refine_affinity(a: AffinityMatrix, cfg: RefinementConfig = RefinementConfig()) -> AffinityMatrix:
    """Row thresholding (entries below the row's ``1 - p`` quantile are scaled
    by 0.01), optional symmetrisation, optional row-max normalisation and
    optional symmetric degree normalisation."""
    x = a.values.copy()
    thresh = np.quantile(x, 1.0 - cfg.row_threshold_percentile, axis=1, keepdims=True)
    x = np.where(x < thresh, x * SHRINK, x)
    if cfg.apply_symmetrise:
        x = _symmetrise(x)
    if cfg.apply_row_max_normalise:
        rmax = x.max(axis=1, keepdims=True)
        x = x / np.where(rmax > 0.0, rmax, 1.0)
        x = _symmetrise(x)
    if cfg.apply_degree_normalise:
        d = np.sqrt(np.maximum(x.sum(axis=1), 1e-300))
        x = _symmetrise(x / np.outer(d, d))
    return AffinityMatrix(x)


def estimate_num_speakers(eig: EigenDecomposition, max_k: int = 10) -> int:
    """Eigengap count with the leading eigenvalue set aside; never below 2."""
    lam = np.asarray(eig.eigenvalues, dtype=np.float64)
    if lam.size < 3:
        return 2
    rest = lam[1:]
    gaps = rest[:-1] - rest[1:]  # gaps[j] sits after eigenvalue index j + 2 (1-based)
    last = min(len(gaps), max(max_k - 1, 1))
    j = int(np.argmax(gaps[:last]))  # earliest maximal gap wins ties
    return int(min(max(j + 2, 2), max_k))


def spectral_embedding(a: AffinityMatrix, k: int):
    eig = sym_eig(a.values)
    v = eig.eigenvectors[:, :k]
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms > 0.0, norms, 1.0), eig


def spectral_cluster(a: AffinityMatrix, k: int, seed, restarts: int = 10) -> np.ndarray:
    if not 2 <= k <= a.n:
        raise ContractError(f"k={k} must lie in [2, {a.n}]")
    v, _ = spectral_embedding(a, k)
    return kmeans(v, k, seed, restarts)


def relabel_segments(window_embeddings, window_labels, segment_index) -> np.ndarray:
    """Label each segment with the speaker centre nearest its mean embedding.

    ``segment_index`` is a sequence (one entry per segment) of window index
    lists. Cosine distance is used, ties go to the lowest label, and labels
    with no windows are skipped.
    """
    e = np.asarray(window_embeddings, dtype=np.float64)
    labels = np.asarray(window_labels)
    present = [c for c in range(int(labels.max()) + 1) if np.any(labels == c)] if labels.size else []
    centres = np.array([e[labels == c].mean(axis=0) for c in present])
    cn = np.linalg.norm(centres, axis=1)
    out = np.empty(len(segment_index), dtype=np.int64)
    for s, windows in enumerate(segment_index):
        if len(windows) == 0:
            raise ContractError(f"segment {s} owns no windows")
        m = e[list(windows)].mean(axis=0)
        mn = np.linalg.norm(m)
        sims = centres @ m / np.maximum(cn * mn, 1e-300)
        dist = 1.0 - np.clip(sims, -1.0, 1.0)
        out[s] = present[int(np.argmin(dist))]
    return out


def canonical_labels(labels):
    """Rename labels in order of first appearance."""
    mapping = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, l in enumerate(labels):
        out[i] = mapping.setdefault(int(l), len(mapping))
    return out


def cluster_windows(embeddings, cfg: ClusteringConfig, seed):
    """Full chain on one meeting: affinity, refinement, count, spectral k-means.

    Returns ``(labels, k)``.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    n = e.shape[0]
    if n < 2:
        return np.zeros(n, dtype=np.int64), 1
    aff = build_affinity(e)
    ref = refine_affinity(aff, cfg.refinement)
    eig = sym_eig(ref.values)
    k = min(estimate_num_speakers(eig, cfg.max_k), n)
    v = eig.eigenvectors[:, :k]
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    return kmeans(v, k, seed, cfg.kmeans_restarts), k
