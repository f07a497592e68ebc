"""Leakage measures for an honest-but-curious server holding the public codes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import log_ndtr

from .ambiguization import ambiguize_batch
from .coding import NoiseModel, encode_batch
from .identification import build_query

__all__ = [
    "DegenerateDistribution",
    "DistancePDFs",
    "LeakReport",
    "ClusterAttackResult",
    "DistanceRatioTable",
    "pairwise_sq_distances",
    "lattice_edges",
    "distance_pdfs",
    "gaussian_bin_logmass",
    "kld_leak",
    "kmeans",
    "clustering_accuracy",
    "kmeans_attack",
    "cluster_distance_matrix",
    "ratio_table",
]


class DegenerateDistribution(ValueError):
    pass


@dataclass
class DistancePDFs:
    edges: np.ndarray
    intra: np.ndarray
    inter: np.ndarray
    alpha_x: float
    beta_x: float = 0.0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def mixture(self) -> np.ndarray:
        return self.alpha_x * self.intra + (1.0 - self.alpha_x) * self.inter


@dataclass
class LeakReport:
    kld: float
    delta: float
    passed: bool
    gaussian_fit: tuple[float, float]
    # E_{P_intra}[log P1/P2] and E_{P_inter}[log P1/P2]; alpha-weighted they sum to kld
    contribution_intra: float = 0.0
    contribution_inter: float = 0.0
    kld_intra: float = 0.0
    kld_inter: float = 0.0
    alpha_x: float = 0.0

    @property
    def decomposition(self) -> float:
        a = self.alpha_x
        # a zero-weight half may be -inf where P1 has no mass; it contributes nothing
        return sum(w * c for w, c in ((a, self.contribution_intra), (1.0 - a, self.contribution_inter)) if w)

    @property
    def convexity_bound(self) -> float:
        a = self.alpha_x
        return a * self.kld_intra + (1.0 - a) * self.kld_inter

    def to_dict(self) -> dict:
        return {"kld": self.kld, "delta": self.delta, "passed": self.passed,
                "mu2": self.gaussian_fit[0], "sigma2_sq": self.gaussian_fit[1]}


@dataclass
class ClusterAttackResult:
    accuracy: float
    k: int
    permutation: dict[int, int]
    labels: np.ndarray = field(repr=False, default=None)
    inertia: float = 0.0


@dataclass
class DistanceRatioTable:
    beta_x: float
    beta_y: float
    S_ns: int
    S_nq: int
    S_y: int
    L: int
    matrix: np.ndarray
    d_diag_mean: float
    d_off_mean: float
    ratio: float

    @property
    def disclosed_fraction(self) -> float:
        """``(S_y + S_nq) / L``."""
        return (self.S_y + self.S_nq) / self.L


def pairwise_sq_distances(P: np.ndarray, Q: np.ndarray | None = None) -> np.ndarray:
    """Exact squared Euclidean distances between the columns of integer code matrices."""
    P = np.asarray(P, dtype=np.int64)
    Q = P if Q is None else np.asarray(Q, dtype=np.int64)
    # float64 matmul is exact for these magnitudes and much faster than int64
    G = P.T.astype(np.float64) @ Q.astype(np.float64)
    sq = (P * P).sum(0)[:, None] + (Q * Q).sum(0)[None, :] - G * 2
    return np.rint(sq)


def lattice_edges(d: np.ndarray, bins: int = 200) -> np.ndarray:
    """At most ``bins`` equal-width bins, each holding the same number of lattice points.

    Code distances are integers on a lattice ``min(d) + g Z`` (``g = 4`` once
    every code is dense). Widths are rounded up to a multiple of ``g`` and
    edges sit halfway between lattice points, so no bin is empty by aliasing.
    """
    d = np.asarray(d, dtype=np.int64)
    lo, hi = int(d.min()), int(d.max())
    g = int(np.gcd.reduce(d - lo)) or 1
    points = (hi - lo) // g + 1
    width = g * -(-points // bins)
    n = (hi - lo) // width + 1
    return lo - g / 2 + width * np.arange(n + 1, dtype=np.float64)


def distance_pdfs(codes: np.ndarray, labels: np.ndarray, bins: int = 200,
                  alpha_x: float | None = None, beta_x: float = 0.0) -> DistancePDFs:
    """Unit-mass histograms of pairwise squared distances, same-label vs different-label pairs.

    Both histograms share one set of at most ``bins`` lattice-aligned edges (see
    :func:`lattice_edges`).
    ``alpha_x`` is the mixture weight used by :func:`kld_leak` (``S_x / L``);
    it falls back to the fraction of same-label pairs when not given.
    """
    P = np.asarray(codes)
    labels = np.asarray(labels)
    uniq, counts = np.unique(labels, return_counts=True)
    if uniq.size < 2:
        raise ValueError("distance PDFs need at least two clusters (inter-cluster PDF undefined)")
    if counts.min() < 2:
        raise ValueError("every cluster needs at least two items")
    D = pairwise_sq_distances(P)
    iu = np.triu_indices(P.shape[1], k=1)
    d = D[iu]
    same = labels[iu[0]] == labels[iu[1]]
    edges = lattice_edges(d, bins)
    intra = np.histogram(d[same], bins=edges)[0].astype(np.float64)
    inter = np.histogram(d[~same], bins=edges)[0].astype(np.float64)
    if alpha_x is None:
        alpha_x = float(same.mean())
    return DistancePDFs(edges, intra / intra.sum(), inter / inter.sum(), float(alpha_x), float(beta_x))


def gaussian_bin_logmass(edges: np.ndarray, mu: float, var: float) -> np.ndarray:
    """Log of Gaussian mass on each bin, outer bins extended to +/- infinity."""
    e = (np.asarray(edges, dtype=np.float64) - mu) / np.sqrt(var)
    e[0], e[-1] = -np.inf, np.inf
    a, b = e[:-1], e[1:]
    # work in the tail closer to zero mass to keep precision: mirror bins above the mean
    upper = a > 0
    lo = np.where(upper, -b, a)
    hi = np.where(upper, -a, b)
    lhi = log_ndtr(hi)
    llo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lhi + np.log1p(-np.exp(llo - lhi))


def _kl_terms(p: np.ndarray, logq: np.ndarray, logr: np.ndarray | None = None) -> float:
    """sum p * (log r - log q) over p > 0, with r = p when ``logr`` is None."""
    nz = p > 0
    lr = np.log(p[nz]) if logr is None else logr[nz]
    return float(np.sum(p[nz] * (lr - logq[nz])))


def kld_leak(pdfs: DistancePDFs, delta: float = 0.05) -> LeakReport:
    """``D(P1 || P2)`` with ``P1 = a P_intra + (1-a) P_inter`` and ``P2`` its moment-matched Gaussian.

    ``P2`` is discretized onto the histogram bins by CDF differences. The
    mixture splits exactly as ``a E_intra[log P1/P2] + (1-a) E_inter[log P1/P2]``;
    the component divergences ``D(P_intra||P2)``, ``D(P_inter||P2)`` are
    reported too (their weighted sum bounds ``D(P1||P2)`` from above).
    """
    a = pdfs.alpha_x
    p1 = pdfs.mixture()
    c = pdfs.centers
    mu = float(np.sum(p1 * c))
    var = float(np.sum(p1 * (c - mu) ** 2))
    if var <= 0:
        raise DegenerateDistribution("degenerate distribution: P1 has zero variance")
    logq = gaussian_bin_logmass(pdfs.edges, mu, var)
    with np.errstate(divide="ignore"):
        logp1 = np.log(p1)
    kld = _kl_terms(p1, logq)
    c_intra = _kl_terms(pdfs.intra, logq, logp1)
    c_inter = _kl_terms(pdfs.inter, logq, logp1)
    return LeakReport(
        kld=kld,
        delta=delta,
        passed=kld <= delta,
        gaussian_fit=(mu, var),
        contribution_intra=c_intra,
        contribution_inter=c_inter,
        kld_intra=_kl_terms(pdfs.intra, logq),
        kld_inter=_kl_terms(pdfs.inter, logq),
        alpha_x=a,
    )


def kmeans(X: np.ndarray, k: int, restarts: int = 20, max_iter: int = 300,
           rng_seed: int | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm on the rows of ``X``, best inertia over ``restarts``.

    Each restart seeds its centroids with ``k`` distinct data points drawn uniformly.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    rng = np.random.default_rng(rng_seed)
    sqn = (X * X).sum(1)
    best = (None, None, np.inf)
    for _ in range(restarts):
        C = X[rng.choice(n, size=k, replace=False)].copy()
        labels = np.full(n, -1)
        for _ in range(max_iter):
            d = sqn[:, None] + (C * C).sum(1)[None, :] - 2 * X @ C.T
            new = np.argmin(d, axis=1)
            if np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                members = labels == j
                # an emptied cluster is re-seeded at the point farthest from its centroid
                C[j] = X[members].mean(0) if members.any() else X[np.argmax(d.min(1))]
        inertia = float(np.sum(d[np.arange(n), labels]))
        if inertia < best[2]:
            best = (labels.copy(), C.copy(), inertia)
    return best


def clustering_accuracy(pred: np.ndarray, truth: np.ndarray) -> tuple[float, dict[int, int]]:
    """Best agreement over one-to-one matchings of predicted to true labels (Hungarian)."""
    p_vals, p = np.unique(pred, return_inverse=True)
    t_vals, t = np.unique(truth, return_inverse=True)
    C = np.zeros((p_vals.size, t_vals.size))
    np.add.at(C, (p, t), 1)
    r, c = linear_sum_assignment(-C)
    return float(C[r, c].sum() / len(truth)), {int(p_vals[i]): int(t_vals[j]) for i, j in zip(r, c)}


def kmeans_attack(codes: np.ndarray, k: int, true_labels: np.ndarray, restarts: int = 20,
                  rng_seed: int | None = None, max_iter: int = 300) -> ClusterAttackResult:
    """Server-side clustering of the public codes (columns of ``codes``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    true_labels = np.asarray(true_labels)
    if k == 1:
        return ClusterAttackResult(1.0, 1, {0: int(true_labels[0])}, np.zeros(len(true_labels), int), 0.0)
    labels, _, inertia = kmeans(np.asarray(codes).T, k, restarts, max_iter, rng_seed)
    acc, perm = clustering_accuracy(labels, true_labels)
    return ClusterAttackResult(acc, k, perm, labels, inertia)


def cluster_distance_matrix(P: np.ndarray, labels: np.ndarray,
                            positions_by_cluster: dict[int, Sequence[np.ndarray]]) -> np.ndarray:
    """Mean Euclidean distance between cluster groups, restricted to disclosed positions.

    Row ``i`` averages, over the position sets disclosed by queries from
    cluster ``i``, the mean distance between codes of cluster ``i`` and codes of
    cluster ``j`` on those positions. Self-pairs are excluded on the diagonal.
    """
    P = np.asarray(P)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    k = clusters.size
    T = np.zeros((k, k))
    members = {c: np.flatnonzero(labels == c) for c in clusters}
    cache: dict[bytes, np.ndarray] = {}
    for i, ci in enumerate(clusters):
        rows = []
        for I in positions_by_cluster[ci]:
            I = np.asarray(I)
            key = I.tobytes() + bytes([i])
            if key not in cache:
                sub = P[I]
                D = np.sqrt(np.maximum(pairwise_sq_distances(sub[:, members[ci]], sub), 0))
                row = np.empty(k)
                for j, cj in enumerate(clusters):
                    block = D[:, members[cj]]
                    if cj == ci:
                        n = block.shape[0]
                        row[j] = (block.sum() - np.trace(block)) / (n * (n - 1)) if n > 1 else 0.0
                    else:
                        row[j] = block.mean()
                cache[key] = row
            rows.append(cache[key])
        T[i] = np.mean(rows, axis=0)
    return T


def _diag_off(T: np.ndarray) -> tuple[float, float]:
    off = ~np.eye(T.shape[0], dtype=bool)
    return float(np.mean(np.diag(T))), float(np.mean(T[off]))


def ratio_table(settings: Sequence[tuple[float, float]], X: np.ndarray, labels: np.ndarray, W,
                S_x: int, noise: NoiseModel, S_y: int | None = None, n_queries: int = 10,
                seed: int = 0, codes: np.ndarray | None = None) -> list[DistanceRatioTable]:
    """Cluster-to-cluster mean distances as seen by a server answering position queries.

    For each ``(beta_x, beta_y)``: the database is ambiguized with
    ``S_ns = round(beta_x L)`` (capped at ``L - S_x``); for every cluster,
    ``n_queries`` members are perturbed with ``noise`` and turned into position
    queries with ``S_nq = round(beta_y L)`` decoys (capped at ``L - S_y``).
    """
    Wm = W.W if hasattr(W, "W") else np.asarray(W)
    L = Wm.shape[0]
    S_y = S_x if S_y is None else S_y
    labels = np.asarray(labels)
    A = encode_batch(Wm, X, S_x) if codes is None else codes
    rng = np.random.default_rng(seed)
    clusters = np.unique(labels)
    picks = {c: rng.choice(np.flatnonzero(labels == c), size=n_queries, replace=False) for c in clusters}
    Z = noise.sample((X.shape[0], len(clusters) * n_queries), rng)
    out = []
    db_cache: dict[int, np.ndarray] = {}
    for s_idx, (beta_x, beta_y) in enumerate(settings):
        S_ns = min(int(round(beta_x * L)), L - S_x)
        S_nq = min(int(round(beta_y * L)), L - S_y)
        if S_ns not in db_cache:
            db_cache[S_ns] = ambiguize_batch(A, S_ns, seed=seed + 7919 * S_ns)
        P = db_cache[S_ns]
        positions = {}
        for ci, c in enumerate(clusters):
            sets = []
            for qi, m in enumerate(picks[c]):
                y = X[:, m] + Z[:, ci * n_queries + qi]
                req = build_query(y, Wm, S_y, S_nq, rng_seed=seed * 1_000_003 + s_idx * 10_007 + ci * 101 + qi)
                sets.append(req.positions)
            positions[c] = sets
        T = cluster_distance_matrix(P, labels, positions)
        d, o = _diag_off(T)
        out.append(DistanceRatioTable(float(beta_x), float(beta_y), S_ns, S_nq, S_y, L, T, d, o,
                                      o / d if d > 0 else np.inf))
    return out
