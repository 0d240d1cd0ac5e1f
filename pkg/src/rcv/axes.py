"""Projection-axis estimation for each recursion step.

Three strategies: raw camera axes, covariance eigenvectors, and the
dominant surface normal found by K-Means over per-point normals. The
normal-based triad looks onto the dominant face (a3 = -major normal)
and keeps the shared v dimension stable by carrying the previous a2
across steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloud
from .geometry import AxesTriad

GLOBAL_UP = np.array([0.0, -1.0, 0.0])
_RANK_REL_TOL = 1e-12
_PROJ_MIN_NORM = 1e-6


@dataclass(frozen=True)
class AxesConfig:
    method: str = "normals"      # camera | pca | normals
    knn_k: int = 16
    kmeans_k: int = 4
    kmeans_iters: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("camera", "pca", "normals"):
            raise ValueError(f"unknown axes method {self.method!r}")
        if self.knn_k < 3:
            raise ValueError("knn_k must be >= 3")
        if self.kmeans_k < 1:
            raise ValueError("kmeans_k must be >= 1")

    def to_dict(self) -> dict:
        return {"method": self.method, "knn_k": self.knn_k,
                "kmeans_k": self.kmeans_k, "kmeans_iters": self.kmeans_iters,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AxesConfig":
        return cls(**{k: d[k] for k in
                      ("method", "knn_k", "kmeans_k", "kmeans_iters", "seed")
                      if k in d})


def axes_camera() -> AxesTriad:
    """Sensor axes: the step-0 projection directions."""
    return AxesTriad.identity()


def _fix_sign(v: np.ndarray, reference: np.ndarray | None) -> np.ndarray:
    if reference is not None:
        return -v if float(v @ reference) < 0 else v
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def axes_pca(points: np.ndarray, prev: AxesTriad | None = None) -> AxesTriad:
    """Eigenvector triad of the centered covariance, eigenvalues descending.

    Signs follow the previous step's axes when given (largest-magnitude
    component positive otherwise); a3 is flipped if needed to keep the
    triad right-handed.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise DegenerateCloud("PCA needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)      # ascending
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if evals[0] <= 0 or evals[1] <= evals[0] * _RANK_REL_TOL:
        raise DegenerateCloud("covariance rank < 2")
    cols = []
    for j in range(3):
        ref = prev.matrix[:, j] if prev is not None else None
        cols.append(_fix_sign(evecs[:, j], ref))
    m = np.stack(cols, axis=1)
    if np.linalg.det(m) < 0:
        m[:, 2] = -m[:, 2]
    return AxesTriad(m)


def estimate_normals(points: np.ndarray, knn_k: int,
                     viewpoint: np.ndarray) -> np.ndarray:
    """Per-point unit normals from k-NN covariance, oriented toward viewpoint."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n <= knn_k:
        raise DegenerateCloud(f"need more than knn_k={knn_k} points, got {n}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / n
    if np.linalg.eigvalsh(cov)[1] <= max(cov.trace(), 1e-300) * _RANK_REL_TOL:
        raise DegenerateCloud("covariance rank < 2")

    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=knn_k)
    neigh = pts[nbr]                          # (n, k, 3)
    local = neigh - neigh.mean(axis=1, keepdims=True)
    covs = np.einsum("nki,nkj->nij", local, local) / knn_k
    _, vecs = np.linalg.eigh(covs)
    normals = vecs[:, :, 0]                   # smallest-eigenvalue direction
    toward = np.asarray(viewpoint, dtype=np.float64) - pts
    flip = np.einsum("ni,ni->n", normals, toward) < 0
    normals[flip] = -normals[flip]
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.maximum(norms, 1e-300)


def kmeans_unit_vectors(vectors: np.ndarray, k: int, iters: int,
                        seed: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Plain Lloyd K-Means with deterministic farthest-point seeding.

    Returns (assignments, centroids, per-iteration objective). Empty
    clusters keep their previous centroid, so the objective never
    increases.
    """
    v = np.asarray(vectors, dtype=np.float64)
    n = v.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, 3))
    centroids[0] = v[int(rng.integers(n))]
    d2 = ((v - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        centroids[j] = v[int(np.argmax(d2))]
        d2 = np.minimum(d2, ((v - centroids[j]) ** 2).sum(axis=1))

    assign = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    for _ in range(max(1, iters)):
        dist2 = ((v[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dist2, axis=1)
        history.append(float(dist2[np.arange(n), new_assign].sum()))
        for j in range(k):
            members = v[new_assign == j]
            if members.shape[0] > 0:
                centroids[j] = members.mean(axis=0)
        if np.array_equal(new_assign, assign) and len(history) > 1:
            assign = new_assign
            break
        assign = new_assign
    return assign, centroids, history


def _orthogonal_fallback(a3: np.ndarray) -> np.ndarray:
    basis = np.eye(3)[np.argmin(np.abs(a3))]
    v = basis - (basis @ a3) * a3
    return v / np.linalg.norm(v)


def _trimmed_direction(members: np.ndarray, centroid: np.ndarray,
                       cos_keep: float = np.cos(np.radians(20.0)),
                       rounds: int = 3) -> np.ndarray:
    """Mean direction of a normal cluster, rejecting far-off members.

    k-NN normals near face edges tilt toward neighboring faces and drag
    the plain centroid several degrees off; re-centering on members
    within 20 degrees restores the face normal.
    """
    d = centroid / np.linalg.norm(centroid)
    for _ in range(rounds):
        keep = members @ d >= cos_keep
        if not keep.any():
            break
        m = members[keep].mean(axis=0)
        n = np.linalg.norm(m)
        if n < _PROJ_MIN_NORM:
            break
        d = m / n
    return d


def axes_normals(points: np.ndarray, cfg: AxesConfig,
                 prev: AxesTriad | None, viewpoint: np.ndarray) -> AxesTriad:
    """Triad whose a3 faces the dominant surface normal of the cloud.

    a3 = -(trimmed direction of the largest K-Means normal cluster).
    a2 prefers the runner-up cluster's direction when that cluster is
    substantial and clearly off the a3 line (on boxy geometry it is a
    second face normal, which pins the rotation about a3); otherwise the
    previous step's a2, then global up, then any orthogonal, each
    projected into the plane orthogonal to a3. a1 completes the
    right-handed triad.
    """
    normals = estimate_normals(points, cfg.knn_k, viewpoint)
    assign, centroids, _ = kmeans_unit_vectors(
        normals, cfg.kmeans_k, cfg.kmeans_iters, cfg.seed)
    counts = np.bincount(assign, minlength=centroids.shape[0])
    order = np.argsort(-counts, kind="stable")
    major = centroids[order[0]]
    if np.linalg.norm(major) < _PROJ_MIN_NORM:
        raise DegenerateCloud("dominant normal cluster centroid is null")
    a3 = -_trimmed_direction(normals[assign == order[0]], major)

    candidates = []
    min_count = max(5, int(np.ceil(0.08 * normals.shape[0])))
    for j in order[1:]:
        if counts[j] < min_count:
            continue
        c = centroids[j]
        n = np.linalg.norm(c)
        if n < _PROJ_MIN_NORM:
            continue
        d = _trimmed_direction(normals[assign == j], c)
        if abs(d @ a3) <= np.cos(np.radians(25.0)):
            candidates.append(d)
            break
    if prev is not None:
        candidates.append(prev.a2)
    candidates.append(GLOBAL_UP)
    a2 = None
    for cand in candidates:
        proj = cand - (cand @ a3) * a3
        n2 = np.linalg.norm(proj)
        if n2 >= _PROJ_MIN_NORM:
            a2 = proj / n2
            break
    if a2 is None:
        a2 = _orthogonal_fallback(a3)
    ref = prev.a2 if prev is not None else GLOBAL_UP
    d = float(a2 @ ref)
    if d < -1e-9:
        a2 = -a2
    elif abs(d) <= 1e-9:
        a2 = _fix_sign(a2, None)
    a1 = np.cross(a2, a3)
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(a3, a1)  # re-orthogonalize against accumulated error
    a2 /= np.linalg.norm(a2)
    return AxesTriad.from_columns(a1, a2, a3)


def compute_axes(points: np.ndarray, cfg: AxesConfig,
                 prev: AxesTriad | None, viewpoint: np.ndarray) -> AxesTriad:
    """Dispatch on cfg.method with graceful degradation.

    Small or rank-deficient clouds fall back normals -> pca -> camera so
    the recursion engine never stops on axis estimation alone.
    """
    if cfg.method == "camera":
        return axes_camera()
    if cfg.method == "normals":
        try:
            return axes_normals(points, cfg, prev, viewpoint)
        except DegenerateCloud:
            pass
    try:
        return axes_pca(points, prev)
    except DegenerateCloud:
        return axes_camera()
