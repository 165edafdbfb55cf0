"""Stratified node grouping: summary vectors, k-means, elbow selection, depth ordering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import N_CONS_FEATS, N_VAR_FEATS, STD_FLOOR

SUMMARY_DIM = 2 * N_VAR_FEATS + N_CONS_FEATS + 2
MAX_ITER = 300
SHIFT_TOL = 1e-6
N_INIT = 4


def summary_vector(sample):
    """Fixed-length description of a node graph (depth deliberately left out).

    Layout: V column means (19), V column stds (19), C column means (5),
    candidate fraction, edge density.
    """
    g = getattr(sample, "graph", sample)
    out = np.zeros(SUMMARY_DIM)
    out[:N_VAR_FEATS] = g.V.mean(axis=0)
    out[N_VAR_FEATS:2 * N_VAR_FEATS] = g.V.std(axis=0)
    if g.n_cons:
        out[2 * N_VAR_FEATS:2 * N_VAR_FEATS + N_CONS_FEATS] = g.C.mean(axis=0)
        out[-1] = g.n_edges / (g.n_cons * g.n_vars)
    out[-2] = g.cand_mask.sum() / g.n_vars
    return out


def _sq_dist(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _evaluate(points, centroids):
    """Nearest-centroid assignment (ties to the lower index) and its SSE."""
    d = _sq_dist(points, centroids)
    assign = np.argmin(d, axis=1)
    return assign, float(d[np.arange(len(points)), assign].sum())


def _lloyd(points, centroids):
    """Lloyd iterations; returns the lowest-SSE state visited."""
    best_c = centroids.copy()
    best_a, best_sse = _evaluate(points, best_c)
    assign = best_a
    for _ in range(MAX_ITER):
        new = centroids.copy()
        for k in range(len(centroids)):
            members = assign == k
            if members.any():
                new[k] = points[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centroid
                d = _sq_dist(points, new).min(axis=1)
                new[k] = points[int(np.argmax(d))]
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        assign, sse = _evaluate(points, centroids)
        if sse < best_sse:
            best_c, best_a, best_sse = centroids.copy(), assign, sse
        if shift < SHIFT_TOL:
            break
    return best_a, best_c, best_sse


def _plus_plus(points, m, rng):
    idx = [int(rng.integers(len(points)))]
    d = _sq_dist(points, points[idx]).min(axis=1)
    for _ in range(1, m):
        total = d.sum()
        if total <= 0:
            nxt = int(rng.integers(len(points)))
        else:
            nxt = int(rng.choice(len(points), p=d / total))
        idx.append(nxt)
        d = np.minimum(d, _sq_dist(points, points[nxt:nxt + 1])[:, 0])
    return points[idx].copy()


def kmeans_path(points, m_max, seed=0):
    """k-means results for m = 1..m_max with SSE non-increasing in m.

    Each m keeps the better of fresh k-means++ restarts and Lloyd started from
    the (m-1) solution plus its farthest point, so adding a cluster never hurts.
    """
    points = np.asarray(points, dtype=np.float64)
    if m_max > len(points):
        raise ValueError("more clusters than points")
    rng = np.random.default_rng(seed)
    c1 = points.mean(axis=0, keepdims=True)
    a1, sse1 = _evaluate(points, c1)
    path = [(a1, c1, sse1)]
    for m in range(2, m_max + 1):
        prev_c = path[-1][1]
        d = _sq_dist(points, prev_c).min(axis=1)
        warm = np.vstack([prev_c, points[int(np.argmax(d))]])
        best = _lloyd(points, warm)
        for _ in range(N_INIT):
            cand = _lloyd(points, _plus_plus(points, m, rng))
            if cand[2] < best[2]:
                best = cand
        path.append(best)
    return path


def kmeans(points, m, seed=0):
    """Returns (assignments, centroids, sse)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return kmeans_path(points, m, seed)[m - 1]


def elbow_select(points, m_range=(2, 10), seed=0):
    """m maximizing SSE(m-1) - 2 SSE(m) + SSE(m+1) over ``m_range`` (ties to smaller m)."""
    lo, hi = m_range
    n = len(points)
    hi = min(hi, n - 1)
    if lo < 2 or hi < lo:
        raise ValueError("m_range too small for the point set")
    sse = [r[2] for r in kmeans_path(points, hi + 1, seed)]
    curv = [sse[m - 2] - 2 * sse[m - 1] + sse[m] for m in range(lo, hi + 1)]
    return lo + int(np.argmax(curv))


@dataclass(frozen=True)
class GroupModel:
    m: int
    centroids: np.ndarray
    order: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"m": self.m, "centroids": self.centroids.tolist(), "order": self.order.tolist(),
                "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), np.asarray(d["centroids"], dtype=np.float64),
                   np.asarray(d["order"], dtype=np.int64),
                   np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_groups(samples, m_range=(2, 10), seed=0, m=None):
    """Cluster standardized summaries and order clusters by mean node depth.

    ``order[k]`` is the group id (0 = shallowest) of raw cluster ``k``.
    """
    X = np.array([summary_vector(s) for s in samples])
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    Z = (X - mean) / std
    if m is None:
        m = elbow_select(Z, m_range, seed)
    assign, centroids, _ = kmeans(Z, m, seed)
    depth = np.array([s.depth for s in samples], dtype=np.float64)
    mean_depth = np.array([depth[assign == k].mean() if np.any(assign == k) else np.inf
                           for k in range(m)])
    ranked = np.lexsort((np.arange(m), mean_depth))
    order = np.empty(m, dtype=np.int64)
    order[ranked] = np.arange(m)
    return GroupModel(m, centroids, order, mean, std)


def assign_groups(samples, model):
    if model is None:
        raise ValueError("group model is not fitted")
    X = np.array([summary_vector(s) for s in samples]).reshape(-1, model.mean.shape[0])
    assign, _ = _evaluate((X - model.mean) / model.std, model.centroids)
    return model.order[assign]
