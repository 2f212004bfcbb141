"""Point clustering and measurement partitioning for extended-object tracking.

A partition is one way of splitting a frame's points into disjoint clusters;
the tracker weighs several alternative partitions against each other. DBSCAN
here is intentionally hand-rolled: cluster membership must be invariant to
input point order, and the textbook scan (as in sklearn) assigns border
points to whichever cluster reaches them first. This variant uses order-free
rules only: connected components over core points, and border points joining
their nearest core (distance ties broken by the coordinates of the cluster's
minimal core point).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class TooFewPointsError(ValueError):
    """Requested more clusters than there are points."""


@dataclass(frozen=True)
class Cluster:
    """A group of point indices with cached sufficient statistics."""

    indices: tuple[int, ...]
    centroid: np.ndarray
    scatter: np.ndarray
    """Sum of outer products around the centroid, shape (2, 2)."""

    @property
    def count(self) -> int:
        return len(self.indices)

    def key(self) -> frozenset[int]:
        return frozenset(self.indices)


@dataclass(frozen=True)
class Partition:
    clusters: tuple[Cluster, ...]

    def key(self) -> frozenset[frozenset[int]]:
        return frozenset(c.key() for c in self.clusters)


def make_cluster(points_xy: np.ndarray, local_indices: Sequence[int],
                 ids: Sequence[int] | None = None) -> Cluster:
    """Build a cluster from rows of points_xy; ids relabel the indices."""
    local = tuple(int(i) for i in local_indices)
    pts = np.asarray(points_xy, dtype=float)[list(local), :]
    centroid = pts.mean(axis=0)
    diff = pts - centroid
    scatter = diff.T @ diff
    labels = local if ids is None else tuple(int(ids[i]) for i in local)
    return Cluster(indices=tuple(sorted(labels)), centroid=centroid, scatter=scatter)


@dataclass(frozen=True)
class ClusterSetting:
    method: str
    eps: float = 0.0
    min_pts: int = 0
    k: int = 0
    seed: int = 0

    @staticmethod
    def for_dbscan(eps: float, min_pts: int) -> "ClusterSetting":
        return ClusterSetting(method="dbscan", eps=eps, min_pts=min_pts)

    @staticmethod
    def for_kmeans(k: int, seed: int) -> "ClusterSetting":
        return ClusterSetting(method="kmeans", k=k, seed=seed)


@dataclass(frozen=True)
class ClusteringConfig:
    settings: tuple[ClusterSetting, ...]

    @staticmethod
    def default() -> "ClusteringConfig":
        grid = tuple(
            ClusterSetting.for_dbscan(eps=eps, min_pts=mp)
            for eps in (0.5, 1.0, 2.0)
            for mp in (1, 2)
        )
        return ClusteringConfig(settings=grid)


def gate_points(points_xy: np.ndarray, centers_xy: np.ndarray,
                radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Split point indices into (within radius of any center, rest).

    The radius boundary is inclusive. Returns two sorted index arrays that
    partition range(len(points)).
    """
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    centers = np.asarray(centers_xy, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if centers.shape[0] == 0 or n == 0:
        return np.empty(0, dtype=int), np.arange(n)
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    near = (d2 <= radius * radius).any(axis=1)
    return np.flatnonzero(near), np.flatnonzero(~near)


def dbscan(points_xy: np.ndarray, eps: float,
           min_pts: int) -> tuple[list[list[int]], list[int]]:
    """Density clustering with order-free border assignment.

    Returns (clusters, noise) where clusters are lists of point indices. A
    point is core if it has at least min_pts neighbors within eps (itself
    included); clusters are connected components of core points; non-core
    points join the cluster of their nearest core or become noise.
    """
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return [], []
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    within = d2 <= eps * eps
    core = within.sum(axis=1) >= min_pts

    # Union-find over core points connected within eps.
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    core_idx = np.flatnonzero(core)
    for ii, i in enumerate(core_idx):
        for j in core_idx[ii + 1:]:
            if within[i, j]:
                ri, rj = find(int(i)), find(int(j))
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in core_idx:
        groups.setdefault(find(int(i)), []).append(int(i))

    # Canonical per-cluster key that does not depend on input order: the
    # lexicographically smallest core coordinate in the cluster.
    coord_key = {
        root: min(tuple(pts[m]) for m in members) for root, members in groups.items()
    }

    noise: list[int] = []
    for i in np.flatnonzero(~core):
        i = int(i)
        cand = core_idx[within[i, core_idx]]
        if cand.size == 0:
            noise.append(i)
            continue
        dists = d2[i, cand]
        best = dists.min()
        tied_roots = {find(int(c)) for c in cand[dists <= best + 0.0]}
        root = min(tied_roots, key=lambda r: coord_key[r])
        groups[root].append(i)

    clusters = [sorted(members) for members in groups.values()]
    clusters.sort(key=lambda c: c[0])
    return clusters, sorted(noise)


def kmeans(points_xy: np.ndarray, k: int, seed: int,
           max_iter: int = 100) -> list[list[int]]:
    """Seeded Lloyd iteration producing exactly k non-empty clusters."""
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise TooFewPointsError(f"k={k} clusters requested for {n} points")
    rng = np.random.default_rng(seed)
    centers = pts[rng.choice(n, size=k, replace=False)]
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # Keep every cluster non-empty: steal the point farthest from its
        # center for each empty slot.
        for empty in range(k):
            while not (new_labels == empty).any():
                taken = d2[np.arange(n), new_labels]
                counts = np.bincount(new_labels, minlength=k)
                taken[counts[new_labels] <= 1] = -np.inf
                new_labels[int(taken.argmax())] = empty
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(k):
            centers[c] = pts[labels == c].mean(axis=0)
    return [sorted(np.flatnonzero(labels == c).tolist()) for c in range(k)]


def run_setting(points_xy: np.ndarray, setting: ClusterSetting) -> list[list[int]] | None:
    """Clusters for one parameter setting, noise as singletons; None if the
    setting is infeasible for this point count."""
    n = np.asarray(points_xy).reshape(-1, 2).shape[0]
    if setting.method == "dbscan":
        clusters, noise = dbscan(points_xy, setting.eps, setting.min_pts)
        return clusters + [[i] for i in noise]
    if setting.method == "kmeans":
        if setting.k > n:
            return None
        return kmeans(points_xy, setting.k, setting.seed)
    raise ValueError(f"unknown clustering method {setting.method!r}")


def generate_partitions(points_xy: np.ndarray, config: ClusteringConfig,
                        ids: Sequence[int] | None = None) -> list[Partition]:
    """Alternative partitions of the points, one per setting, deduplicated.

    Every partition covers all points with disjoint non-empty clusters; noise
    points appear as singletons. Order follows config-setting order. An empty
    point set yields a single empty partition.
    """
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return [Partition(clusters=())]
    out: list[Partition] = []
    seen: set[frozenset[frozenset[int]]] = set()
    for setting in config.settings:
        groups = run_setting(pts, setting)
        if groups is None:
            continue
        part = Partition(
            clusters=tuple(make_cluster(pts, g, ids=ids) for g in groups)
        )
        key = part.key()
        if key not in seen:
            seen.add(key)
            out.append(part)
    return out
