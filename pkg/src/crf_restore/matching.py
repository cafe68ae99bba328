"""Grouping of similar patches and the one-cluster-per-patch assignment.

For every reference position a cluster collects the ``k_total`` nearest
patches (squared Euclidean distance) whose top-left corner lies inside a
search window centered on the reference; the window is clipped at image
borders without shifting.  A patch can be a member of several clusters, so a
seeded random pass then assigns each patch to exactly one of the clusters
containing it, and any patch left over is attached to the cluster of its
nearest reference so that every patch ends up with one parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import PatchSystem

__all__ = ["Cluster", "build_clusters", "assign_unique", "complete_assignment"]


@dataclass(frozen=True)
class Cluster:
    """A reference patch and its nearest neighbors, nearest first.

    ``member_indices[0]`` is always the reference itself (distance zero); the
    remaining members are sorted by (distance, patch index) ascending, so the
    ordering is deterministic even under exact ties.
    """

    reference_index: int
    member_indices: np.ndarray


def build_clusters(vectors, sys: PatchSystem, k_total: int = 40,
                   window: int = 40) -> list[Cluster]:
    """One cluster per reference position, built from the given patch vectors.

    ``vectors`` holds the current per-patch estimates, indexed like
    ``sys.patch_positions``; distances and (later) statistics are computed on
    these same vectors.
    """
    if k_total < 1:
        raise ValueError("k_total must be >= 1")
    if window < sys.patch_size:
        raise ValueError("window must be >= patch_size")
    v = np.ascontiguousarray(vectors, dtype=np.float64)
    if v.shape != (sys.num_patches, sys.n):
        raise ValueError(f"expected vectors of shape {(sys.num_patches, sys.n)}, "
                         f"got {v.shape}")
    gh, gw = sys.grid_shape
    half = window // 2
    clusters = []
    for r, c in sys.reference_positions:
        r0 = max(0, r - half)
        r1 = min(gh, r - half + window)
        c0 = max(0, c - half)
        c1 = min(gw, c - half + window)
        cand = (np.arange(r0, r1)[:, None] * gw + np.arange(c0, c1)).ravel()
        ref_idx = int(r * gw + c)
        diff = v[cand] - v[ref_idx]
        dist = np.einsum("ij,ij->i", diff, diff)
        ranked = cand[np.lexsort((cand, dist))]
        ranked = ranked[ranked != ref_idx]
        k = min(k_total, cand.size)
        members = np.concatenate(([ref_idx], ranked[:k - 1]))
        clusters.append(Cluster(ref_idx, members))
    return clusters


def assign_unique(clusters: list[Cluster], num_patches: int, seed) -> np.ndarray:
    """Assign every patch appearing in >= 1 cluster to exactly one of them.

    The choice among containing clusters is uniform given the seed.  Returns
    an array of cluster ids indexed by patch, with -1 for patches that are
    members of no cluster.
    """
    if not clusters:
        raise ValueError("no clusters to assign")
    sizes = np.array([c.member_indices.size for c in clusters])
    pids = np.concatenate([c.member_indices for c in clusters])
    cids = np.repeat(np.arange(len(clusters)), sizes)

    order = np.lexsort((cids, pids))
    pids = pids[order]
    cids = cids[order]
    unique_pids, starts, counts = np.unique(pids, return_index=True,
                                            return_counts=True)
    rng = np.random.Generator(np.random.Philox(seed))
    pick = starts + (rng.random(unique_pids.size) * counts).astype(np.int64)

    cluster_of = np.full(num_patches, -1, dtype=np.int64)
    cluster_of[unique_pids] = cids[pick]
    return cluster_of


def complete_assignment(cluster_of: np.ndarray, sys: PatchSystem) -> np.ndarray:
    """Attach unassigned patches to the cluster of their nearest reference.

    Nearness is Euclidean distance between top-left positions; on the product
    grid of references this is the componentwise nearest grid value, with
    ties resolved toward the smaller coordinate.  The returned assignment is
    total, which the image rebuild step requires; fallback patches use the
    target cluster's parameters without being statistics members.
    """
    cluster_of = cluster_of.copy()
    missing = np.nonzero(cluster_of < 0)[0]
    if missing.size == 0:
        return cluster_of
    gw = sys.grid_shape[1]
    ref_rows = np.unique(sys.reference_positions[:, 0])
    ref_cols = np.unique(sys.reference_positions[:, 1])

    def nearest(vals, grid):
        i = np.searchsorted(grid, vals)
        lo = np.clip(i - 1, 0, grid.size - 1)
        hi = np.clip(i, 0, grid.size - 1)
        return np.where(vals - grid[lo] <= grid[hi] - vals, lo, hi)

    ri = nearest(missing // gw, ref_rows)
    ci = nearest(missing % gw, ref_cols)
    cluster_of[missing] = ri * ref_cols.size + ci
    return cluster_of
