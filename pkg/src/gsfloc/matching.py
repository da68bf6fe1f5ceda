"""Instance correspondences, pairwise consistency, and exact maximum clique.

Two correspondences are consistent when the centroid distance on the query
side agrees with the map side within epsilon, and they share neither a query
nor a map instance (one-to-one enforcement). The inlier set is the maximum
clique of the consistency graph; ties on size are broken by largest summed
confidence, then by lexicographically smallest sorted node-id sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError
from .descriptors import TriangleMatch

BRUTE_FORCE_MAX_NODES = 25


@dataclass
class Correspondence:
    query_id: int
    map_id: int
    omega: float  # max confidence observed across triangle votes, in (0,1]
    support: int  # number of triangle matches voting for this pair


@dataclass
class ConsistencyGraph:
    nodes: list[Correspondence]
    adjacency: np.ndarray  # (n,n) bool, symmetric, no self-loops
    epsilon: float


def collect_correspondences(matches: list[TriangleMatch]) -> list[Correspondence]:
    """Aggregate vertex pairs across triangle matches.

    Duplicate (query, map) pairs merge: support accumulates, omega keeps the
    maximum observed. Output sorted by (query_id, map_id).
    """
    merged: dict[tuple[int, int], Correspondence] = {}
    for m in matches:
        for (q, mm), omega in zip(m.pairs, m.omegas):
            key = (q, mm)
            if key in merged:
                c = merged[key]
                c.support += 1
                c.omega = max(c.omega, omega)
            else:
                merged[key] = Correspondence(q, mm, omega, 1)
    return [merged[k] for k in sorted(merged)]


def consistency_check(
    ci: Correspondence,
    cj: Correspondence,
    query_centroids: dict[int, np.ndarray],
    map_centroids: dict[int, np.ndarray],
    epsilon: float,
) -> bool:
    """| |a_i - a_j| - |b_i - b_j| | <= epsilon, plus one-to-one enforcement."""
    if ci.query_id == cj.query_id or ci.map_id == cj.map_id:
        return False
    da = np.linalg.norm(query_centroids[ci.query_id] - query_centroids[cj.query_id])
    db = np.linalg.norm(map_centroids[ci.map_id] - map_centroids[cj.map_id])
    return bool(abs(da - db) <= epsilon)


def build_consistency_graph(
    corrs: list[Correspondence],
    query_centroids: dict[int, np.ndarray],
    map_centroids: dict[int, np.ndarray],
    epsilon: float,
) -> ConsistencyGraph:
    n = len(corrs)
    if n == 0:
        raise ValidationError("cannot build a consistency graph with no correspondences")
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if consistency_check(corrs[i], corrs[j], query_centroids, map_centroids, epsilon):
                adj[i, j] = adj[j, i] = True
    return ConsistencyGraph(list(corrs), adj, epsilon)


def _better(a, b) -> bool:
    """Clique preference: larger size, then larger sum omega, then lex-smaller ids."""
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] > b[1]
    return a[2] < b[2]


def _adj_masks(graph: ConsistencyGraph) -> list[int]:
    n = len(graph.nodes)
    masks = [0] * n
    for i in range(n):
        row = 0
        for j in np.nonzero(graph.adjacency[i])[0]:
            row |= 1 << int(j)
        masks[i] = row
    return masks


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def max_clique(graph: ConsistencyGraph) -> list[int]:
    """Exact maximum clique via branch and bound with a greedy coloring bound.

    Pruning uses a strict bound so that all maximum cliques stay reachable and
    the documented tie-breaks are applied exactly.
    """
    n = len(graph.nodes)
    if n == 0:
        return []
    adj = _adj_masks(graph)
    omega = [c.omega for c in graph.nodes]
    best = [(0, 0.0, ())]

    def consider(ids: tuple):
        cand = (len(ids), sum(omega[i] for i in ids), ids)
        if _better(cand, best[0]):
            best[0] = cand

    def color_sort(p_mask: int):
        """Greedy coloring; returns vertices with color numbers, colors ascending."""
        order = []
        uncolored = p_mask
        color = 0
        while uncolored:
            color += 1
            avail = uncolored
            while avail:
                v = (avail & -avail).bit_length() - 1
                order.append((v, color))
                uncolored ^= 1 << v
                avail &= ~((1 << v) | adj[v])
        return order

    def expand(r_ids: tuple, p_mask: int):
        if p_mask == 0:
            consider(tuple(sorted(r_ids)))
            return
        order = color_sort(p_mask)
        for v, color in reversed(order):
            if len(r_ids) + color < best[0][0]:
                return  # colors ascend toward the end; earlier ones bound lower
            expand(r_ids + (v,), p_mask & adj[v])
            p_mask ^= 1 << v

    expand((), (1 << n) - 1)
    return list(best[0][2])


def brute_force_max_clique(graph: ConsistencyGraph) -> list[int]:
    """Exhaustive clique enumeration oracle; guarded to small graphs."""
    n = len(graph.nodes)
    if n > BRUTE_FORCE_MAX_NODES:
        raise ValidationError(
            f"brute force guarded to {BRUTE_FORCE_MAX_NODES} nodes, got {n}"
        )
    if n == 0:
        return []
    adj = _adj_masks(graph)
    omega = [c.omega for c in graph.nodes]
    best = [(0, 0.0, ())]

    def rec(ids: tuple, allowed: int):
        cand = (len(ids), sum(omega[i] for i in ids), ids)
        if _better(cand, best[0]):
            best[0] = cand
        for v in _bits(allowed):
            higher = allowed & ~((1 << (v + 1)) - 1)
            rec(ids + (v,), higher & adj[v])

    rec((), (1 << n) - 1)
    return list(best[0][2])
