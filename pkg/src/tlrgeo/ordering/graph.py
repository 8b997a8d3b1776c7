"""Graph orderings on a thresholded covariance matrix.

Both orderings are kept for completeness and experimentation; on dense
spatial covariance matrices they do not reduce tile ranks the way the
coordinate-based orderings do.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..core import InvalidArgument, Permutation

__all__ = ["SparseGraph", "sparsify", "order_rcm", "order_min_degree", "bandwidth"]


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Undirected graph in CSR form: neighbours of ``i`` are
    ``indices[indptr[i]:indptr[i + 1]]``, sorted, without self loops."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges) -> "SparseGraph":
        adj = [set() for _ in range(n)]
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidArgument(f"edge ({i}, {j}) out of range for n={n}")
            if i != j:
                adj[i].add(j)
                adj[j].add(i)
        return cls.from_adjacency([sorted(a) for a in adj])

    @classmethod
    def from_adjacency(cls, adjacency) -> "SparseGraph":
        n = len(adjacency)
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(a) for a in adjacency])
        indices = np.fromiter((j for a in adjacency for j in a), dtype=np.int64, count=int(indptr[-1]))
        return cls(n, indptr, indices)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n)]

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1]) // 2


def sparsify(cov, tau: float) -> SparseGraph:
    """Keep edge ``(i, j)``, ``i != j``, iff ``|cov[i, j]| >= tau``.

    ``cov`` is a :class:`~tlrgeo.covgen.TiledDenseMatrix` or a dense array.
    Tiled input is scanned one lower-triangle tile at a time.
    """
    if not tau > 0:
        raise InvalidArgument(f"threshold must be positive, got {tau}")
    rows, cols = [], []
    if isinstance(cov, np.ndarray):
        a = np.abs(cov) >= tau
        np.fill_diagonal(a, False)
        i, j = np.nonzero(np.tril(a))
        rows.append(i)
        cols.append(j)
        n = cov.shape[0]
    else:
        n = cov.n
        for ti in range(cov.nt):
            for tj in range(ti + 1):
                block = np.abs(cov.tile(ti, tj)) >= tau
                if ti == tj:
                    block = np.tril(block, -1)
                i, j = np.nonzero(block)
                rows.append(i + cov.offset(ti))
                cols.append(j + cov.offset(tj))
    i = np.concatenate(rows) if rows else np.empty(0, np.int64)
    j = np.concatenate(cols) if cols else np.empty(0, np.int64)
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return SparseGraph(n, np.cumsum(indptr), dst.astype(np.int64))


def bandwidth(g: SparseGraph, perm: Permutation | None = None) -> int:
    """Bandwidth of the adjacency matrix, optionally after reordering."""
    pos = np.arange(g.n) if perm is None else perm.inverse().map
    best = 0
    for i in range(g.n):
        nb = g.neighbors(i)
        if nb.size:
            best = max(best, int(np.max(np.abs(pos[nb] - pos[i]))))
    return best


def order_rcm(g: SparseGraph) -> Permutation:
    """Reverse Cuthill-McKee.

    Components are handled in order of their smallest node. Each one is
    searched breadth-first from its minimum-degree node (lowest index on
    ties), visiting neighbours by increasing degree then index, and the
    component's visit order is reversed in place.
    """
    deg = g.degrees()
    seen = np.zeros(g.n, dtype=bool)
    out: list[int] = []
    for root in range(g.n):
        if seen[root]:
            continue
        comp = _component(g, root)
        start = min(comp, key=lambda v: (deg[v], v))
        order = [start]
        seen[start] = True
        q = deque([start])
        while q:
            v = q.popleft()
            nbrs = [int(w) for w in g.neighbors(v) if not seen[w]]
            nbrs.sort(key=lambda w: (deg[w], w))
            for w in nbrs:
                seen[w] = True
                order.append(w)
                q.append(w)
        out.extend(reversed(order))
    return Permutation(np.array(out, dtype=np.int64), "rcm")


def _component(g: SparseGraph, root: int) -> list[int]:
    comp = {root}
    stack = [root]
    while stack:
        v = stack.pop()
        for w in g.neighbors(v):
            w = int(w)
            if w not in comp:
                comp.add(w)
                stack.append(w)
    return sorted(comp)


def order_min_degree(g: SparseGraph) -> Permutation:
    """Minimum-degree elimination order.

    Repeatedly eliminates a node of smallest current degree (lowest index on
    ties). Eliminating a node joins its remaining neighbours into a clique,
    as symbolic Cholesky would, and their degrees are updated.
    """
    adj = [set(int(w) for w in g.neighbors(i)) for i in range(g.n)]
    heap = [(len(a), i) for i, a in enumerate(adj)]
    heapq.heapify(heap)
    alive = np.ones(g.n, dtype=bool)
    out: list[int] = []
    while heap:
        d, v = heapq.heappop(heap)
        if not alive[v] or d != len(adj[v]):
            continue  # stale entry
        alive[v] = False
        out.append(v)
        nbrs = adj[v]
        for w in nbrs:
            adj[w].discard(v)
            adj[w].update(u for u in nbrs if u != w)
        for w in nbrs:
            heapq.heappush(heap, (len(adj[w]), w))
        adj[v] = set()
    return Permutation(np.array(out, dtype=np.int64), "mindegree")
