"""KD-tree ordering: widest-axis median splits, leaves read in order."""

from __future__ import annotations

import numpy as np

from ..core import LocationSet, Permutation

__all__ = ["order_kdtree", "kdtree_splits"]


def _split(coords: np.ndarray, idx: np.ndarray):
    pts = coords[idx]
    spans = pts.max(axis=0) - pts.min(axis=0)
    axis = int(np.argmax(spans))  # ties go to x
    vals = pts[:, axis]
    m = idx.size
    med = np.partition(vals, (m + 1) // 2 - 1)[(m + 1) // 2 - 1]  # lower median
    left = vals <= med
    return axis, med, idx[left], idx[~left]


def kdtree_splits(locs: LocationSet):
    """Yield ``(axis, median, left_idx, right_idx)`` for every internal node.

    Exposed for tests that check the partition rule node by node.
    """
    stack = [np.arange(locs.n)]
    while stack:
        idx = stack.pop()
        if idx.size <= 1:
            continue
        axis, med, left, right = _split(locs.coords, idx)
        yield axis, med, left, right
        stack.append(left)
        stack.append(right)


def order_kdtree(locs: LocationSet) -> Permutation:
    """Order points by an in-order walk of a median-split KD-tree.

    Each node splits on the axis with the largest coordinate range at the
    lower median; points ``<=`` the median go left. Only leaves hold points,
    so the in-order walk is the left-to-right leaf sequence. Within a node
    the original relative order is kept, which fixes ties deterministically.
    Duplicates are excluded by :class:`LocationSet`, so every split is proper
    and the recursion terminates.
    """
    out = np.empty(locs.n, dtype=np.int64)
    pos = 0
    stack = [np.arange(locs.n)]
    while stack:
        idx = stack.pop()
        if idx.size == 1:
            out[pos] = idx[0]
            pos += 1
            continue
        _, _, left, right = _split(locs.coords, idx)
        # right pushed first so the left subtree is emitted first
        stack.append(right)
        stack.append(left)
    return Permutation(out, "kdtree")
