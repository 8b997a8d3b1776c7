"""Spatial orderings of location sets."""

from __future__ import annotations

from ..core import InvalidArgument, LocationSet, Permutation, ORDERING_METHODS
from .curves import (
    DEFAULT_BITS,
    GridCoord,
    curve_indices,
    dequantize,
    hilbert_decode,
    hilbert_decode_array,
    hilbert_index,
    hilbert_index_array,
    morton_decode,
    morton_decode_array,
    morton_index,
    morton_index_array,
    order_by_curve,
    quantize,
    quantize_array,
)
from .graph import SparseGraph, bandwidth, order_min_degree, order_rcm, sparsify
from .kdtree import kdtree_splits, order_kdtree

__all__ = [
    "DEFAULT_BITS", "GridCoord", "SparseGraph", "bandwidth", "curve_indices",
    "dequantize", "hilbert_decode", "hilbert_decode_array", "hilbert_index",
    "hilbert_index_array", "kdtree_splits", "morton_decode", "morton_decode_array",
    "morton_index", "morton_index_array", "order_by_curve", "order_kdtree",
    "order_locations", "order_min_degree", "order_rcm", "quantize", "quantize_array",
    "sparsify",
]


def order_locations(
    locs: LocationSet,
    method: str,
    *,
    bits: int = DEFAULT_BITS,
    tau: float | None = None,
    kernel: str = "matern",
    params=None,
    nb: int | None = None,
) -> Permutation:
    """Compute the permutation for ``method`` (one of ``ORDERING_METHODS``).

    The graph methods (``rcm``, ``mindegree``) sparsify the covariance matrix
    of ``locs`` under ``kernel``/``params`` with threshold ``tau``.
    """
    if method not in ORDERING_METHODS:
        raise InvalidArgument(f"unknown ordering {method!r}; expected one of {'|'.join(ORDERING_METHODS)}")
    if method == "none":
        return Permutation.identity(locs.n)
    if method in ("morton", "hilbert"):
        return order_by_curve(locs, method, bits)
    if method == "kdtree":
        return order_kdtree(locs)
    if tau is None or params is None:
        raise InvalidArgument(f"ordering {method!r} needs a sparsification threshold and covariance parameters")
    from ..covgen import build_covariance, resolve_kernel

    if resolve_kernel(kernel, params).dim_factor != 1:
        raise InvalidArgument(f"ordering {method!r} needs a univariate kernel, one matrix row per location")

    cov = build_covariance(locs, kernel, params, nb or min(locs.n, 1000))
    graph = sparsify(cov, tau)
    return order_rcm(graph) if method == "rcm" else order_min_degree(graph)
