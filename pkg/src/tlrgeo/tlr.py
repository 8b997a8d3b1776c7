"""Tile low-rank compression.

Diagonal tiles stay dense; each lower-triangle off-diagonal tile ``A`` is
replaced by factors with ``A ~ U V^T``. Truncation is relative: the rank is
the number of singular values above ``epsilon * sigma_1`` of that tile.
``U`` carries the singular values and ``V`` is orthonormal.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import InvalidArgument, LocationSet
from .covgen import TiledDenseMatrix, iter_covariance_tiles, resolve_kernel

__all__ = [
    "LowRankTile",
    "TlrMatrix",
    "RankReport",
    "truncation_rank",
    "compress_tile",
    "tile_rank",
    "reconstruct_tile",
    "compress_matrix",
    "compress_covariance",
    "covariance_rank_grid",
    "rank_stats",
    "write_rank_heatmap",
    "write_rank_report",
    "MB",
]

log = logging.getLogger(__name__)

MB = 1_000_000  # decimal megabytes, as in the memory tables
BYTES = 8


def _check_eps(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise InvalidArgument(f"compression threshold must be positive, got {epsilon}")
    return epsilon


@dataclass(frozen=True, eq=False)
class LowRankTile:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.ndim != 2 or self.v.ndim != 2 or self.u.shape[1] != self.v.shape[1]:
            raise InvalidArgument(f"incompatible factor shapes {self.u.shape} and {self.v.shape}")

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[0])

    @property
    def nbytes(self) -> int:
        return BYTES * (self.u.size + self.v.size)

    @classmethod
    def zeros(cls, m: int, n: int) -> "LowRankTile":
        return cls(np.zeros((m, 0)), np.zeros((n, 0)))


def truncation_rank(s: np.ndarray, epsilon: float) -> int:
    """Smallest ``k`` with ``s[k] <= epsilon * s[0]`` (``s`` descending)."""
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > epsilon * s[0]))


def compress_tile(tile, epsilon: float) -> LowRankTile:
    """Truncated SVD of one tile: ``||tile - U V^T||_2 <= epsilon * sigma_1``."""
    epsilon = _check_eps(epsilon)
    a = np.asarray(tile, dtype=np.float64)
    if a.size == 0 or not np.any(a):
        return LowRankTile.zeros(*a.shape)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r = truncation_rank(s, epsilon)
    return LowRankTile(u[:, :r] * s[:r], vt[:r].T.copy())


def tile_rank(tile, epsilon: float) -> int:
    """Rank :func:`compress_tile` would pick, from singular values only."""
    epsilon = _check_eps(epsilon)
    a = np.asarray(tile, dtype=np.float64)
    if a.size == 0 or not np.any(a):
        return 0
    return truncation_rank(np.linalg.svd(a, compute_uv=False), epsilon)


def reconstruct_tile(lr: LowRankTile) -> np.ndarray:
    return lr.u @ lr.v.T


class TlrMatrix:
    """Dense diagonal tiles plus low-rank lower-triangle off-diagonal tiles."""

    def __init__(self, n: int, nb: int, diagonal: list[np.ndarray], offdiagonal: dict[tuple[int, int], LowRankTile], epsilon: float):
        self.n = int(n)
        self.nb = int(nb)
        self.nt = -(-self.n // self.nb)
        self.epsilon = float(epsilon)
        if len(diagonal) != self.nt:
            raise InvalidArgument("wrong number of diagonal tiles")
        self.diagonal = diagonal
        self.offdiagonal = offdiagonal

    def offset(self, i: int) -> int:
        return i * self.nb

    def tile_size(self, i: int) -> int:
        return min(self.nb, self.n - i * self.nb)

    def rank(self, i: int, j: int) -> int:
        return self.offdiagonal[(i, j)].rank

    def ranks(self) -> dict[tuple[int, int], int]:
        return {k: t.rank for k, t in self.offdiagonal.items()}

    def to_dense(self) -> np.ndarray:
        a = np.empty((self.n, self.n))
        for i, d in enumerate(self.diagonal):
            o = self.offset(i)
            a[o:o + d.shape[0], o:o + d.shape[1]] = d
        for (i, j), lr in self.offdiagonal.items():
            blk = reconstruct_tile(lr)
            r, c = self.offset(i), self.offset(j)
            a[r:r + blk.shape[0], c:c + blk.shape[1]] = blk
            a[c:c + blk.shape[1], r:r + blk.shape[0]] = blk.T
        return a

    def copy(self) -> "TlrMatrix":
        return TlrMatrix(
            self.n, self.nb,
            [d.copy() for d in self.diagonal],
            {k: LowRankTile(t.u.copy(), t.v.copy()) for k, t in self.offdiagonal.items()},
            self.epsilon,
        )

    def __repr__(self):
        return f"TlrMatrix(n={self.n}, nb={self.nb}, epsilon={self.epsilon:g})"


def compress_matrix(dense: TiledDenseMatrix, epsilon: float, threads: int = 1) -> TlrMatrix:
    """Compress every lower-triangle off-diagonal tile of ``dense`` independently."""
    epsilon = _check_eps(epsilon)
    diagonal = [np.array(dense.tile(i, i)) for i in range(dense.nt)]
    keys = [(i, j) for i in range(dense.nt) for j in range(i)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tiles = list(pool.map(lambda k: compress_tile(dense.tile(*k), epsilon), keys))
    else:
        tiles = [compress_tile(dense.tile(*k), epsilon) for k in keys]
    return TlrMatrix(dense.n, dense.nb, diagonal, dict(zip(keys, tiles)), epsilon)


def compress_covariance(locs: LocationSet, kernel, params, nb: int, epsilon: float, threads: int = 1) -> TlrMatrix:
    """Assemble and compress in one pass without materialising the dense matrix."""
    epsilon = _check_eps(epsilon)
    spec = resolve_kernel(kernel, params)
    n = locs.n * spec.dim_factor
    diagonal, off = [], {}
    for i, j, t in iter_covariance_tiles(locs, spec, nb=nb, threads=threads):
        if i == j:
            diagonal.append(t)
        else:
            off[(i, j)] = compress_tile(t, epsilon)
    return TlrMatrix(n, nb, diagonal, off, epsilon)


def covariance_rank_grid(locs: LocationSet, kernel, params, nb: int, epsilon: float, threads: int = 1) -> tuple[int, dict]:
    """Off-diagonal tile ranks of the covariance matrix, without keeping factors.

    Returns ``(n, {(i, j): rank})``. Uses singular values only, which is
    the cheap path for rank and memory studies.
    """
    epsilon = _check_eps(epsilon)
    spec = resolve_kernel(kernel, params)
    n = locs.n * spec.dim_factor
    ranks = {}
    for i, j, t in iter_covariance_tiles(locs, spec, nb=nb, threads=threads):
        if i != j:
            ranks[(i, j)] = tile_rank(t, epsilon)
    return n, ranks


# ---------------------------------------------------------------------------
# Rank statistics and memory accounting
# ---------------------------------------------------------------------------


@dataclass
class RankReport:
    n: int
    nb: int
    epsilon: float
    grid: dict = field(repr=False)
    min: float | None
    median: float | None
    mean: float | None
    max: float | None
    memory_bytes_tlr: int
    memory_bytes_dense: int
    flagged: list = field(default_factory=list)

    @property
    def mem_tlr_mb(self) -> float:
        return self.memory_bytes_tlr / MB

    @property
    def mem_dense_mb(self) -> float:
        return self.memory_bytes_dense / MB

    def as_dict(self, ordering: str | None = None) -> dict:
        return {
            "n": self.n, "nb": self.nb, "epsilon": self.epsilon, "ordering": ordering,
            "min": self.min, "median": self.median, "mean": self.mean, "max": self.max,
            "mem_tlr_mb": self.mem_tlr_mb, "mem_dense_mb": self.mem_dense_mb,
        }


def dense_offdiag_bytes(n: int, nb: int) -> int:
    """Storage of all lower-triangle off-diagonal tiles kept dense."""
    nt = -(-n // nb)
    sizes = [min(nb, n - i * nb) for i in range(nt)]
    return BYTES * sum(sizes[i] * sizes[j] for i in range(nt) for j in range(i))


def rank_stats(tlr, nb: int | None = None, n: int | None = None, epsilon: float | None = None) -> RankReport:
    """Min/median/mean/max of off-diagonal ranks and memory footprint.

    ``tlr`` is a :class:`TlrMatrix`, or a ``{(i, j): rank}`` grid together
    with ``n``, ``nb`` and ``epsilon``. A single-tile matrix has no
    off-diagonal tiles; its statistics are ``None``.
    """
    if isinstance(tlr, TlrMatrix):
        grid, n, nb, epsilon = tlr.ranks(), tlr.n, tlr.nb, tlr.epsilon
    else:
        grid = dict(tlr)
        if n is None or nb is None:
            raise InvalidArgument("a bare rank grid needs n and nb")
    sizes = [min(nb, n - i * nb) for i in range(-(-n // nb))]
    ranks = list(grid.values())
    mem = sum(BYTES * (sizes[i] + sizes[j]) * r for (i, j), r in grid.items())
    flagged = sorted(k for k, r in grid.items() if r >= min(sizes[k[0]], sizes[k[1]]) / 2)
    if flagged:
        log.warning("%d off-diagonal tiles have rank >= nb/2; low-rank storage is not paying off", len(flagged))
    if ranks:
        stats = (min(ranks), float(statistics.median(ranks)), float(np.mean(ranks)), max(ranks))
    else:
        stats = (None, None, None, None)
    return RankReport(n, nb, epsilon, grid, *stats, mem, dense_offdiag_bytes(n, nb), flagged)


def write_rank_heatmap(path: str | Path, report: RankReport, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tile_i", "tile_j", "rank"])
        for (i, j), r in sorted(report.grid.items()):
            w.writerow([i, j, r])


def write_rank_report(path: str | Path, report: RankReport, ordering: str | None = None, **extra) -> None:
    Path(path).write_text(json.dumps({**report.as_dict(ordering), **extra}, indent=2, sort_keys=True) + "\n")
