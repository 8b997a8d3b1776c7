"""Cholesky factorization, forward solve and log-determinant in TLR format.

The factorization is the right-looking tiled algorithm. At step ``k``:

1. ``L_kk = chol(A_kk)``;
2. each ``A_ik = U V^T`` below it becomes ``U (L_kk^{-1} V)^T``;
3. each diagonal tile downstream loses ``U (V^T V) U^T``;
4. each off-diagonal tile ``A_ij`` (``k < j < i``) loses the low-rank
   product ``U_ik (V_ik^T V_jk) U_jk^T``; the sum is recompressed at the
   matrix's threshold so ranks do not grow.

Within one step, tasks write disjoint tiles, so the threaded schedule
produces the same floating-point result as the sequential one.
"""

from __future__ import annotations

import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .core import FactorizationError, InvalidArgument
from .tlr import LowRankTile, TlrMatrix, truncation_rank

__all__ = [
    "TlrCholeskyFactor",
    "recompress_sum",
    "tlr_potrf",
    "tlr_trsv",
    "logdet",
    "time_factorization",
    "TimingRecord",
]


class TlrCholeskyFactor(TlrMatrix):
    """Lower Cholesky factor in TLR layout.

    ``diagonal[i]`` holds the dense lower-triangular block ``L_ii``;
    ``offdiagonal[(i, j)]`` holds ``L_ij ~ U V^T`` for ``i > j``.
    """

    def to_dense(self) -> np.ndarray:
        """The dense lower-triangular factor ``L``."""
        a = np.zeros((self.n, self.n))
        for i, d in enumerate(self.diagonal):
            o = self.offset(i)
            a[o:o + d.shape[0], o:o + d.shape[1]] = np.tril(d)
        for (i, j), lr in self.offdiagonal.items():
            r, c = self.offset(i), self.offset(j)
            a[r:r + lr.shape[0], c:c + lr.shape[1]] = lr.u @ lr.v.T
        return a

    def __repr__(self):
        return f"TlrCholeskyFactor(n={self.n}, nb={self.nb}, epsilon={self.epsilon:g})"


def recompress_sum(a: LowRankTile, b: LowRankTile, epsilon: float) -> LowRankTile:
    """Truncated representation of ``a + b``.

    The stacked factors ``[Ua Ub]`` and ``[Va Vb]`` are QR-factorized, the
    small core ``Ru Rv^T`` is decomposed by SVD and truncated at
    ``epsilon`` times its largest singular value. Singular values at the
    roundoff level of the inputs count as zero, so exact cancellation
    yields rank 0.
    """
    if a.shape != b.shape:
        raise InvalidArgument(f"tile shapes differ: {a.shape} vs {b.shape}")
    if b.rank == 0:
        return a
    if a.rank == 0:
        u, v = b.u, b.v
    else:
        u = np.hstack([a.u, b.u])
        v = np.hstack([a.v, b.v])
    qu, ru = np.linalg.qr(u)
    qv, rv = np.linalg.qr(v)
    w, s, zt = np.linalg.svd(ru @ rv.T)
    scale = sum(np.linalg.norm(t.u) * np.linalg.norm(t.v) for t in (a, b))
    s = np.where(s > u.shape[1] * np.finfo(np.float64).eps * scale, s, 0.0)
    r = truncation_rank(s, epsilon)
    return LowRankTile(qu @ (w[:, :r] * s[:r]), qv @ zt[:r].T)


def _potrf_tile(a: np.ndarray, k: int) -> np.ndarray:
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise FactorizationError(
            f"diagonal tile {k} is not positive definite (local pivot {info}); "
            "the matrix is not SPD at this compression accuracy",
            tile=k,
            pivot=int(info),
        )
    return c


def tlr_potrf(a: TlrMatrix, threads: int = 1) -> TlrCholeskyFactor:
    """TLR Cholesky factorization ``A ~ L L^T``.

    ``a`` is left untouched. With ``threads > 1`` the independent tasks of
    each step run on a thread pool; the arithmetic is identical to the
    sequential schedule.

    Raises
    ------
    FactorizationError
        When a diagonal tile has a non-positive pivot. ``tile`` is the tile
        index and ``pivot`` the 1-based row inside that tile.
    """
    nt, eps = a.nt, a.epsilon
    diag = [np.array(d, dtype=np.float64) for d in a.diagonal]
    off = dict(a.offdiagonal)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    run = pool.map if pool else map

    try:
        for k in range(nt):
            lkk = _potrf_tile(diag[k], k)
            diag[k] = lkk
            below = range(k + 1, nt)

            def panel(i, lkk=lkk, k=k):
                t = off[(i, k)]
                v = solve_triangular(lkk, t.v, lower=True, check_finite=False) if t.rank else t.v
                return LowRankTile(t.u, v)

            for i, t in zip(below, list(run(panel, below))):
                off[(i, k)] = t

            def update(ij, k=k):
                i, j = ij
                ti = off[(i, k)]
                if i == j:
                    if ti.rank == 0:
                        return diag[i]
                    w = ti.u @ (ti.v.T @ ti.v)
                    return diag[i] - w @ ti.u.T
                tj = off[(j, k)]
                if ti.rank == 0 or tj.rank == 0:
                    return off[(i, j)]
                prod = LowRankTile(-(ti.u @ (ti.v.T @ tj.v)), tj.u)
                return recompress_sum(off[(i, j)], prod, eps)

            targets = [(i, j) for i in below for j in range(k + 1, i + 1)]
            for (i, j), res in zip(targets, list(run(update, targets))):
                if i == j:
                    diag[i] = res
                else:
                    off[(i, j)] = res
    finally:
        if pool:
            pool.shutdown()
    return TlrCholeskyFactor(a.n, a.nb, diag, off, eps)


def tlr_trsv(l: TlrCholeskyFactor, b) -> np.ndarray:
    """Solve ``L y = b`` by block forward substitution."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (l.n,):
        raise InvalidArgument(f"right-hand side has shape {b.shape}, expected ({l.n},)")
    y = np.empty(l.n)
    for i in range(l.nt):
        o, m = l.offset(i), l.tile_size(i)
        rhs = b[o:o + m].copy()
        for j in range(i):
            t = l.offdiagonal[(i, j)]
            if t.rank:
                oj = l.offset(j)
                rhs -= t.u @ (t.v.T @ y[oj:oj + l.tile_size(j)])
        d = l.diagonal[i]
        if np.any(np.diag(d) == 0):
            raise FactorizationError(f"diagonal tile {i} is singular", tile=i)
        y[o:o + m] = solve_triangular(d, rhs, lower=True, check_finite=False)
    return y


def logdet(l: TlrCholeskyFactor) -> float:
    """``log |L L^T| = 2 sum log diag(L)``."""
    d = np.concatenate([np.diag(t) for t in l.diagonal])
    if np.any(d <= 0):
        raise FactorizationError("factor has a non-positive diagonal entry")
    return 2.0 * float(np.sum(np.log(d)))


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


class TimingRecord(dict):
    """Plain dict with the timing-record keys; serializable as JSON."""

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self, indent=2, sort_keys=True) + "\n")


def time_factorization(
    a: TlrMatrix,
    runs: int = 5,
    threads: int = 1,
    *,
    ordering: str | None = None,
    kernel: str | None = None,
    params: dict | None = None,
) -> tuple[TimingRecord, TlrCholeskyFactor]:
    """Time :func:`tlr_potrf` alone on ``a``, ``runs`` times.

    Returns the record and the factor from the last run.
    """
    if runs < 1:
        raise InvalidArgument("runs must be >= 1")
    seconds = []
    factor = None
    for _ in range(runs):
        t0 = time.perf_counter()
        factor = tlr_potrf(a, threads=threads)
        seconds.append(time.perf_counter() - t0)
    rec = TimingRecord(
        n=a.n, nb=a.nb, epsilon=a.epsilon, ordering=ordering, kernel=kernel, params=params,
        median_seconds=statistics.median(seconds), runs=seconds,
    )
    return rec, factor
