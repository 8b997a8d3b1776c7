"""Tiled covariance assembly and Gaussian field simulation."""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import cdist, pdist

from .core import (
    BivariateMaternParams,
    FactorizationError,
    InvalidArgument,
    LocationSet,
    MaternParams,
    TghParams,
    make_rng,
)
from .kernels import KERNELS, bivariate_matern, has_closed_form, matern_fn, tgh_transform

__all__ = [
    "TiledDenseMatrix",
    "KernelSpec",
    "resolve_kernel",
    "covariance_tile",
    "iter_covariance_tiles",
    "build_covariance",
    "dense_cholesky",
    "simulate_field",
    "write_matrix_dump",
    "read_matrix_dump",
]


class TiledDenseMatrix:
    """Symmetric matrix stored as its lower-triangle tiles.

    Tile ``(i, j)`` with ``i >= j`` is held explicitly; ``tile(i, j)`` for
    ``i < j`` returns the transpose view of ``(j, i)``. When ``nb`` does not
    divide ``n`` the last tile row/column is ragged.
    """

    def __init__(self, n: int, nb: int, tiles: dict[tuple[int, int], np.ndarray]):
        if not 1 <= nb <= n:
            raise InvalidArgument(f"tile size must satisfy 1 <= nb <= n, got nb={nb}, n={n}")
        self.n = int(n)
        self.nb = int(nb)
        self.nt = -(-self.n // self.nb)
        self.symmetric = True
        self._tiles = {}
        for i in range(self.nt):
            for j in range(i + 1):
                t = np.array(tiles[(i, j)], dtype=np.float64)
                if t.shape != (self.tile_size(i), self.tile_size(j)):
                    raise InvalidArgument(f"tile ({i}, {j}) has shape {t.shape}")
                t.setflags(write=False)
                self._tiles[(i, j)] = t

    @classmethod
    def from_dense(cls, a, nb: int) -> "TiledDenseMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgument("matrix must be square")
        n = a.shape[0]
        nt = -(-n // nb)
        tiles = {}
        for i in range(nt):
            for j in range(i + 1):
                tiles[(i, j)] = a[i * nb:min(n, (i + 1) * nb), j * nb:min(n, (j + 1) * nb)]
        return cls(n, nb, tiles)

    def offset(self, i: int) -> int:
        return i * self.nb

    def tile_size(self, i: int) -> int:
        return min(self.nb, self.n - i * self.nb)

    def tile(self, i: int, j: int) -> np.ndarray:
        if i >= j:
            return self._tiles[(i, j)]
        return self._tiles[(j, i)].T

    def to_dense(self) -> np.ndarray:
        a = np.empty((self.n, self.n))
        for (i, j), t in self._tiles.items():
            r, c = self.offset(i), self.offset(j)
            a[r:r + t.shape[0], c:c + t.shape[1]] = t
            a[c:c + t.shape[1], r:r + t.shape[0]] = t.T
        return a

    def diagonal(self) -> np.ndarray:
        return np.concatenate([np.diag(self._tiles[(i, i)]) for i in range(self.nt)])

    def __repr__(self):
        return f"TiledDenseMatrix(n={self.n}, nb={self.nb}, nt={self.nt})"


# ---------------------------------------------------------------------------
# Kernel resolution
# ---------------------------------------------------------------------------


class KernelSpec:
    """A kernel id bound to validated parameters.

    ``dim_factor`` is the number of matrix rows per location (2 for the
    bivariate kernel, whose rows are location-major: location ``k`` owns
    rows ``2k`` and ``2k + 1``).
    """

    def __init__(self, kernel: str, params):
        if kernel not in KERNELS:
            raise InvalidArgument(f"unknown kernel {kernel!r}; expected one of {'|'.join(KERNELS)}")
        self.kernel = kernel
        self.tgh = None
        if kernel == "matern":
            if not isinstance(params, MaternParams):
                raise InvalidArgument("kernel 'matern' needs MaternParams")
            self.params = params
        elif kernel == "tgh-matern":
            if isinstance(params, MaternParams):
                params = (params, TghParams())
            try:
                mat, tgh = params
            except (TypeError, ValueError):
                raise InvalidArgument("kernel 'tgh-matern' needs (MaternParams, TghParams)") from None
            if not isinstance(mat, MaternParams) or not isinstance(tgh, TghParams):
                raise InvalidArgument("kernel 'tgh-matern' needs (MaternParams, TghParams)")
            self.params = mat
            self.tgh = tgh
        else:
            if not isinstance(params, BivariateMaternParams):
                raise InvalidArgument("kernel 'bivariate-matern' needs BivariateMaternParams")
            self.params = params
        self.dim_factor = 2 if kernel == "bivariate-matern" else 1
        self._fn = matern_fn(self.params) if self.dim_factor == 1 else None

    def block(self, a: np.ndarray, b: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Covariance between matrix rows ``rows`` and columns ``cols``;
        ``a``/``b`` are the coordinates of the corresponding locations."""
        d = cdist(a, b)
        if self.dim_factor == 1:
            return self._fn(d)
        ci = (rows % 2 + 1)[:, None]
        cj = (cols % 2 + 1)[None, :]
        out = np.empty_like(d)
        for i, j in ((1, 1), (2, 2), (1, 2)):
            mask = ((ci == i) & (cj == j)) | ((ci == j) & (cj == i))
            if mask.any():
                out[mask] = bivariate_matern(d[mask], i, j, self.params)
        return out

    def symmetric_block(self, a: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """``block(a, a, rows, rows)``; the Bessel route is evaluated on one
        triangle only, which halves the dominant cost."""
        if self.dim_factor != 1 or has_closed_form(self.params):
            return self.block(a, a, rows, rows)
        m = a.shape[0]
        iu, ju = np.triu_indices(m, 1)
        d = pdist(a)  # condensed upper triangle, row-major like triu_indices
        out = np.empty((m, m))
        out[iu, ju] = vals = self._fn(d)
        out[ju, iu] = vals
        np.fill_diagonal(out, self._fn(np.zeros(1))[0])
        return out


def resolve_kernel(kernel, params=None) -> KernelSpec:
    if isinstance(kernel, KernelSpec):
        return kernel
    return KernelSpec(kernel, params)


def covariance_tile(locs: LocationSet, spec: KernelSpec, nb: int, i: int, j: int) -> np.ndarray:
    n = locs.n * spec.dim_factor
    rows = np.arange(i * nb, min(n, (i + 1) * nb))
    cols = np.arange(j * nb, min(n, (j + 1) * nb))
    f = spec.dim_factor
    if i == j:
        return spec.symmetric_block(locs.coords[rows // f], rows)
    return spec.block(locs.coords[rows // f], locs.coords[cols // f], rows, cols)


def iter_covariance_tiles(
    locs: LocationSet, kernel, params=None, nb: int = 1000, threads: int = 1
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(i, j, tile)`` for the lower triangle, row by row.

    Only one tile row is alive at a time, so a caller that compresses and
    drops tiles never holds the dense matrix.
    """
    spec = resolve_kernel(kernel, params)
    n = locs.n * spec.dim_factor
    if not 1 <= nb <= n:
        raise InvalidArgument(f"tile size must satisfy 1 <= nb <= n, got nb={nb}, n={n}")
    nt = -(-n // nb)
    if threads <= 1:
        for i in range(nt):
            for j in range(i + 1):
                yield i, j, covariance_tile(locs, spec, nb, i, j)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i in range(nt):
            futures = [pool.submit(covariance_tile, locs, spec, nb, i, j) for j in range(i + 1)]
            for j, fut in enumerate(futures):
                yield i, j, fut.result()


def build_covariance(locs: LocationSet, kernel, params=None, nb: int | None = None, threads: int = 1) -> TiledDenseMatrix:
    """Assemble the covariance matrix of ``locs`` as an ``nb``-tiled matrix.

    Entry ``(i, j)`` is the kernel at the Euclidean distance between
    locations ``i`` and ``j``. Every tile is computed independently.
    """
    spec = resolve_kernel(kernel, params)
    n = locs.n * spec.dim_factor
    nb = n if nb is None else int(nb)
    tiles = {(i, j): t for i, j, t in iter_covariance_tiles(locs, spec, nb=nb, threads=threads)}
    return TiledDenseMatrix(n, nb, tiles)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def dense_cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor via LAPACK potrf.

    Raises :class:`FactorizationError` carrying the 1-based failing pivot.
    """
    c, info = lapack.dpotrf(np.asarray(a, dtype=np.float64), lower=1, clean=1)
    if info > 0:
        raise FactorizationError(
            f"matrix is not positive definite: pivot {info} is non-positive", pivot=int(info)
        )
    if info < 0:  # pragma: no cover
        raise InvalidArgument(f"potrf argument {-info} invalid")
    return c


def simulate_field(locs: LocationSet, kernel, params=None, seed: int = 0) -> np.ndarray:
    """Draw one realisation ``Z = L w`` of the zero-mean field at ``locs``.

    ``L`` is the dense Cholesky factor of the covariance matrix and ``w`` a
    standard normal vector from ``seed``. For ``tgh-matern`` the Gaussian
    draw is passed through the Tukey g-and-h transform.
    """
    spec = resolve_kernel(kernel, params)
    cov = build_covariance(locs, spec, nb=locs.n * spec.dim_factor).to_dense()
    chol = dense_cholesky(cov)
    w = make_rng(seed, 1).standard_normal(cov.shape[0])
    z = chol @ w
    if spec.tgh is not None:
        z = tgh_transform(z, spec.tgh)
    return z


# ---------------------------------------------------------------------------
# Binary dump: <u8 n, <u8 nb, then every tile of the full grid in row-major
# tile order, each tile column-major, little-endian float64.
# ---------------------------------------------------------------------------


def write_matrix_dump(path: str | Path, m: TiledDenseMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", m.n, m.nb))
        for i in range(m.nt):
            for j in range(m.nt):
                fh.write(np.asarray(m.tile(i, j), dtype="<f8").tobytes(order="F"))


def read_matrix_dump(path: str | Path) -> TiledDenseMatrix:
    raw = Path(path).read_bytes()
    n, nb = struct.unpack_from("<QQ", raw)
    nt = -(-n // nb)
    pos = 16
    tiles = {}
    for i in range(nt):
        for j in range(nt):
            r = min(nb, n - i * nb)
            c = min(nb, n - j * nb)
            count = r * c
            block = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape((r, c), order="F")
            pos += 8 * count
            if i >= j:
                tiles[(i, j)] = block
    if pos != len(raw):
        raise InvalidArgument(f"{path}: trailing bytes in matrix dump")
    return TiledDenseMatrix(n, nb, tiles)
