"""Shared data model: locations, permutations, parameter sets and seeding."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "TlrError",
    "InvalidArgument",
    "FactorizationError",
    "OptimizationError",
    "IngestError",
    "Location",
    "LocationSet",
    "Permutation",
    "MaternParams",
    "BivariateMaternParams",
    "TghParams",
    "ORDERING_METHODS",
    "make_rng",
    "spawn_rngs",
    "generate_uniform_locations",
    "apply_permutation",
    "read_locations_csv",
    "write_locations_csv",
    "read_permutation",
    "write_permutation",
    "read_field_csv",
    "write_field_csv",
    "duplicate_indices",
]

ORDERING_METHODS = ("none", "morton", "hilbert", "kdtree", "rcm", "mindegree")


class TlrError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(TlrError, ValueError):
    pass


class FactorizationError(TlrError, ArithmeticError):
    """A Cholesky factorization hit a non-positive pivot.

    ``tile`` is the diagonal tile index (``None`` for a dense factorization)
    and ``pivot`` the 1-based failing row inside that tile / matrix.
    """

    def __init__(self, message: str, tile: int | None = None, pivot: int | None = None):
        super().__init__(message)
        self.tile = tile
        self.pivot = pivot


class OptimizationError(TlrError, RuntimeError):
    pass


class IngestError(TlrError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# Locations
# ---------------------------------------------------------------------------


class Location(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class LocationSet:
    """Ordered 2-D points in the unit square.

    Coordinates live in a read-only ``(n, 2)`` float64 array. Construction
    validates the unit-square bounds and rejects exact duplicates, since a
    repeated location makes the covariance matrix singular.
    """

    coords: np.ndarray
    provenance: str = "synthetic-uniform"

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64, copy=True)
        if c.ndim != 2 or c.shape[1] != 2:
            raise InvalidArgument(f"coordinates must have shape (n, 2), got {c.shape}")
        if c.shape[0] < 1:
            raise InvalidArgument("a LocationSet needs at least one point")
        if not np.all(np.isfinite(c)):
            raise InvalidArgument("coordinates must be finite")
        if c.min() < 0.0 or c.max() > 1.0:
            raise InvalidArgument("coordinates must lie in the unit square [0, 1]^2")
        if self.provenance not in ("synthetic-uniform", "ingested"):
            raise InvalidArgument(f"unknown provenance {self.provenance!r}")
        dups = duplicate_indices(c)
        if dups:
            shown = ", ".join(str(i) for i in dups[:20])
            more = "" if len(dups) <= 20 else f" (+{len(dups) - 20} more)"
            raise InvalidArgument(f"duplicate locations at indices {shown}{more}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def points(self) -> list[Location]:
        return [Location(float(x), float(y)) for x, y in self.coords]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Location:
        x, y = self.coords[i]
        return Location(float(x), float(y))

    def __iter__(self) -> Iterator[Location]:
        return iter(self.points)

    def __eq__(self, other):
        if not isinstance(other, LocationSet):
            return NotImplemented
        return self.provenance == other.provenance and np.array_equal(self.coords, other.coords)

    __hash__ = None


def duplicate_indices(coords: np.ndarray) -> list[int]:
    """Indices of rows that repeat an earlier row exactly."""
    if coords.shape[0] < 2:
        return []
    order = np.lexsort((coords[:, 1], coords[:, 0]))
    s = coords[order]
    same = np.all(s[1:] == s[:-1], axis=1)
    if not same.any():
        return []
    return sorted(int(i) for i in order[1:][same])


# ---------------------------------------------------------------------------
# Permutations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijective reordering: new position ``i`` holds old index ``map[i]``."""

    map: np.ndarray
    method: str = "none"

    def __post_init__(self):
        m = np.asarray(self.map)
        if m.ndim != 1 or m.size == 0:
            raise InvalidArgument("permutation map must be a non-empty 1-D array")
        if not np.issubdtype(m.dtype, np.integer):
            if not np.all(np.equal(np.mod(m, 1), 0)):
                raise InvalidArgument("permutation entries must be integers")
        m = m.astype(np.int64, copy=True)
        if not np.array_equal(np.sort(m), np.arange(m.size)):
            raise InvalidArgument("permutation map is not a bijection on 0..n-1")
        if self.method not in ORDERING_METHODS:
            raise InvalidArgument(f"unknown ordering method {self.method!r}")
        m.setflags(write=False)
        object.__setattr__(self, "map", m)

    @property
    def n(self) -> int:
        return self.map.size

    @classmethod
    def identity(cls, n: int, method: str = "none") -> "Permutation":
        return cls(np.arange(n), method)

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.n)
        return Permutation(inv, self.method)

    def __eq__(self, other):
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.map, other.map)

    __hash__ = None


def apply_permutation(locs: LocationSet, perm: Permutation) -> LocationSet:
    """Reorder ``locs`` so that output point ``i`` is input point ``perm.map[i]``."""
    if perm.n != locs.n:
        raise InvalidArgument(f"permutation has {perm.n} entries but there are {locs.n} locations")
    return LocationSet(locs.coords[perm.map], locs.provenance)


# ---------------------------------------------------------------------------
# Parameter sets
# ---------------------------------------------------------------------------


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise InvalidArgument(f"{name} must be a finite positive number, got {value}")
    return value


@dataclass(frozen=True)
class MaternParams:
    """Variance ``sigma2``, range ``beta`` and smoothness ``nu``."""

    sigma2: float
    beta: float
    nu: float

    def __post_init__(self):
        for name in ("sigma2", "beta", "nu"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sigma2, self.beta, self.nu)

    def as_dict(self) -> dict:
        return {"sigma2": self.sigma2, "beta": self.beta, "nu": self.nu}


@dataclass(frozen=True)
class BivariateMaternParams:
    """Parsimonious bivariate Matérn: marginal std devs, common range ``a``,
    marginal smoothness and cross coefficient ``beta12``.

    The cross smoothness is always the mean of the marginals, and the
    colocated correlation (computed with spatial dimension ``dim``) must not
    exceed one in magnitude.
    """

    sigma11: float
    sigma22: float
    a: float
    nu11: float
    nu22: float
    beta12: float
    dim: int = 2

    def __post_init__(self):
        for name in ("sigma11", "sigma22", "a", "nu11", "nu22"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))
        object.__setattr__(self, "beta12", float(self.beta12))
        if not math.isfinite(self.beta12):
            raise InvalidArgument("beta12 must be finite")
        if int(self.dim) < 1:
            raise InvalidArgument("spatial dimension must be >= 1")
        object.__setattr__(self, "dim", int(self.dim))
        if abs(self.rho12) > 1.0:
            raise InvalidArgument(
                f"colocated correlation |rho12| = {abs(self.rho12):.6g} exceeds 1; "
                "the cross-covariance is not positive definite"
            )

    @property
    def nu12(self) -> float:
        return 0.5 * (self.nu11 + self.nu22)

    @property
    def rho12(self) -> float:
        half = self.dim / 2.0
        nu11, nu22, nu12 = self.nu11, self.nu22, self.nu12
        log_ratio = (
            math.lgamma(nu11 + half) - math.lgamma(nu11)
            + math.lgamma(nu22 + half) - math.lgamma(nu22)
            + math.lgamma(nu12) - math.lgamma(nu12 + half)
        )
        return self.beta12 * math.exp(log_ratio)

    def as_dict(self) -> dict:
        return {
            "sigma11": self.sigma11, "sigma22": self.sigma22, "a": self.a,
            "nu11": self.nu11, "nu22": self.nu22, "beta12": self.beta12, "dim": self.dim,
        }


@dataclass(frozen=True)
class TghParams:
    """Tukey g-and-h transform: location ``xi``, scale ``omega``, skewness
    ``g`` and tail weight ``h``."""

    xi: float = 0.0
    omega: float = 1.0
    g: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "xi", float(self.xi))
        object.__setattr__(self, "omega", _positive("omega", self.omega))
        object.__setattr__(self, "g", float(self.g))
        h = float(self.h)
        if not (math.isfinite(h) and h >= 0.0):
            raise InvalidArgument(f"h must be finite and >= 0, got {h}")
        object.__setattr__(self, "h", h)
        if not (math.isfinite(self.xi) and math.isfinite(self.g)):
            raise InvalidArgument("xi and g must be finite")

    def as_dict(self) -> dict:
        return {"xi": self.xi, "omega": self.omega, "g": self.g, "h": self.h}


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

_SEED_MAX = 2**64 - 1


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _SEED_MAX:
        raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed by ``seed`` and an optional stream path.

    ``make_rng(s, r)`` gives replicate ``r`` its own independent stream, so a
    replicate can be regenerated without running the ones before it.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([_check_seed(seed), *stream])))


def spawn_rngs(seed: int, count: int, *stream: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([_check_seed(seed), *stream])
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(count)]


def generate_uniform_locations(n: int, seed: int) -> LocationSet:
    """``n`` i.i.d. uniform points on the unit square, deterministic per seed."""
    if int(n) < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    rng = make_rng(seed, 0)
    return LocationSet(rng.random((int(n), 2)), "synthetic-uniform")


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_locations_csv(path: str | Path, locs: LocationSet, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in locs.coords:
            w.writerow([repr(float(x)), repr(float(y))])


def read_locations_csv(path: str | Path, provenance: str = "synthetic-uniform") -> LocationSet:
    """Read a ``x,y[,z]`` CSV. A third column is accepted but ignored."""
    rows = []
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["x", "y"]:
            raise InvalidArgument(f"{path}: expected header 'x,y[,z]', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise InvalidArgument(f"{path}: malformed row {lineno}: {row}") from exc
    return LocationSet(np.array(rows, dtype=np.float64).reshape(-1, 2), provenance)


def write_permutation(path: str | Path, perm: Permutation) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in perm.map))


def read_permutation(path: str | Path, method: str = "none") -> Permutation:
    text = Path(path).read_text().split()
    try:
        values = [int(t) for t in text]
    except ValueError as exc:
        raise InvalidArgument(f"{path}: permutation file must hold one integer per line") from exc
    return Permutation(np.array(values, dtype=np.int64), method)


def write_field_csv(path: str | Path, locs: LocationSet, z, comment: str | None = None) -> None:
    """Write locations with one observation per location as ``x,y,z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (locs.n,):
        raise InvalidArgument(f"expected {locs.n} observations, got shape {z.shape}")
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z"])
        for (x, y), v in zip(locs.coords, z):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def read_field_csv(path: str | Path, provenance: str = "synthetic-uniform") -> tuple[LocationSet, np.ndarray]:
    """Read an ``x,y,z`` CSV written by :func:`write_field_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(ln for ln in fh if not ln.startswith("#"))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["x", "y", "z"]:
            raise InvalidArgument(f"{path}: expected header 'x,y,z', got {header}")
        try:
            data = np.array([[float(v) for v in row[:3]] for row in reader if row], dtype=np.float64)
        except ValueError as exc:
            raise InvalidArgument(f"{path}: malformed row: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 3:
        raise InvalidArgument(f"{path}: every row needs three fields")
    return LocationSet(data[:, :2], provenance), data[:, 2]
