"""Morton and Hilbert curves on the 2^p x 2^p integer grid.

Scalar functions work on Python ints; the ``*_array`` variants are
vectorised over uint64 arrays and are what :func:`order_by_curve` uses.
Bit convention for Morton: x in the even bits, y in the odd bits.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..core import InvalidArgument, LocationSet, Location, Permutation

__all__ = [
    "DEFAULT_BITS",
    "GridCoord",
    "quantize",
    "dequantize",
    "quantize_array",
    "morton_index",
    "morton_decode",
    "morton_index_array",
    "morton_decode_array",
    "hilbert_index",
    "hilbert_decode",
    "hilbert_index_array",
    "hilbert_decode_array",
    "curve_indices",
    "order_by_curve",
]

DEFAULT_BITS = 16
MAX_BITS = 32


class GridCoord(NamedTuple):
    qx: int
    qy: int
    p: int


def _check_bits(p: int) -> int:
    p = int(p)
    if not 1 <= p <= MAX_BITS:
        raise InvalidArgument(f"bits per axis must be in [1, {MAX_BITS}], got {p}")
    return p


def _check_grid(g: GridCoord) -> None:
    _check_bits(g.p)
    side = 1 << g.p
    if not (0 <= g.qx < side and 0 <= g.qy < side):
        raise InvalidArgument(f"grid coordinate {g} outside [0, 2^{g.p})")


def quantize_array(values, p: int = DEFAULT_BITS) -> np.ndarray:
    """Map values in [0, 1] to ``round(v * (2^p - 1))`` as uint64.

    Rounding is half away from zero, which for non-negative input is
    ``floor(v * scale + 0.5)``.
    """
    p = _check_bits(p)
    v = np.asarray(values, dtype=np.float64)
    if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
        raise InvalidArgument("coordinates must lie in [0, 1] before quantization")
    scale = float((1 << p) - 1)
    return np.floor(v * scale + 0.5).astype(np.uint64)


def quantize(loc: Location | tuple[float, float], p: int = DEFAULT_BITS) -> GridCoord:
    qx, qy = quantize_array(np.array(loc, dtype=np.float64), p)
    return GridCoord(int(qx), int(qy), int(p))


def dequantize(g: GridCoord) -> Location:
    _check_grid(g)
    scale = float((1 << g.p) - 1)
    return Location(g.qx / scale, g.qy / scale)


# ---------------------------------------------------------------------------
# Morton
# ---------------------------------------------------------------------------

_SPREAD_MASKS = (
    (16, 0x0000FFFF0000FFFF),
    (8, 0x00FF00FF00FF00FF),
    (4, 0x0F0F0F0F0F0F0F0F),
    (2, 0x3333333333333333),
    (1, 0x5555555555555555),
)


_COMPACT_MASKS = (
    (1, 0x3333333333333333),
    (2, 0x0F0F0F0F0F0F0F0F),
    (4, 0x00FF00FF00FF00FF),
    (8, 0x0000FFFF0000FFFF),
    (16, 0x00000000FFFFFFFF),
)


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0xFFFFFFFF)
    for shift, mask in _SPREAD_MASKS:
        v = (v | (v << np.uint64(shift))) & np.uint64(mask)
    return v


def _compact_bits(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0x5555555555555555)
    for shift, mask in _COMPACT_MASKS:
        v = (v | (v >> np.uint64(shift))) & np.uint64(mask)
    return v


def morton_index_array(qx, qy) -> np.ndarray:
    qx = np.asarray(qx, dtype=np.uint64)
    qy = np.asarray(qy, dtype=np.uint64)
    return _spread_bits(qx) | (_spread_bits(qy) << np.uint64(1))


def morton_decode_array(c) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c, dtype=np.uint64)
    return _compact_bits(c), _compact_bits(c >> np.uint64(1))


def morton_index(g: GridCoord) -> int:
    _check_grid(g)
    out = 0
    for k in range(g.p):
        out |= ((g.qx >> k) & 1) << (2 * k)
        out |= ((g.qy >> k) & 1) << (2 * k + 1)
    return out


def morton_decode(c: int, p: int) -> GridCoord:
    p = _check_bits(p)
    c = int(c)
    if not 0 <= c < 4**p:
        raise InvalidArgument(f"Morton index {c} outside [0, 4^{p})")
    qx = qy = 0
    for k in range(p):
        qx |= ((c >> (2 * k)) & 1) << k
        qy |= ((c >> (2 * k + 1)) & 1) << k
    return GridCoord(qx, qy, p)


# ---------------------------------------------------------------------------
# Hilbert
#
# Orientation: the curve starts at (0, 0), first moves along +y, and ends at
# (2^p - 1, 0). At p=1 the visiting order is (0,0), (0,1), (1,1), (1,0).
# ---------------------------------------------------------------------------


def hilbert_index(g: GridCoord) -> int:
    _check_grid(g)
    side = 1 << g.p
    x, y = g.qx, g.qy
    d = 0
    s = side >> 1
    while s > 0:
        rx = 1 if x & s else 0
        ry = 1 if y & s else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = side - 1 - x
                y = side - 1 - y
            x, y = y, x
        s >>= 1
    return d


def hilbert_decode(c: int, p: int) -> GridCoord:
    p = _check_bits(p)
    c = int(c)
    if not 0 <= c < 4**p:
        raise InvalidArgument(f"Hilbert index {c} outside [0, 4^{p})")
    side = 1 << p
    x = y = 0
    t = c
    s = 1
    while s < side:
        rx = 1 & (t >> 1)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t >>= 2
        s <<= 1
    return GridCoord(x, y, p)


def hilbert_index_array(qx, qy, p: int) -> np.ndarray:
    p = _check_bits(p)
    x = np.array(qx, dtype=np.uint64, copy=True)
    y = np.array(qy, dtype=np.uint64, copy=True)
    last = np.uint64((1 << p) - 1)
    one = np.uint64(1)
    d = np.zeros_like(x)
    for level in range(p - 1, -1, -1):
        s = np.uint64(1 << level)
        rx = (x >> np.uint64(level)) & one
        ry = (y >> np.uint64(level)) & one
        d += s * s * ((np.uint64(3) * rx) ^ ry)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, last - x, x)
        y = np.where(flip, last - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
    return d


def hilbert_decode_array(c, p: int) -> tuple[np.ndarray, np.ndarray]:
    p = _check_bits(p)
    t = np.array(c, dtype=np.uint64, copy=True)
    one = np.uint64(1)
    x = np.zeros_like(t)
    y = np.zeros_like(t)
    for level in range(p):
        s = np.uint64(1 << level)
        rx = one & (t >> one)
        ry = one & (t ^ rx)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, s - one - x, x)
        y = np.where(flip, s - one - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        x += s * rx
        y += s * ry
        t >>= np.uint64(2)
    return x, y


# ---------------------------------------------------------------------------
# Ordering
# ---------------------------------------------------------------------------


def curve_indices(locs: LocationSet, curve: str, p: int = DEFAULT_BITS) -> np.ndarray:
    qx = quantize_array(locs.coords[:, 0], p)
    qy = quantize_array(locs.coords[:, 1], p)
    if curve == "morton":
        return morton_index_array(qx, qy)
    if curve == "hilbert":
        return hilbert_index_array(qx, qy, p)
    raise InvalidArgument(f"unknown curve {curve!r}; expected 'morton' or 'hilbert'")


def order_by_curve(locs: LocationSet, curve: str, p: int = DEFAULT_BITS) -> Permutation:
    """Sort locations by ascending curve index of their quantized cell.

    Points sharing a cell keep their original relative order.
    """
    keys = curve_indices(locs, curve, p)
    return Permutation(np.argsort(keys, kind="stable"), curve)
