"""CSV ingestion of gridded field measurements and random subsetting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import IngestError, InvalidArgument, LocationSet, make_rng

__all__ = ["RawRecord", "IngestedData", "ingest_csv", "subset_random"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawRecord:
    lon: float
    lat: float
    value: float


@dataclass(frozen=True, eq=False)
class IngestedData:
    """Normalized locations with aligned, standardized values.

    ``counts`` holds ``rows`` (data rows read), ``dropped_missing`` and
    ``kept``. ``transform`` records how raw values map to the stored ones:
    ``x = (lon - lon_min) / (lon_max - lon_min)``, likewise for ``y``, and
    ``value = (raw - mean) / std``.
    """

    locs: LocationSet
    values: np.ndarray
    counts: dict = field(default_factory=dict)
    transform: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.locs.n,):
            raise InvalidArgument("values must align one-to-one with locations")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.locs.n


def _minmax(a: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.zeros_like(a), lo, hi
    # clip absorbs the last-ulp overshoot of (hi - lo) / (hi - lo)
    return np.clip((a - lo) / (hi - lo), 0.0, 1.0), lo, hi


def ingest_csv(
    path: str | Path,
    lon_col: str = "lon",
    lat_col: str = "lat",
    value_col: str = "value",
    missing: str | None = None,
) -> IngestedData:
    """Read ``path`` (header row required) into normalized locations and values.

    A row is dropped as missing when any of the three fields is empty, is
    ``NaN``, or equals the ``missing`` sentinel (compared as text and, when
    numeric, as a number). Lines starting with ``#`` are skipped.

    Raises
    ------
    IngestError
        On a missing column, a row with the wrong number of fields, a
        non-numeric value, duplicate locations, or when no valid row is left.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc.strerror}") from exc
    sentinel_num = None
    if missing is not None:
        try:
            sentinel_num = float(missing)
        except ValueError:
            pass

    def is_missing(s: str) -> bool:
        s = s.strip()
        if s == "" or s.lower() in ("nan", "na") or (missing is not None and s == missing.strip()):
            return True
        if sentinel_num is not None:
            try:
                return float(s) == sentinel_num
            except ValueError:
                return False
        return False

    records: list[RawRecord] = []
    rows = dropped = 0
    with fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            lineno = reader.line_num
            if row and row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [h.strip() for h in row]
                try:
                    cols = [header.index(c) for c in (lon_col, lat_col, value_col)]
                except ValueError:
                    raise IngestError(
                        f"header {header} lacks one of the columns {lon_col!r}, {lat_col!r}, {value_col!r}", line=lineno
                    ) from None
                continue
            if not row or all(not c.strip() for c in row):
                continue
            rows += 1
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
            fields = [row[c] for c in cols]
            if any(is_missing(f) for f in fields):
                dropped += 1
                continue
            try:
                lon, lat, val = (float(f) for f in fields)
            except ValueError:
                raise IngestError(f"non-numeric field in {fields}", line=lineno) from None
            if not all(math.isfinite(t) for t in (lon, lat, val)):
                raise IngestError(f"non-finite field in {fields}", line=lineno)
            records.append(RawRecord(lon, lat, val))
    if header is None:
        raise IngestError(f"{path} is empty")
    if not records:
        raise IngestError(f"{path} has no valid rows ({rows} read, {dropped} missing)")
    if dropped:
        log.info("dropped %d of %d rows with missing values", dropped, rows)

    raw = np.array([(r.lon, r.lat, r.value) for r in records])
    x, lon_min, lon_max = _minmax(raw[:, 0])
    y, lat_min, lat_max = _minmax(raw[:, 1])
    mean = float(raw[:, 2].mean())
    std = float(raw[:, 2].std())
    values = raw[:, 2] - mean
    if std > 0:
        values = values / std
    try:
        locs = LocationSet(np.column_stack([x, y]), "ingested")
    except InvalidArgument as exc:
        raise IngestError(str(exc)) from None
    counts = {"rows": rows, "dropped_missing": dropped, "kept": len(records)}
    transform = {
        "lon_min": lon_min, "lon_max": lon_max, "lat_min": lat_min, "lat_max": lat_max,
        "value_mean": mean, "value_std": std,
    }
    return IngestedData(locs, values, counts, transform)


def subset_random(data: IngestedData, m: int, seed: int) -> IngestedData:
    """Uniform sample of ``m`` aligned (location, value) pairs without replacement."""
    if not 1 <= m <= data.n:
        raise InvalidArgument(f"subset size must be in [1, {data.n}], got {m}")
    idx = make_rng(seed, 2).choice(data.n, size=m, replace=False)
    locs = LocationSet(data.locs.coords[idx], data.locs.provenance)
    counts = {**data.counts, "subset": m}
    return IngestedData(locs, data.values[idx], counts, data.transform)
