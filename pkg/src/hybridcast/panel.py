"""Spatio-temporal count panels: data model, CSV I/O and summary statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CAMEO_CODES = {
    1: "Make Public Statement",
    2: "Appeal",
    3: "Express Intent to Cooperate",
    4: "Consult",
    5: "Engage in Diplomatic Cooperation",
    6: "Engage in Material Cooperation",
    7: "Provide Aid",
    8: "Yield",
    9: "Investigate",
    10: "Demand",
    11: "Disapprove",
    12: "Reject",
    13: "Threaten",
    14: "Protest",
    15: "Exhibit Military Posture",
    16: "Reduce Relations",
    17: "Coerce",
    18: "Assault",
    19: "Fight",
    20: "Engage in Unconventional Mass Violence",
}

CSV_HEADER = ("location_id", "lat", "lon", "event_code", "time_index", "count")
TIME_STEPS = ("weekly", "daily")


class PanelFormatError(ValueError):
    """A panel file could not be parsed."""


class PanelValidationError(ValueError):
    """Panel contents violate a data-model invariant."""


@dataclass(frozen=True)
class Location:
    id: int
    latitude: float
    longitude: float
    region_label: str = ""

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise PanelValidationError(f"location {self.id}: latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise PanelValidationError(f"location {self.id}: longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True, order=True)
class SeriesKey:
    location_id: int
    event_code: int


@dataclass(frozen=True)
class EventPanel:
    """Count tensor indexed ``(location, event_code, time)``.

    ``counts[i, j, k]`` is the count for ``locations[i]``, ``event_codes[j]``
    at absolute time index ``start_index + k``.
    """

    locations: tuple[Location, ...]
    event_codes: tuple[int, ...]
    counts: np.ndarray
    time_step: str = "weekly"
    start_index: int = 0
    cameo: bool = False
    _loc_pos: dict = field(init=False, repr=False, compare=False)
    _code_pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "event_codes", tuple(int(c) for c in self.event_codes))
        ids = [loc.id for loc in self.locations]
        if len(set(ids)) != len(ids):
            raise PanelValidationError("location ids must be unique")
        if len(set(self.event_codes)) != len(self.event_codes):
            raise PanelValidationError("event codes must be unique")
        if counts.ndim != 3 or counts.shape[:2] != (len(ids), len(self.event_codes)):
            raise PanelValidationError(
                f"counts shape {counts.shape} inconsistent with "
                f"{len(ids)} locations x {len(self.event_codes)} codes")
        if counts.size and counts.min() < 0:
            raise PanelValidationError("counts must be non-negative")
        if self.time_step not in TIME_STEPS:
            raise PanelValidationError(f"time_step must be one of {TIME_STEPS}")
        if self.cameo:
            bad = [c for c in self.event_codes if c not in CAMEO_CODES]
            if bad:
                raise PanelValidationError(f"codes {bad} are not in the CAMEO vocabulary")
        object.__setattr__(self, "_loc_pos", {i: k for k, i in enumerate(ids)})
        object.__setattr__(self, "_code_pos", {c: k for k, c in enumerate(self.event_codes)})

    @property
    def n_times(self) -> int:
        return self.counts.shape[2]

    @property
    def end_index(self) -> int:
        """Last absolute time index (inclusive)."""
        return self.start_index + self.n_times - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start_index, self.start_index + self.n_times)

    def series_keys(self) -> list[SeriesKey]:
        return [SeriesKey(loc.id, c) for loc in self.locations for c in self.event_codes]

    def location(self, location_id: int) -> Location:
        return self.locations[self._loc_pos[location_id]]

    def indices(self, key: SeriesKey) -> tuple[int, int]:
        try:
            return self._loc_pos[key.location_id], self._code_pos[key.event_code]
        except KeyError:
            raise KeyError(f"{key} not in panel") from None

    def series(self, key: SeriesKey) -> np.ndarray:
        i, j = self.indices(key)
        return self.counts[i, j]

    def offset(self, time_index: int) -> int:
        """Array position of an absolute time index."""
        k = time_index - self.start_index
        if not 0 <= k < self.n_times:
            raise IndexError(f"time {time_index} outside [{self.start_index}, {self.end_index}]")
        return k

    def matrix(self, keys: Sequence[SeriesKey] | None = None) -> np.ndarray:
        """Counts as a (series, time) matrix in ``keys`` order."""
        keys = self.series_keys() if keys is None else keys
        return np.stack([self.series(k) for k in keys]) if keys else np.zeros((0, self.n_times), np.int64)

    def sparsity(self) -> float:
        return float((self.counts == 0).mean())

    def __iter__(self) -> Iterator[SeriesKey]:
        return iter(self.series_keys())


def _parse_int(text: str, name: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise PanelFormatError(f"line {lineno}: {name} {text!r} is not an integer") from None


def _parse_float(text: str, name: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise PanelFormatError(f"line {lineno}: {name} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise PanelFormatError(f"line {lineno}: {name} must be finite")
    return value


def load_panel(path, time_step: str = "weekly", cameo: bool = False) -> EventPanel:
    """Read a panel CSV (``location_id,lat,lon,event_code,time_index,count``).

    Cells absent from the file are zero. Raises :class:`PanelFormatError`
    (with the offending line number) for unparseable rows and
    :class:`PanelValidationError` for negative counts, duplicate cells or
    inconsistent coordinates.
    """
    coords: dict[int, tuple[float, float]] = {}
    cells: dict[tuple[int, int, int], int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise PanelFormatError(f"line 1: header must be {','.join(CSV_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise PanelFormatError(f"line {lineno}: expected 6 fields, got {len(row)}")
            loc = _parse_int(row[0], "location_id", lineno)
            lat = _parse_float(row[1], "lat", lineno)
            lon = _parse_float(row[2], "lon", lineno)
            code = _parse_int(row[3], "event_code", lineno)
            t = _parse_int(row[4], "time_index", lineno)
            count = _parse_int(row[5], "count", lineno)
            if count < 0:
                raise PanelValidationError(f"line {lineno}: negative count {count}")
            if coords.setdefault(loc, (lat, lon)) != (lat, lon):
                raise PanelValidationError(f"line {lineno}: location {loc} has conflicting coordinates")
            if (loc, code, t) in cells:
                raise PanelValidationError(f"line {lineno}: duplicate cell ({loc}, {code}, {t})")
            cells[(loc, code, t)] = count
    if not cells:
        raise PanelFormatError("panel file has no data rows")

    loc_ids = sorted(coords)
    codes = sorted({c for _, c, _ in cells})
    t0 = min(t for _, _, t in cells)
    t1 = max(t for _, _, t in cells)
    counts = np.zeros((len(loc_ids), len(codes), t1 - t0 + 1), dtype=np.int64)
    lpos = {v: k for k, v in enumerate(loc_ids)}
    cpos = {v: k for k, v in enumerate(codes)}
    for (loc, code, t), n in cells.items():
        counts[lpos[loc], cpos[code], t - t0] = n
    locations = [Location(i, *coords[i]) for i in loc_ids]
    return EventPanel(locations, codes, counts, time_step=time_step, start_index=t0, cameo=cameo)


def save_panel(panel: EventPanel, path) -> None:
    """Write every cell (zeros included) so that a reload reproduces the panel."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i, loc in enumerate(panel.locations):
            for j, code in enumerate(panel.event_codes):
                for k in range(panel.n_times):
                    w.writerow([loc.id, repr(loc.latitude), repr(loc.longitude), code,
                                panel.start_index + k, int(panel.counts[i, j, k])])


def log_transform(count, epsilon: float = 1.0):
    """``log(count + epsilon)``; works elementwise on arrays."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.log(np.asarray(count, dtype=np.float64) + epsilon)


def inverse_log_transform(value, epsilon: float = 1.0):
    return np.exp(value) - epsilon


def sparsity_metric(window) -> float:
    """Fraction of exact zeros in ``window``."""
    window = np.asarray(window)
    if window.size == 0:
        raise ValueError("sparsity of an empty window is undefined")
    return float(np.count_nonzero(window == 0) / window.size)


def empirical_quantile(history, tau: float) -> float:
    """Order-statistic quantile, interpolating linearly between closest ranks."""
    history = np.asarray(history, dtype=np.float64)
    if history.size == 0:
        raise ValueError("quantile of an empty history is undefined")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return float(np.quantile(history, tau, method="linear"))
