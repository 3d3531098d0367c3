"""Build taxi-style multimodal sequences from raw trip records.

Each trip yields a pickup and a dropoff event. Events are typed by a
latitude-band region scheme crossed with the pickup/dropoff kind, carry a
templated text description with the nearest gazetteer landmark, and
reference a 224x224 map patch cropped around the event coordinates.
Sequences are grouped per medallion per calendar day with times in hours
from midnight, then a greedy variance-minimizing pass selects a
type-balanced subset.

Minute-resolution trip data produces tied timestamps; this constructor is
the upstream stage allowed to resolve them, which it does deterministically
by bumping each non-increasing time by a small configurable epsilon.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import (
    InsufficientCandidatesError,
    MissingLandmarkError,
    OutOfCoverageError,
    ParseError,
    SchemaError,
)
from .events import Event, EventSequence

PATCH_SIZE = 224
PATCH_FILL = 128
EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class TripRecord:
    medallion: str
    pickup_time: datetime
    dropoff_time: datetime
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    passenger_count: int
    trip_distance: float


_REQUIRED_COLUMNS = (
    "medallion",
    "pickup_datetime",
    "dropoff_datetime",
    "passenger_count",
    "trip_distance",
    "pickup_longitude",
    "pickup_latitude",
    "dropoff_longitude",
    "dropoff_latitude",
)


def load_trips_csv(path: str | Path) -> list[TripRecord]:
    """Read trips from a CSV with NYC TLC trip_data column names."""
    trips = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty CSV file")
        headers = {name.strip().lower(): name for name in reader.fieldnames}
        for col in _REQUIRED_COLUMNS:
            if col not in headers:
                raise SchemaError(f"missing column '{col}'")
        for line_no, row in enumerate(reader, start=2):
            try:
                get = lambda col: row[headers[col]].strip()
                trips.append(
                    TripRecord(
                        medallion=get("medallion"),
                        pickup_time=datetime.fromisoformat(get("pickup_datetime")),
                        dropoff_time=datetime.fromisoformat(get("dropoff_datetime")),
                        pickup_lat=float(get("pickup_latitude")),
                        pickup_lon=float(get("pickup_longitude")),
                        dropoff_lat=float(get("dropoff_latitude")),
                        dropoff_lon=float(get("dropoff_longitude")),
                        passenger_count=int(get("passenger_count")),
                        trip_distance=float(get("trip_distance")),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise ParseError(line_no, str(exc)) from exc
    return trips


@dataclass(frozen=True)
class GeoAffine:
    """Invertible affine map (lon, lat) -> (px, py) over a raster."""

    width: int
    height: int
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @classmethod
    def from_bbox(
        cls,
        lon_min: float,
        lon_max: float,
        lat_min: float,
        lat_max: float,
        width: int,
        height: int,
    ) -> "GeoAffine":
        sx = (width - 1) / (lon_max - lon_min)
        sy = (height - 1) / (lat_max - lat_min)
        return cls(
            width=width,
            height=height,
            a=sx,
            b=0.0,
            c=-sx * lon_min,
            d=0.0,
            e=-sy,
            f=sy * lat_max,
        )

    def forward(self, lon: float, lat: float) -> tuple[float, float]:
        return (
            self.a * lon + self.b * lat + self.c,
            self.d * lon + self.e * lat + self.f,
        )

    def inverse(self, px: float, py: float) -> tuple[float, float]:
        det = self.a * self.e - self.b * self.d
        lon = (self.e * (px - self.c) - self.b * (py - self.f)) / det
        lat = (-self.d * (px - self.c) + self.a * (py - self.f)) / det
        return lon, lat


def load_bbox(path: str | Path) -> dict[str, float]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    for key in ("lon_min", "lon_max", "lat_min", "lat_max"):
        if key not in obj:
            raise SchemaError(f"bbox file missing '{key}'")
    return {k: float(obj[k]) for k in ("lon_min", "lon_max", "lat_min", "lat_max")}


@dataclass(frozen=True)
class RegionScheme:
    """Latitude bands crossed with pickup/dropoff.

    Bands are half-open: a point exactly on an edge belongs to the band
    above it. The default id layout interleaves by region so the six types
    are (lower, mid, upper) x (pickup, dropoff) = 2*band + is_dropoff.
    """

    band_edges: tuple[float, ...] = (40.725, 40.775)
    lat_range: tuple[float, float] = (40.68, 40.90)
    lon_range: tuple[float, float] = (-74.05, -73.90)
    type_for: dict = field(
        default_factory=lambda: {
            (band, kind): 2 * band + (1 if kind == "dropoff" else 0)
            for band in range(3)
            for kind in ("pickup", "dropoff")
        }
    )

    @property
    def type_count(self) -> int:
        return len(self.type_for)


def classify_event(
    lat: float, lon: float, kind: str, scheme: RegionScheme
) -> int:
    """Band lookup then kind pairing; raises outside the covered box."""
    if not (
        scheme.lat_range[0] <= lat <= scheme.lat_range[1]
        and scheme.lon_range[0] <= lon <= scheme.lon_range[1]
    ):
        raise OutOfCoverageError(f"({lat}, {lon}) outside covered box")
    band = int(np.searchsorted(scheme.band_edges, lat, side="right"))
    return scheme.type_for[(band, kind)]


def load_gazetteer(path: str | Path | None = None) -> list[tuple[str, float, float]]:
    """Landmark (name, lat, lon) rows; defaults to the bundled file."""
    if path is None:
        ref = importlib.resources.files("mmtpp.data") / "gazetteer.csv"
        text = ref.read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = []
    for row in csv.DictReader(text.splitlines()):
        rows.append((row["name"], float(row["lat"]), float(row["lon"])))
    if not rows:
        raise MissingLandmarkError("gazetteer is empty")
    return rows


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def nearest_landmark(
    lat: float, lon: float, gazetteer: Sequence[tuple[str, float, float]]
) -> str:
    if not gazetteer:
        raise MissingLandmarkError("gazetteer is empty")
    best = min(gazetteer, key=lambda row: haversine_km(lat, lon, row[1], row[2]))
    return best[0]


def render_text(
    kind: str,
    landmark: str,
    lat: float,
    lon: float,
    passengers: int,
    origin: tuple[str, float, float] | None = None,
    distance: float | None = None,
) -> str:
    """Fixed-template event description (formats are golden-tested)."""
    if not landmark:
        raise MissingLandmarkError("landmark name is empty")
    if kind == "pickup":
        return f"Picked up at {landmark} ({lat:.6f}, {lon:.6f}), {passengers} passengers."
    if kind == "dropoff":
        if origin is None or distance is None:
            raise ValueError("dropoff text needs origin info and trip distance")
        o_name, o_lat, o_lon = origin
        if not o_name:
            raise MissingLandmarkError("origin landmark name is empty")
        return (
            f"Dropped off from {o_name} ({o_lat:.6f}, {o_lon:.6f}) to "
            f"{landmark} ({lat:.6f}, {lon:.6f}), {passengers} passengers, "
            f"{distance:.2f} miles trip."
        )
    raise ValueError(f"unknown event kind {kind!r}")


def synthetic_raster(width: int, height: int) -> np.ndarray:
    """Deterministic procedural street grid, grayscale uint8."""
    x = np.arange(width)[None, :]
    y = np.arange(height)[None, :].T
    img = np.full((height, width), 225, dtype=np.uint8)
    streets = (x % 41 < 2) | (y % 47 < 2)
    avenues = (x % 173 < 3) | (y % 181 < 3)
    blocks = ((x // 41 + y // 47) % 11 == 0) & ~streets
    img[blocks] = 200
    img[streets] = 140
    img[avenues] = 90
    return img


def crop_patch(
    raster: np.ndarray,
    affine: GeoAffine,
    lat: float,
    lon: float,
    size: int = PATCH_SIZE,
    margin: int = 0,
) -> np.ndarray:
    """Patch centered at the mapped pixel, gray-padded off the raster edge."""
    px, py = affine.forward(lon, lat)
    cx, cy = int(round(px)), int(round(py))
    h, w = raster.shape[:2]
    if not (-margin <= cx < w + margin and -margin <= cy < h + margin):
        raise OutOfCoverageError(
            f"center pixel ({cx}, {cy}) outside raster {w}x{h} (margin {margin})"
        )
    half = size // 2
    shape = (size, size) if raster.ndim == 2 else (size, size, raster.shape[2])
    patch = np.full(shape, PATCH_FILL, dtype=raster.dtype)
    y0, y1 = cy - half, cy - half + size
    x0, x1 = cx - half, cx - half + size
    sy0, sy1 = max(y0, 0), min(y1, h)
    sx0, sx1 = max(x0, 0), min(x1, w)
    if sy0 < sy1 and sx0 < sx1:
        patch[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = raster[sy0:sy1, sx0:sx1]
    return patch


def _strictify(times: list[float], bump: float) -> list[float]:
    out = []
    prev = 0.0
    for t in times:
        t = max(t, prev + bump)
        out.append(t)
        prev = t
    return out


def default_group_key(trip: TripRecord) -> tuple:
    return (trip.medallion, trip.pickup_time.date())


def trips_to_candidates(
    trips: Iterable[TripRecord],
    scheme: RegionScheme,
    gazetteer: Sequence[tuple[str, float, float]],
    group_key: Callable[[TripRecord], tuple] = default_group_key,
    tie_bump_hours: float = 1e-4,
    min_events: int = 4,
) -> list[EventSequence]:
    """Candidate sequences (no images yet); out-of-coverage trips are skipped."""
    groups: dict[tuple, list[TripRecord]] = {}
    for trip in trips:
        try:
            classify_event(trip.pickup_lat, trip.pickup_lon, "pickup", scheme)
            classify_event(trip.dropoff_lat, trip.dropoff_lon, "dropoff", scheme)
        except OutOfCoverageError:
            continue
        groups.setdefault(group_key(trip), []).append(trip)
    candidates = []
    for key in sorted(groups, key=repr):
        members = sorted(groups[key], key=lambda t: (t.pickup_time, t.dropoff_time))
        raw: list[tuple[datetime, str, TripRecord]] = []
        for trip in members:
            raw.append((trip.pickup_time, "pickup", trip))
            raw.append((trip.dropoff_time, "dropoff", trip))
        raw.sort(key=lambda item: (item[0], item[1] == "dropoff"))
        origin = datetime.combine(raw[0][0].date(), datetime.min.time())
        hours = [(when - origin).total_seconds() / 3600.0 for when, _, _ in raw]
        hours = _strictify(hours, tie_bump_hours)
        events = []
        for t, (when, kind, trip) in zip(hours, raw):
            if kind == "pickup":
                lat, lon = trip.pickup_lat, trip.pickup_lon
                text = render_text(
                    "pickup",
                    nearest_landmark(lat, lon, gazetteer),
                    lat,
                    lon,
                    trip.passenger_count,
                )
            else:
                lat, lon = trip.dropoff_lat, trip.dropoff_lon
                o_lat, o_lon = trip.pickup_lat, trip.pickup_lon
                text = render_text(
                    "dropoff",
                    nearest_landmark(lat, lon, gazetteer),
                    lat,
                    lon,
                    trip.passenger_count,
                    origin=(nearest_landmark(o_lat, o_lon, gazetteer), o_lat, o_lon),
                    distance=trip.trip_distance,
                )
            events.append(
                Event(
                    time=t,
                    type_id=classify_event(lat, lon, kind, scheme),
                    text=text,
                )
            )
        if len(events) < min_events:
            continue
        candidates.append(
            EventSequence(
                events=tuple(events),
                horizon=events[-1].time,
                type_count=scheme.type_count,
                time_unit="h",
            )
        )
    return candidates


def greedy_select(
    candidates: Sequence[EventSequence],
    target_count: int,
    type_count: int = 6,
) -> list[int]:
    """Pick target_count candidates, each step minimizing the variance of
    the running type-count histogram; ties break to the lowest index."""
    if len(candidates) < target_count:
        raise InsufficientCandidatesError(
            f"{len(candidates)} candidates for target {target_count}"
        )
    hists = np.stack(
        [np.bincount(seq.types, minlength=type_count) for seq in candidates]
    ).astype(np.int64)
    running = np.zeros(type_count, dtype=np.int64)
    available = np.ones(len(candidates), dtype=bool)
    chosen = []
    for _ in range(target_count):
        # integer variance score k*sum(x^2) - sum(x)^2 keeps ties exact, so
        # argmin deterministically breaks them to the lowest index
        trial = running[None, :] + hists
        scores = type_count * (trial * trial).sum(axis=1) - trial.sum(axis=1) ** 2
        scores[~available] = np.iinfo(np.int64).max
        pick = int(np.argmin(scores))
        chosen.append(pick)
        running += hists[pick]
        available[pick] = False
    return chosen


def attach_patches(
    seqs: Sequence[EventSequence],
    trips_coords: Sequence[Sequence[tuple[float, float]]],
    raster: np.ndarray,
    affine: GeoAffine,
    out_dir: str | Path,
) -> list[EventSequence]:
    """Crop one PNG per event and attach its path as the image reference."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    updated = []
    for si, (seq, coords) in enumerate(zip(seqs, trips_coords)):
        events = []
        for ei, (ev, (lat, lon)) in enumerate(zip(seq.events, coords)):
            patch = crop_patch(raster, affine, lat, lon)
            rel = f"patch_{si:04d}_{ei:04d}.png"
            Image.fromarray(patch).save(out_dir / rel)
            events.append(
                Event(ev.time, ev.type_id, ev.text, image_ref=str(out_dir / rel))
            )
        updated.append(
            EventSequence(
                tuple(events), seq.horizon, seq.type_count, seq.time_unit
            )
        )
    return updated


_COORD_RE = re.compile(r"\((-?\d+\.\d+), (-?\d+\.\d+)\)")


def event_coordinates(seq: EventSequence) -> list[tuple[float, float]]:
    """Recover event coordinates from the templated text."""
    coords = []
    for ev in seq.events:
        lat, lon = _COORD_RE.findall(ev.text)[-1]
        coords.append((float(lat), float(lon)))
    return coords


def build_sequences(
    trips: Iterable[TripRecord],
    scheme: RegionScheme,
    gazetteer: Sequence[tuple[str, float, float]],
    target_count: int,
    raster: np.ndarray | None = None,
    affine: GeoAffine | None = None,
    patch_dir: str | Path | None = None,
    group_key: Callable[[TripRecord], tuple] = default_group_key,
    tie_bump_hours: float = 1e-4,
) -> list[EventSequence]:
    """Full pipeline: candidates, balanced selection, optional map patches."""
    candidates = trips_to_candidates(
        trips, scheme, gazetteer, group_key, tie_bump_hours
    )
    chosen = greedy_select(candidates, target_count, scheme.type_count)
    selected = [candidates[i] for i in chosen]
    if raster is not None and affine is not None and patch_dir is not None:
        coords = [event_coordinates(seq) for seq in selected]
        selected = attach_patches(selected, coords, raster, affine, patch_dir)
    return selected
