"""Vehicle typing and three-vehicle lane-change event extraction.

An event is built around a lane-changing vehicle (ego), the nearest
preceding vehicle in its original lane (por) and the nearest vehicle in its
target lane (ta). Distances are center-to-center along canonical x.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._kmeans import kmeans
from .errors import ValidationError
from .ingest import Recording, Track, canonicalize

logger = logging.getLogger(__name__)

CLASS_NAMES = ("PC", "HV", "OT")
DEFAULT_TYPE_FILTER = ("PC", "PC", "PC")
ROLES = ("ego", "por", "ta")


@dataclass(frozen=True)
class VehicleClass:
    label: str
    centroid: tuple[float, float]


@dataclass
class VehicleTyping:
    labels: np.ndarray
    classes: tuple[VehicleClass, ...]
    objective_trace: list[float]


@dataclass(frozen=True, eq=False)
class Scenario:
    """Positions ``(x_ego, y_ego, x_por, y_por, x_ta, y_ta)`` per frame, shape ``(T, 6)``."""

    points: np.ndarray
    frame_rate: float
    first_frame: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 6:
            raise ValidationError(f"scenario points must be (T, 6), got {pts.shape}")
        if len(pts) < 2:
            raise ValidationError("scenario needs at least 2 frames")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("scenario contains non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class LcEvent:
    recording_id: str
    ego_id: int
    por_id: int
    ta_id: int
    t_c: int
    t_start: int
    t_end: int
    truncated: bool
    type_triple: tuple[str, str, str]
    scenario: Scenario
    tracks: tuple[Track, Track, Track]

    @property
    def event_id(self) -> str:
        return f"{self.recording_id}:{self.ego_id}:{self.t_c}"


@dataclass(frozen=True)
class LcWindow:
    t_start: int
    t_end: int
    truncated: bool


@dataclass(frozen=True)
class Neighbors:
    por_id: int
    ta_id: int
    dx_por: float
    dx_ta: float


def classify_vehicle_types(dims: Sequence[tuple[float, float]], seed: int = 0) -> VehicleTyping:
    """Three-class K-means on ``(length, width)``; classes named PC < HV < OT by length."""
    X = np.asarray(dims, dtype=float).reshape(-1, 2)
    if len(np.unique(X, axis=0)) < 3:
        raise ValidationError("vehicle typing needs at least 3 distinct (length, width) pairs")
    res = kmeans(X, 3, np.random.default_rng(seed), init="farthest", max_iter=300, tol=1e-6)
    order = np.argsort(res.centers[:, 0], kind="stable")
    rank = np.empty(3, dtype=int)
    rank[order] = np.arange(3)
    labels = np.array(CLASS_NAMES)[rank[res.labels]]
    classes = tuple(VehicleClass(CLASS_NAMES[r], (float(res.centers[j, 0]), float(res.centers[j, 1])))
                    for r, j in enumerate(order))
    return VehicleTyping(labels, classes, res.trace)


def classify_recordings(recordings: Iterable[Recording], seed: int = 0
                        ) -> tuple[dict[tuple[str, int], str], VehicleTyping]:
    """Pool vehicle dimensions over recordings and type every vehicle."""
    keys, dims = [], []
    for rec in recordings:
        for vid, tr in sorted(rec.tracks.items()):
            keys.append((rec.recording_id, vid))
            dims.append((tr.length, tr.width))
    typing = classify_vehicle_types(dims, seed)
    return dict(zip(keys, typing.labels.tolist())), typing


def detect_cross_lane(track: Track, recording: Recording | None = None) -> list[int]:
    """Frames at which the lane id differs from the previous frame."""
    idx = np.flatnonzero(np.diff(track.lane_id) != 0) + 1
    return track.frames[idx].tolist()


def bound_lc_window(track: Track, t_c: int, *, min_offset: float = 0.9,
                    eps_a: float = 0.01, eps_v: float = 0.1) -> LcWindow | None:
    """Start and end frames of the lane change crossing at ``t_c``.

    Scanning away from ``t_c`` in each direction, the boundary is the first
    frame more than ``min_offset`` meters laterally from the crossing point
    where lateral acceleration is steady (``|ay[n] - ay[n-1]| <= eps_a``) and
    lateral speed has died out (``|vy| <= eps_v``). A side with no such frame
    falls back to the track end and marks the window truncated. Returns
    ``None`` when the track has no frame on either side of ``t_c`` or never
    moves ``min_offset`` away from the crossing point.
    """
    k_c = track.index(t_c)
    n = len(track)
    if n < 3 or k_c < 1 or k_c > n - 2:
        return None
    y, vy, ay = track.y, track.vy, track.ay
    far = np.abs(y - y[k_c]) > min_offset
    if not far.any():
        return None
    ok = far & (np.abs(vy) <= eps_v)
    steady = np.zeros(n, dtype=bool)
    steady[1:] = np.abs(np.diff(ay)) <= eps_a
    ok &= steady

    before = np.flatnonzero(ok[:k_c])
    after = np.flatnonzero(ok[k_c + 1:])
    truncated = False
    if before.size:
        k_start = int(before[-1])
    else:
        k_start, truncated = 0, True
    if after.size:
        k_end = k_c + 1 + int(after[0])
    else:
        k_end, truncated = n - 1, True
    return LcWindow(int(track.frames[k_start]), int(track.frames[k_end]), truncated)


def _state_at(track: Track, frame: int):
    k = track.index(frame)
    return float(track.x[k]), int(track.lane_id[k])


def select_neighbors(recording: Recording, ego_id: int, t_start: int, target_lane: int, *,
                     max_por: float = 120.0, max_ta: float = 100.0) -> Neighbors | None:
    """por: nearest vehicle ahead in the original lane within ``max_por``;
    ta: vehicle in ``target_lane`` with the smallest ``|dx| <= max_ta``.
    Ties go to the lower vehicle id."""
    ego = recording.track(ego_id)
    x_ego, lane0 = _state_at(ego, t_start)
    if lane0 == target_lane:
        return None
    por, ta = None, None
    for vid in sorted(recording.tracks):
        if vid == ego_id:
            continue
        tr = recording.tracks[vid]
        if not tr.covers(t_start, t_start):
            continue
        x, lane = _state_at(tr, t_start)
        dx = x - x_ego
        if lane == lane0 and 0.0 < dx < max_por and (por is None or dx < por[1]):
            por = (vid, dx)
        if lane == target_lane and abs(dx) <= max_ta and (ta is None or abs(dx) < abs(ta[1])):
            ta = (vid, dx)
    if por is None or ta is None:
        return None
    return Neighbors(por[0], ta[0], por[1], ta[1])


def _candidate_windows(track: Track, **window_kw) -> list[tuple[int, LcWindow]]:
    """Crossings with their windows; overlapping windows fold into the earlier one."""
    merged: list[tuple[int, LcWindow]] = []
    for t_c in detect_cross_lane(track):
        win = bound_lc_window(track, t_c, **window_kw)
        if win is None:
            continue
        if merged and win.t_start <= merged[-1][1].t_end:
            tc0, w0 = merged[-1]
            merged[-1] = (tc0, LcWindow(w0.t_start, max(w0.t_end, win.t_end),
                                        w0.truncated or win.truncated))
            continue
        merged.append((t_c, win))
    return merged


def extract_events(recording: Recording, vehicle_classes: Mapping[int, str],
                   type_filter: Sequence[str] | None = DEFAULT_TYPE_FILTER, *,
                   min_offset: float = 0.9, eps_a: float = 0.01, eps_v: float = 0.1,
                   max_por: float = 120.0, max_ta: float = 100.0) -> list[LcEvent]:
    """All three-vehicle lane-change events of ``recording``.

    ``vehicle_classes`` maps vehicle id to a class label. ``type_filter`` is
    the required ``(ego, por, ta)`` class triple; ``None`` keeps all triples.
    """
    rec = canonicalize(recording)
    events: list[LcEvent] = []
    for ego_id in sorted(rec.tracks):
        ego = rec.tracks[ego_id]
        for t_c, win in _candidate_windows(ego, min_offset=min_offset, eps_a=eps_a, eps_v=eps_v):
            target_lane = int(ego.lane_id[ego.index(t_c)])
            nb = select_neighbors(rec, ego_id, win.t_start, target_lane,
                                  max_por=max_por, max_ta=max_ta)
            if nb is None:
                logger.debug("ego %s @%s: no por/ta", ego_id, t_c)
                continue
            ids = (ego_id, nb.por_id, nb.ta_id)
            triple = tuple(vehicle_classes.get(v, "?") for v in ids)
            if type_filter is not None and triple != tuple(type_filter):
                continue
            tracks = [rec.tracks[v] for v in ids]
            if not all(tr.covers(win.t_start, win.t_end) for tr in tracks):
                logger.debug("ego %s @%s: partial coverage", ego_id, t_c)
                continue
            windows = tuple(tr.window(win.t_start, win.t_end) for tr in tracks)
            pts = np.column_stack([c for tr in windows for c in (tr.x, tr.y)])
            events.append(LcEvent(
                recording_id=rec.recording_id, ego_id=ego_id, por_id=nb.por_id, ta_id=nb.ta_id,
                t_c=int(t_c), t_start=win.t_start, t_end=win.t_end, truncated=win.truncated,
                type_triple=triple, scenario=Scenario(pts, rec.frame_rate, win.t_start),
                tracks=windows))
    return events


MANIFEST_COLUMNS = ("recording_id", "ego_id", "por_id", "ta_id", "t_c", "t_start", "t_end",
                    "truncated", "type_triple")


def write_events_manifest(events: Sequence[LcEvent], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for ev in events:
            w.writerow([ev.recording_id, ev.ego_id, ev.por_id, ev.ta_id, ev.t_c, ev.t_start,
                        ev.t_end, int(ev.truncated), "-".join(ev.type_triple)])
    return path
