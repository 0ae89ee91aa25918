"""Trajectory recordings: highD-style CSV parsing, canonical frame, serialization.

A recording is parsed from the three highD files (``XX_tracks.csv``,
``XX_tracksMeta.csv``, ``XX_recordingMeta.csv``). highD stores the upper-left
corner of each bounding box; tracks here always hold the box *center*.

``canonicalize`` rotates every track that travels toward decreasing x by 180
degrees about the center of the recorded segment, so all vehicles move toward
+x afterwards. Lane ids of rotated tracks are negated, which keeps lane id
increasing with canonical y in both directions and keeps the two driving
directions' ids disjoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd

from .errors import ParseError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

TRACK_COLUMNS = ("frame", "id", "x", "y", "xVelocity", "yVelocity",
                 "xAcceleration", "yAcceleration", "laneId")
TRACK_META_COLUMNS = ("id", "width", "height")
RECORDING_META_COLUMNS = ("frameRate", "upperLaneMarkings", "lowerLaneMarkings")

CANONICAL_COLUMNS = ("vehicle_id", "length", "width", "frame", "x", "y",
                     "vx", "vy", "ax", "ay", "lane_id")

_ARRAYS = ("frames", "x", "y", "vx", "vy", "ax", "ay", "lane_id")


class TrackPoint(NamedTuple):
    frame_index: int
    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float
    lane_id: int


@dataclass(frozen=True, eq=False)
class Track:
    """One vehicle's trajectory, stored column-wise.

    ``frames`` are consecutive integers. Positions are box centers in meters.
    """

    vehicle_id: int
    length: float
    width: float
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    lane_id: np.ndarray

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValidationError(f"vehicle {self.vehicle_id}: length and width must be positive")
        for name in _ARRAYS:
            dtype = np.int64 if name in ("frames", "lane_id") else np.float64
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=dtype))
        n = len(self.frames)
        if n == 0:
            raise ValidationError(f"vehicle {self.vehicle_id}: track has no points")
        for name in _ARRAYS:
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValidationError(f"vehicle {self.vehicle_id}: column {name} has wrong length")
            arr.setflags(write=False)
        if n > 1 and not np.all(np.diff(self.frames) == 1):
            raise ValidationError(f"vehicle {self.vehicle_id}: frames are not consecutive")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    @property
    def points(self) -> list[TrackPoint]:
        return list(self.iter_points())

    def iter_points(self) -> Iterator[TrackPoint]:
        for k in range(len(self)):
            yield TrackPoint(int(self.frames[k]), float(self.x[k]), float(self.y[k]),
                             float(self.vx[k]), float(self.vy[k]), float(self.ax[k]),
                             float(self.ay[k]), int(self.lane_id[k]))

    def index(self, frame: int) -> int:
        """Array index of ``frame``; raises ``KeyError`` if not covered."""
        k = int(frame) - self.first_frame
        if k < 0 or k >= len(self):
            raise KeyError(f"vehicle {self.vehicle_id} has no frame {frame}")
        return k

    def covers(self, start: int, end: int) -> bool:
        return self.first_frame <= start and end <= self.last_frame

    def window(self, start: int, end: int) -> "Track":
        """Sub-track over frames ``start..end`` inclusive."""
        i, j = self.index(start), self.index(end) + 1
        return replace(self, **{name: getattr(self, name)[i:j].copy() for name in _ARRAYS})

    def equals(self, other: "Track", atol: float = 0.0) -> bool:
        if (self.vehicle_id, len(self)) != (other.vehicle_id, len(other)):
            return False
        if abs(self.length - other.length) > atol or abs(self.width - other.width) > atol:
            return False
        if not (np.array_equal(self.frames, other.frames)
                and np.array_equal(self.lane_id, other.lane_id)):
            return False
        return all(np.allclose(getattr(self, n), getattr(other, n), rtol=0, atol=atol)
                   for n in ("x", "y", "vx", "vy", "ax", "ay"))


@dataclass(frozen=True, eq=False)
class Recording:
    recording_id: str
    frame_rate: float
    lane_markings: dict[str, tuple[float, ...]]
    tracks: dict[int, Track]
    canonical: bool = False
    excluded_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise ValidationError("frame_rate must be positive")
        for direction, marks in self.lane_markings.items():
            if len(marks) > 1 and not np.all(np.diff(marks) > 0):
                raise ValidationError(f"{direction} lane markings must be strictly increasing")

    def __len__(self) -> int:
        return len(self.tracks)

    def track(self, vehicle_id: int) -> Track:
        return self.tracks[int(vehicle_id)]

    def equals(self, other: "Recording", atol: float = 0.0) -> bool:
        if self.tracks.keys() != other.tracks.keys():
            return False
        if abs(self.frame_rate - other.frame_rate) > atol:
            return False
        return all(self.tracks[k].equals(other.tracks[k], atol) for k in self.tracks)


# --- parsing ---------------------------------------------------------------

def _read_csv(path: Path, required: tuple[str, ...]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    for col in required:
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    return df


def _numeric(df: pd.DataFrame, col: str, path: Path) -> np.ndarray:
    raw = df[col].str.strip()
    try:
        # astype(float) parses round-trip exactly; pd.to_numeric can be off by an ulp
        values = raw.astype(np.float64).to_numpy()
    except ValueError:
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        # +2: one for the header line, one for 1-based numbering
        raise ParseError(f"{path}: row {row + 2}, column {col!r}: "
                         f"cannot parse {df[col].iloc[row]!r} as a number")
    return values


def _markings(text: str, path: Path) -> tuple[float, ...]:
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(";") if v.strip())
    except ValueError:
        raise ParseError(f"{path}: cannot parse lane markings {text!r}") from None


def parse_recording(tracks_csv, tracks_meta_csv, recording_meta_csv) -> Recording:
    """Read one highD recording (three CSV files) into a ``Recording``."""
    tracks_csv, tracks_meta_csv, recording_meta_csv = map(
        Path, (tracks_csv, tracks_meta_csv, recording_meta_csv))
    rec_meta = _read_csv(recording_meta_csv, RECORDING_META_COLUMNS)
    meta = _read_csv(tracks_meta_csv, TRACK_META_COLUMNS)
    df = _read_csv(tracks_csv, TRACK_COLUMNS)
    if len(rec_meta) == 0:
        raise SchemaError(f"{recording_meta_csv}: no data row")

    frame_rate = float(_numeric(rec_meta, "frameRate", recording_meta_csv)[0])
    rid = rec_meta["id"].iloc[0].strip() if "id" in rec_meta.columns else tracks_csv.stem.split("_")[0]
    markings = {
        "upper": _markings(rec_meta["upperLaneMarkings"].iloc[0], recording_meta_csv),
        "lower": _markings(rec_meta["lowerLaneMarkings"].iloc[0], recording_meta_csv),
    }

    meta_ids = _numeric(meta, "id", tracks_meta_csv).astype(np.int64)
    dims = dict(zip(meta_ids.tolist(),
                    zip(_numeric(meta, "width", tracks_meta_csv).tolist(),
                        _numeric(meta, "height", tracks_meta_csv).tolist())))

    cols = {c: _numeric(df, c, tracks_csv) for c in TRACK_COLUMNS}
    ids = cols["id"].astype(np.int64)
    frames = cols["frame"].astype(np.int64)
    order = np.lexsort((frames, ids))

    tracks: dict[int, Track] = {}
    if len(order):
        sorted_ids = ids[order]
        starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
        for sl in np.split(order, starts[1:]):
            vid = int(ids[sl[0]])
            if vid not in dims:
                raise SchemaError(f"{tracks_meta_csv}: no meta row for vehicle {vid}")
            length, width = dims[vid]
            tracks[vid] = Track(
                vehicle_id=vid, length=length, width=width,
                frames=frames[sl],
                x=cols["x"][sl] + length / 2.0,
                y=cols["y"][sl] + width / 2.0,
                vx=cols["xVelocity"][sl], vy=cols["yVelocity"][sl],
                ax=cols["xAcceleration"][sl], ay=cols["yAcceleration"][sl],
                lane_id=cols["laneId"][sl].astype(np.int64),
            )
    return Recording(str(rid), frame_rate, markings, tracks)


def find_recordings(directory) -> list[tuple[Path, Path, Path]]:
    """All ``(tracks, tracksMeta, recordingMeta)`` triples in a highD data directory."""
    directory = Path(directory)
    triples = []
    for tracks in sorted(directory.glob("*_tracks.csv")):
        prefix = tracks.name[: -len("_tracks.csv")]
        meta = directory / f"{prefix}_tracksMeta.csv"
        rmeta = directory / f"{prefix}_recordingMeta.csv"
        triples.append((tracks, meta, rmeta))
    return triples


def write_recording(recording: Recording, directory, prefix: str | None = None) -> tuple[Path, Path, Path]:
    """Write a recording back to the three highD files (corner positions)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = prefix or str(recording.recording_id)
    rows, meta_rows = [], []
    for vid, tr in sorted(recording.tracks.items()):
        rows.append(pd.DataFrame({
            "frame": tr.frames, "id": vid,
            "x": tr.x - tr.length / 2.0, "y": tr.y - tr.width / 2.0,
            "width": tr.length, "height": tr.width,
            "xVelocity": tr.vx, "yVelocity": tr.vy,
            "xAcceleration": tr.ax, "yAcceleration": tr.ay,
            "laneId": tr.lane_id,
        }))
        meta_rows.append({"id": vid, "width": tr.length, "height": tr.width,
                          "initialFrame": tr.first_frame, "finalFrame": tr.last_frame,
                          "numFrames": len(tr),
                          "drivingDirection": 2 if np.mean(tr.vx) >= 0 else 1})
    columns = ["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity",
               "xAcceleration", "yAcceleration", "laneId"]
    tracks_df = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=columns)
    tracks_df = tracks_df.sort_values(["frame", "id"], kind="stable")[columns]
    meta_df = pd.DataFrame(meta_rows, columns=["id", "width", "height", "initialFrame",
                                               "finalFrame", "numFrames", "drivingDirection"])
    rmeta_df = pd.DataFrame([{
        "id": recording.recording_id, "frameRate": recording.frame_rate,
        "upperLaneMarkings": ";".join(repr(float(v)) for v in recording.lane_markings.get("upper", ())),
        "lowerLaneMarkings": ";".join(repr(float(v)) for v in recording.lane_markings.get("lower", ())),
    }])
    paths = (directory / f"{prefix}_tracks.csv", directory / f"{prefix}_tracksMeta.csv",
             directory / f"{prefix}_recordingMeta.csv")
    tracks_df.to_csv(paths[0], index=False)
    meta_df.to_csv(paths[1], index=False)
    rmeta_df.to_csv(paths[2], index=False)
    return paths


# --- canonical single-file form ----------------------------------------------

def write_canonical_csv(recording: Recording, path) -> Path:
    """One CSV per recording: ``#key=value`` header lines, then one row per point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = []
    for vid, tr in sorted(recording.tracks.items()):
        frames.append(pd.DataFrame({
            "vehicle_id": vid, "length": tr.length, "width": tr.width, "frame": tr.frames,
            "x": tr.x, "y": tr.y, "vx": tr.vx, "vy": tr.vy, "ax": tr.ax, "ay": tr.ay,
            "lane_id": tr.lane_id,
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CANONICAL_COLUMNS)
    header = [
        f"#recording_id={recording.recording_id}",
        f"#frame_rate={recording.frame_rate!r}",
        "#upper_lane_markings=" + ";".join(repr(float(v)) for v in recording.lane_markings.get("upper", ())),
        "#lower_lane_markings=" + ";".join(repr(float(v)) for v in recording.lane_markings.get("lower", ())),
        f"#canonical={int(recording.canonical)}",
        "#excluded_ids=" + ";".join(str(v) for v in recording.excluded_ids),
    ]
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(header) + "\n")
        df.to_csv(fh, index=False, columns=list(CANONICAL_COLUMNS), float_format=None)
    return path


def read_canonical_csv(path) -> Recording:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    meta = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].rstrip("\n").partition("=")
            meta[key] = value
    for key in ("recording_id", "frame_rate"):
        if key not in meta:
            raise SchemaError(f"{path}: missing header field {key!r}")
    df = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False)
    for col in CANONICAL_COLUMNS:
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    cols = {c: _numeric(df, c, path) for c in CANONICAL_COLUMNS}
    tracks = {}
    ids = cols["vehicle_id"].astype(np.int64)
    for vid in pd.unique(ids):
        sel = np.flatnonzero(ids == vid)
        sel = sel[np.argsort(cols["frame"][sel], kind="stable")]
        tracks[int(vid)] = Track(
            int(vid), float(cols["length"][sel[0]]), float(cols["width"][sel[0]]),
            cols["frame"][sel].astype(np.int64), cols["x"][sel], cols["y"][sel],
            cols["vx"][sel], cols["vy"][sel], cols["ax"][sel], cols["ay"][sel],
            cols["lane_id"][sel].astype(np.int64))
    excluded = tuple(int(v) for v in meta.get("excluded_ids", "").split(";") if v)
    return Recording(
        meta["recording_id"], float(meta["frame_rate"]),
        {"upper": _markings(meta.get("upper_lane_markings", ""), path),
         "lower": _markings(meta.get("lower_lane_markings", ""), path)},
        tracks, canonical=meta.get("canonical", "0") == "1", excluded_ids=excluded)


# --- canonical frame -----------------------------------------------------------

def _segment_center(recording: Recording) -> tuple[float, float]:
    xs = [v for tr in recording.tracks.values() for v in (tr.x.min(), tr.x.max())]
    x_ref = (min(xs) + max(xs)) if xs else 0.0
    marks = [m for ms in recording.lane_markings.values() for m in ms]
    if marks:
        y_ref = min(marks) + max(marks)
    else:
        ys = [v for tr in recording.tracks.values() for v in (tr.y.min(), tr.y.max())]
        y_ref = (min(ys) + max(ys)) if ys else 0.0
    return x_ref, y_ref


def _rotate(tr: Track, x_ref: float, y_ref: float) -> Track:
    return replace(tr, x=x_ref - tr.x, y=y_ref - tr.y, vx=-tr.vx, vy=-tr.vy,
                   ax=-tr.ax, ay=-tr.ay, lane_id=-tr.lane_id)


def canonicalize(recording: Recording, min_speed: float = 0.1) -> Recording:
    """Rotate reverse-direction tracks so every vehicle travels toward +x.

    Tracks with ``|mean vx| < min_speed`` have no usable direction and are
    dropped; their ids are kept in ``excluded_ids``.
    """
    if recording.canonical:
        return recording
    x_ref, y_ref = _segment_center(recording)
    tracks, excluded = {}, list(recording.excluded_ids)
    for vid, tr in recording.tracks.items():
        mean_vx = float(np.mean(tr.vx))
        if abs(mean_vx) < min_speed:
            excluded.append(vid)
        elif mean_vx < 0:
            tracks[vid] = _rotate(tr, x_ref, y_ref)
        else:
            tracks[vid] = tr
    if len(excluded) > len(recording.excluded_ids):
        logger.warning("recording %s: %d track(s) without a driving direction excluded",
                       recording.recording_id, len(excluded) - len(recording.excluded_ids))
    markings = dict(recording.lane_markings)
    if "upper" in markings:
        markings["upper"] = tuple(sorted(y_ref - m for m in markings["upper"]))
    return replace(recording, tracks=tracks, lane_markings=markings,
                   canonical=True, excluded_ids=tuple(excluded))


def mirror_recording(recording: Recording) -> Recording:
    """Rotate the whole recording 180 degrees: the two driving directions swap.

    The segment center is preserved, so ``canonicalize`` of the mirror
    coincides with ``canonicalize`` of the original.
    """
    x_ref, y_ref = _segment_center(recording)
    tracks = {vid: _rotate(tr, x_ref, y_ref) for vid, tr in recording.tracks.items()}
    markings = {
        "upper": tuple(sorted(y_ref - m for m in recording.lane_markings.get("lower", ()))),
        "lower": tuple(sorted(y_ref - m for m in recording.lane_markings.get("upper", ()))),
    }
    return replace(recording, tracks=tracks, lane_markings=markings, canonical=False)


def smooth(recording: Recording, window: int) -> Recording:
    """Centered moving average of positions (off by default in the pipeline)."""
    if window <= 1:
        return recording
    from scipy.ndimage import uniform_filter1d

    tracks = {vid: replace(tr, x=uniform_filter1d(tr.x, window, mode="nearest"),
                           y=uniform_filter1d(tr.y, window, mode="nearest"))
              for vid, tr in recording.tracks.items()}
    return replace(recording, tracks=tracks)
