"""Time-to-collision for the two interaction geometries and its aggregation.

Type A (same lane, rear-end): bumper gap over closing speed,
``gap = (x_lead - x_follow) - (len_lead + len_follow) / 2`` and
``ttc = gap / (vx_follow - vx_lead)``. Vehicle width plays no part.

Type C (different lanes): both vehicles are axis-aligned rectangles
(length along x, width along y) moving at constant velocity. Along each
axis the extents overlap while ``|p + v t| < s`` with ``p`` the relative
center offset, ``v`` the relative velocity and ``s`` the half sum of the
extents, i.e. on the open interval between ``(-s - p) / v`` and
``(s - p) / v``. A collision needs both axes to overlap at once, so TTC is
the start of the intersection of the two intervals restricted to t >= 0.

Geometries already in contact yield ``ttc = 0`` with ``flagged`` set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .ingest import Track

PAIRS = ("ego-por", "ego-ta", "por-ta")
_PAIR_INDEX = {"ego-por": (0, 1), "ego-ta": (0, 2), "por-ta": (1, 2)}
DEFAULT_TTC_CAP = 100.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    vx: float
    vy: float
    length: float
    width: float
    lane_id: int = 0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("vehicle length and width must be positive")

    @classmethod
    def from_track(cls, track: Track, k: int) -> "VehicleState":
        return cls(float(track.x[k]), float(track.y[k]), float(track.vx[k]), float(track.vy[k]),
                   track.length, track.width, int(track.lane_id[k]))


@dataclass(frozen=True)
class TtcResult:
    ttc: float
    flagged: bool = False


@dataclass(frozen=True)
class TtcSample:
    t: int
    pair: str
    ttc: float | None
    geometry: str | None
    flagged: bool = False


@dataclass(frozen=True)
class PrimitiveRisk:
    primitive_id: int
    per_pair_min_ttc: dict[str, float | None]
    risk: float | None


def ttc_type_a(follower: VehicleState, leader: VehicleState) -> TtcResult | None:
    gap = (leader.x - follower.x) - 0.5 * (leader.length + follower.length)
    dv = follower.vx - leader.vx
    if not dv > 0:
        return None
    if gap <= 0:
        return TtcResult(0.0, True)
    return TtcResult(gap / dv)


def _axis_interval(p: float, v: float, s: float) -> tuple[float, float] | None:
    if v == 0.0:
        return (-math.inf, math.inf) if abs(p) < s else None
    a, b = (-s - p) / v, (s - p) / v
    return (a, b) if a < b else (b, a)


def ttc_type_c(v1: VehicleState, v2: VehicleState) -> TtcResult | None:
    ix = _axis_interval(v2.x - v1.x, v2.vx - v1.vx, 0.5 * (v1.length + v2.length))
    iy = _axis_interval(v2.y - v1.y, v2.vy - v1.vy, 0.5 * (v1.width + v2.width))
    if ix is None or iy is None:
        return None
    t_in = max(ix[0], iy[0])
    t_out = min(ix[1], iy[1])
    if not (t_in < t_out and t_out > 0):
        return None
    if t_in <= 0:
        return TtcResult(0.0, True)
    return TtcResult(t_in)


def ttc(v1: VehicleState, v2: VehicleState) -> tuple[TtcResult | None, str]:
    """TTC of a pair with the geometry chosen from lane ids (``"A"`` or ``"C"``)."""
    if v1.lane_id == v2.lane_id:
        follower, leader = (v1, v2) if v1.x <= v2.x else (v2, v1)
        return ttc_type_a(follower, leader), "A"
    return ttc_type_c(v1, v2), "C"


def pair_ttc_series(tracks: Sequence[Track], pair: str) -> list[TtcSample]:
    """Per-frame TTC for one pair of an event's ``(ego, por, ta)`` tracks.

    ``geometry`` is ``None`` exactly when no TTC is defined at that frame.
    """
    i, j = _PAIR_INDEX[pair]
    a, b = tracks[i], tracks[j]
    start = max(a.first_frame, b.first_frame)
    end = min(a.last_frame, b.last_frame)
    out = []
    for f in range(start, end + 1):
        res, geom = ttc(VehicleState.from_track(a, a.index(f)), VehicleState.from_track(b, b.index(f)))
        if res is None:
            out.append(TtcSample(f, pair, None, None))
        else:
            out.append(TtcSample(f, pair, res.ttc, geom, res.flagged))
    return out


def primitive_risk(primitive_id: int, series: Mapping[str, Sequence[TtcSample]],
                   frames: tuple[int, int] | None = None, cap: float = DEFAULT_TTC_CAP) -> PrimitiveRisk:
    """Per-pair minimum TTC over the primitive, capped, then the mean over pairs.

    ``frames`` is the inclusive absolute frame range of the primitive; when
    omitted the whole series is used. Pairs without a defined sample are left
    out of the mean; with none left the risk is ``None``.
    """
    mins: dict[str, float | None] = {}
    for pair in PAIRS:
        vals = [s.ttc for s in series.get(pair, ())
                if s.ttc is not None and (frames is None or frames[0] <= s.t <= frames[1])]
        mins[pair] = min(min(vals), cap) if vals else None
    defined = [v for v in mins.values() if v is not None]
    return PrimitiveRisk(primitive_id, mins, float(np.mean(defined)) if defined else None)


def risk_from_minima(primitive_id: int, minima: Sequence[float | None]) -> PrimitiveRisk:
    mins = dict(zip(PAIRS, minima))
    defined = [v for v in minima if v is not None]
    return PrimitiveRisk(primitive_id, mins, float(np.mean(defined)) if defined else None)


STATS_COLUMNS = ["cluster", "frequency", "std", "mean", "median"]


def cluster_risk_stats(assignments: Mapping[int, int], risks: Sequence[PrimitiveRisk] | Mapping,
                       k: int | None = None) -> pd.DataFrame:
    """Frequency, sample std, mean and lower median of primitive risk per cluster.

    ``frequency`` counts primitives with a defined risk. Rows are sorted by
    mean ascending; clusters without any defined risk come last with nulls.
    """
    if isinstance(risks, Mapping):
        risks = list(risks.values())
    by_id = {r.primitive_id: r.risk for r in risks}
    clusters = sorted(set(assignments.values()) | (set(range(k)) if k else set()))
    rows = []
    for c in clusters:
        vals = np.sort([by_id[p] for p, cc in assignments.items()
                        if cc == c and by_id.get(p) is not None])
        n = len(vals)
        rows.append((c, n,
                     float(np.std(vals, ddof=1)) if n > 1 else np.nan,
                     float(vals.mean()) if n else np.nan,
                     float(vals[(n - 1) // 2]) if n else np.nan))
    df = pd.DataFrame(rows, columns=STATS_COLUMNS)
    df = df.sort_values(["mean", "cluster"], na_position="last", kind="stable")
    return df.reset_index(drop=True).astype({"cluster": int, "frequency": int})


def write_risk_csv(risks: Sequence[PrimitiveRisk], assignments: Mapping[int, int], path) -> Path:
    path = Path(path)
    rows = [[r.primitive_id, assignments.get(r.primitive_id, -1)]
            + [r.per_pair_min_ttc.get(p) for p in PAIRS] + [r.risk] for r in risks]
    df = pd.DataFrame(rows, columns=["primitive_id", "cluster", *(f"min_ttc_{p}" for p in PAIRS), "risk"])
    df.to_csv(path, index=False, float_format="%.17g", na_rep="")
    return path


def ttc_histogram(assignments: Mapping[int, int], risks: Sequence[PrimitiveRisk], k: int,
                  cap: float = DEFAULT_TTC_CAP, bin_width: float = 2.0) -> pd.DataFrame:
    """Counts of primitive risk values per cluster in fixed-width bins over ``[0, cap]``."""
    edges = np.arange(0.0, cap + bin_width, bin_width)
    edges[-1] = max(edges[-1], cap)
    by_id = {r.primitive_id: r.risk for r in risks}
    rows = []
    for c in range(k):
        vals = [by_id[p] for p, cc in assignments.items() if cc == c and by_id.get(p) is not None]
        counts, _ = np.histogram(vals, bins=edges)
        rows += [(c, edges[b], edges[b + 1], int(counts[b])) for b in range(len(counts))]
    return pd.DataFrame(rows, columns=["cluster", "bin_lo", "bin_hi", "count"])
