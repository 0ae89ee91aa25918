"""Synthetic multi-vehicle recordings for desk-scale runs and tests.

Each vehicle follows piecewise-constant accelerations (one ``(ax, ay)`` pair
per regime), integrated with forward Euler at the frame rate, so that
``(x[t+1] - x[t]) * frame_rate == vx[t]`` holds exactly before noise.
Position noise is Gaussian truncated at +-1.5 standard deviations;
velocities and accelerations are reported noise-free, as in smoothed highD
exports.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from .errors import ValidationError
from .ingest import Recording, Track

NOISE_CLIP = 1.5


@dataclass
class VehicleSpec:
    vehicle_id: int
    length: float
    width: float
    x0: float
    lane: int
    vx0: float
    regimes: list[tuple[float, float]]
    y_offset: float = 0.0


@dataclass
class ScenarioSpec:
    """Lane geometry, vehicle profiles and regime boundaries of a synthetic recording.

    ``lane`` k of a vehicle is the strip between ``lane_markings[k-1]`` and
    ``lane_markings[k]``; lane ids in the output follow the same numbering.
    """

    n_frames: int
    lane_markings: list[float]
    vehicles: list[VehicleSpec]
    regime_boundaries: list[int] = field(default_factory=list)
    frame_rate: float = 25.0
    noise_std: float = 0.0
    recording_id: str = "synthetic"

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        data = dict(data)
        try:
            data["vehicles"] = [VehicleSpec(**{**v, "regimes": [tuple(r) for r in v["regimes"]]})
                                for v in data["vehicles"]]
            return cls(**data)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed scenario spec: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        out = asdict(self)
        for v in out["vehicles"]:
            v["regimes"] = [list(r) for r in v["regimes"]]
        return out

    def lane_center(self, lane: int) -> float:
        return 0.5 * (self.lane_markings[lane - 1] + self.lane_markings[lane])

    def validate(self) -> None:
        marks = np.asarray(self.lane_markings, dtype=float)
        if len(marks) < 2 or not np.all(np.diff(marks) > 0):
            raise ValidationError("lane_markings needs >= 2 strictly increasing values")
        if self.n_frames < 2:
            raise ValidationError("n_frames must be >= 2")
        if not self.frame_rate > 0:
            raise ValidationError("frame_rate must be positive")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        b = list(self.regime_boundaries)
        if b and (b != sorted(set(b)) or b[0] <= 0 or b[-1] >= self.n_frames):
            raise ValidationError("regime_boundaries must be strictly increasing inside (0, n_frames)")
        ids = [v.vehicle_id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValidationError("vehicle ids must be unique")
        for v in self.vehicles:
            if not (v.length > 0 and v.width > 0):
                raise ValidationError(f"vehicle {v.vehicle_id}: dimensions must be positive")
            if not 1 <= v.lane < len(marks):
                raise ValidationError(f"vehicle {v.vehicle_id}: lane {v.lane} outside the road")
            if len(v.regimes) != len(b) + 1:
                raise ValidationError(
                    f"vehicle {v.vehicle_id}: needs {len(b) + 1} regimes, got {len(v.regimes)}")
        for i, u in enumerate(self.vehicles):
            for w in self.vehicles[i + 1:]:
                dx = abs(u.x0 - w.x0)
                dy = abs((self.lane_center(u.lane) + u.y_offset) - (self.lane_center(w.lane) + w.y_offset))
                if dx < (u.length + w.length) / 2 and dy < (u.width + w.width) / 2:
                    raise ValidationError(
                        f"vehicles {u.vehicle_id} and {w.vehicle_id} overlap at the first frame")


@dataclass
class SyntheticRecording:
    recording: Recording
    labels: np.ndarray
    crossings: dict[int, list[int]]
    spec: ScenarioSpec


def regime_labels(spec: ScenarioSpec) -> np.ndarray:
    return np.searchsorted(np.asarray(spec.regime_boundaries, dtype=int),
                           np.arange(spec.n_frames), side="right")


def generate_synthetic(spec: ScenarioSpec, seed: int) -> SyntheticRecording:
    spec.validate()
    rng = np.random.default_rng(seed)
    n, dt = spec.n_frames, 1.0 / spec.frame_rate
    labels = regime_labels(spec)
    marks = np.asarray(spec.lane_markings, dtype=float)
    frames = np.arange(n)
    tracks, crossings = {}, {}
    for v in spec.vehicles:
        acc = np.asarray(v.regimes, dtype=float)[labels]
        ax, ay = acc[:, 0], acc[:, 1]
        vx = v.vx0 + np.concatenate(([0.0], np.cumsum(ax[:-1]) * dt))
        vy = np.concatenate(([0.0], np.cumsum(ay[:-1]) * dt))
        x = v.x0 + np.concatenate(([0.0], np.cumsum(vx[:-1]) * dt))
        y = spec.lane_center(v.lane) + v.y_offset + np.concatenate(([0.0], np.cumsum(vy[:-1]) * dt))
        lane = np.searchsorted(marks, y, side="right").astype(np.int64)
        if spec.noise_std > 0:
            noise = truncnorm.rvs(-NOISE_CLIP, NOISE_CLIP, scale=spec.noise_std,
                                  size=(2, n), random_state=rng)
            x, y = x + noise[0], y + noise[1]
        tracks[v.vehicle_id] = Track(v.vehicle_id, v.length, v.width, frames,
                                     x, y, vx, vy, ax, ay, lane)
        crossings[v.vehicle_id] = (np.flatnonzero(np.diff(lane) != 0) + 1).tolist()
    rec = Recording(spec.recording_id, spec.frame_rate,
                    {"upper": (), "lower": tuple(float(m) for m in marks)}, tracks)
    return SyntheticRecording(rec, labels, crossings, spec)


def staged_lane_change_spec(noise_std: float = 0.02, recording_id: str = "staged") -> ScenarioSpec:
    """Three-lane road with one passenger-car lane change past a slower leader.

    Vehicle 1 (ego) leaves lane 1 behind vehicle 2 (por) and merges ahead of
    vehicle 3 (ta) in lane 2. Four trucks drive in lane 3 so that the
    vehicle-type K-means has all three classes to find.
    """
    lat = 3.75 / 4.0  # 2 s accelerate + 2 s decelerate => one lane width
    lc = [(0.0, 0.0), (0.0, lat), (0.0, -lat), (0.0, 0.0)]
    cruise = [(0.0, 0.0)] * 4
    vehicles = [
        VehicleSpec(1, 4.6, 1.90, 50.0, 1, 30.0, lc),
        VehicleSpec(2, 4.4, 1.85, 80.0, 1, 26.0, cruise),
        VehicleSpec(3, 4.8, 2.00, 25.0, 2, 31.0, cruise),
        VehicleSpec(10, 10.0, 2.50, 0.0, 3, 24.0, cruise),
        VehicleSpec(11, 16.0, 2.60, 60.0, 3, 23.0, cruise),
        VehicleSpec(12, 9.5, 2.45, 150.0, 3, 24.0, cruise),
        VehicleSpec(13, 17.0, 2.55, 220.0, 3, 23.0, cruise),
    ]
    return ScenarioSpec(n_frames=250, lane_markings=[0.0, 3.75, 7.5, 11.25],
                        vehicles=vehicles, regime_boundaries=[50, 100, 150],
                        frame_rate=25.0, noise_std=noise_std, recording_id=recording_id)


def regime_scenario(means: np.ndarray, lengths: list[int], sigma: float, rng,
                    planted: list[tuple[int, int, int]] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Observation series with piecewise-constant means plus isotropic Gaussian noise.

    ``planted`` entries ``(start, length, regime)`` overwrite a run of frames
    with another regime's mean. Returns ``(observations, labels)``.
    """
    means = np.asarray(means, dtype=float)
    labels = np.repeat(np.arange(len(lengths)), lengths)
    for start, length, regime in planted:
        labels[start:start + length] = regime
    obs = means[labels] + rng.normal(scale=sigma, size=(len(labels), means.shape[1]))
    return obs, labels


def shape_families(n_per_family: int, rng, length: int = 75, n_dims: int = 6,
                   noise: float = 0.05, n_families: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Prepared-like samples ``(n, length, n_dims)`` drawn from distinct shape families.

    Family ``f`` uses one fixed waveform per dimension (a smooth step, a
    hump or a ramp with family-specific phase). Each sample applies a random
    monotone time warp ``t ** g`` with ``g`` in [0.7, 1.4], adds Gaussian
    noise and is min-max normalized per dimension. Returns
    ``(samples, family_labels)``; samples are grouped by family.
    """
    t = np.linspace(0.0, 1.0, length)
    waves = [
        lambda u: np.tanh(8.0 * (u - 0.5)),
        lambda u: np.sin(np.pi * u),
        lambda u: u,
        lambda u: np.cos(2.0 * np.pi * u),
    ]
    out, labels = [], []
    for f in range(n_families):
        kinds = [(f + d) % len(waves) for d in range(n_dims)]
        signs = [1.0 if (f * 7 + d) % 3 else -1.0 for d in range(n_dims)]
        for _ in range(n_per_family):
            u = t ** rng.uniform(0.7, 1.4)
            S = np.column_stack([s * waves[k](u) for k, s in zip(kinds, signs)])
            S = S + rng.normal(scale=noise, size=S.shape)
            lo, hi = S.min(axis=0), S.max(axis=0)
            out.append(2.0 * (S - lo) / np.where(hi > lo, hi - lo, 1.0) - 1.0)
            labels.append(f)
    return np.asarray(out), np.asarray(labels)
