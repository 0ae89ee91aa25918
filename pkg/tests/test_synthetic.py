import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcpattern.errors import ValidationError
from lcpattern.synthetic import (
    ScenarioSpec, VehicleSpec, generate_synthetic, regime_labels, regime_scenario,
    staged_lane_change_spec,
)


def simple_spec(noise=0.0, boundaries=(), regimes=None):
    regimes = regimes or [(0.0, 0.0)] * (len(boundaries) + 1)
    return ScenarioSpec(
        n_frames=100, lane_markings=[0.0, 3.75, 7.5],
        vehicles=[VehicleSpec(1, 4.5, 1.9, 0.0, 1, 30.0, regimes),
                  VehicleSpec(2, 4.5, 1.9, 20.0, 2, 28.0, regimes)],
        regime_boundaries=list(boundaries), noise_std=noise)


def test_zero_noise_constant_velocity_is_affine():
    rec = generate_synthetic(simple_spec(), 0).recording
    for tr in rec.tracks.values():
        t = tr.frames.astype(float)
        coef = np.polyfit(t, tr.x, 1)
        np.testing.assert_allclose(np.polyval(coef, t), tr.x, atol=1e-9)
        np.testing.assert_allclose(tr.y, tr.y[0])


def test_same_seed_bit_identical():
    spec = staged_lane_change_spec()
    a, b = generate_synthetic(spec, 7).recording, generate_synthetic(spec, 7).recording
    for vid in a.tracks:
        for name in ("x", "y", "vx", "vy", "ax", "ay", "lane_id"):
            assert getattr(a.track(vid), name).tobytes() == getattr(b.track(vid), name).tobytes()
    c = generate_synthetic(spec, 8).recording
    assert not np.array_equal(a.track(1).x, c.track(1).x)


def test_three_regimes_two_change_points():
    spec = simple_spec(boundaries=(30, 70))
    labels = generate_synthetic(spec, 0).labels
    assert (np.flatnonzero(np.diff(labels)) + 1).tolist() == [30, 70]
    assert labels.tolist() == regime_labels(spec).tolist()


def test_overlapping_vehicles_rejected():
    spec = simple_spec()
    spec.vehicles[1] = VehicleSpec(2, 4.5, 1.9, 2.0, 1, 28.0, [(0.0, 0.0)])
    with pytest.raises(ValidationError, match="overlap"):
        generate_synthetic(spec, 0)


@pytest.mark.parametrize("mutate, message", [
    (lambda s: setattr(s, "lane_markings", [0.0, 0.0]), "lane_markings"),
    (lambda s: setattr(s, "regime_boundaries", [50]), "regimes"),
    (lambda s: setattr(s, "regime_boundaries", [100]), "regime_boundaries"),
    (lambda s: setattr(s.vehicles[1], "vehicle_id", 1), "unique"),
    (lambda s: setattr(s.vehicles[0], "lane", 5), "outside"),
    (lambda s: setattr(s, "noise_std", -1.0), "noise_std"),
])
def test_spec_validation(mutate, message):
    spec = simple_spec()
    mutate(spec)
    with pytest.raises(ValidationError, match=message):
        spec.validate()


def test_spec_json_round_trip(tmp_path):
    spec = staged_lane_change_spec()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert ScenarioSpec.from_json(path) == spec
    with pytest.raises(ValidationError):
        ScenarioSpec.from_dict({"n_frames": 10})


def test_staged_crossing(staged):
    assert staged.crossings[1] == [101]
    assert all(not c for vid, c in staged.crossings.items() if vid != 1)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.3), st.integers(0, 10_000))
def test_finite_difference_consistency(noise, seed):
    syn = generate_synthetic(staged_lane_change_spec(noise_std=noise), seed)
    fr = syn.recording.frame_rate
    for tr in syn.recording.tracks.values():
        err = np.abs(np.diff(tr.x) * fr - tr.vx[:-1])
        assert err.max() <= 3 * noise * fr + 1e-6


def test_regime_scenario_plants_runs():
    obs, labels = regime_scenario(np.eye(3) * 10, [30, 30, 30], 1.0, np.random.default_rng(0),
                                  planted=[(40, 5, 2)])
    assert obs.shape == (90, 3)
    assert labels[40:45].tolist() == [2] * 5 and labels[39] == 1 and labels[45] == 1


def test_documented_schema_matches_spec_fields():
    from pathlib import Path

    schema = json.loads((Path(__file__).parents[1] / "docs" / "scenario_spec.schema.json").read_text())
    d = staged_lane_change_spec().to_dict()
    assert set(d) == set(schema["properties"])
    assert set(d["vehicles"][0]) == set(schema["properties"]["vehicles"]["items"]["properties"])
    assert set(schema["required"]) <= set(d)
