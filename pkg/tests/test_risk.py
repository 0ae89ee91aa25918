import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from lcpattern.ingest import Track
from lcpattern.risk import (
    PAIRS, PrimitiveRisk, TtcSample, VehicleState, cluster_risk_stats, pair_ttc_series,
    primitive_risk, risk_from_minima, ttc, ttc_histogram, ttc_type_a, ttc_type_c, write_risk_csv,
)
from oracles import dense_collision_time


def car(x, y=0.0, vx=0.0, vy=0.0, length=4.0, width=2.0, lane=1):
    return VehicleState(x, y, vx, vy, length, width, lane)


def random_pair(rng):
    a = VehicleState(0.0, 0.0, rng.uniform(15, 40), rng.uniform(-2, 2), rng.uniform(3, 18),
                     rng.uniform(1.5, 2.8), 1)
    b = VehicleState(rng.uniform(-60, 60), rng.uniform(-8, 8), rng.uniform(15, 40), rng.uniform(-2, 2),
                     rng.uniform(3, 18), rng.uniform(1.5, 2.8), 2)
    return a, b


def straight_track(vid, n, x0, vx, y=0.0, lane=1, length=4.0, width=2.0, fr=25.0, vy=0.0, first=0):
    t = np.arange(n) / fr
    ys = y + vy * t
    return Track(vid, length, width, np.arange(first, first + n), x0 + vx * t, ys,
                 np.full(n, vx), np.full(n, vy), np.zeros(n), np.zeros(n), np.full(n, lane))


# --- type A ---------------------------------------------------------------------------

def test_type_a_example():
    # 50 m bumper gap closing at 10 m/s
    res = ttc_type_a(car(0.0, vx=30.0), car(54.0, vx=20.0))
    assert res.ttc == 5.0 and not res.flagged


def test_type_a_opening_is_undefined():
    assert ttc_type_a(car(0.0, vx=20.0), car(54.0, vx=30.0)) is None
    assert ttc_type_a(car(0.0, vx=20.0), car(54.0, vx=20.0)) is None


def test_type_a_uses_half_lengths():
    follower = car(0.0, vx=30.0, length=5.0)
    leader = car(67.5, vx=20.0, length=30.0)
    assert ttc_type_a(follower, leader).ttc == 5.0


def test_type_a_contact_is_flagged_zero():
    res = ttc_type_a(car(0.0, vx=30.0), car(3.0, vx=20.0))
    assert res.ttc == 0.0 and res.flagged


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 200.0), st.floats(0.1, 20.0), st.floats(0.1, 10.0))
def test_type_a_scales_with_distance_and_time(gap, dv, c):
    base = ttc_type_a(car(0.0, vx=20.0 + dv), car(4.0 + gap, vx=20.0)).ttc
    far = ttc_type_a(car(0.0, vx=20.0 + dv), car(4.0 + c * gap, vx=20.0)).ttc
    fast = ttc_type_a(car(0.0, vx=20.0 + c * dv), car(4.0 + gap, vx=20.0)).ttc
    assert far == pytest.approx(c * base, rel=1e-9)
    assert fast == pytest.approx(base / c, rel=1e-9)


def test_lane_id_selects_geometry():
    same, geom = ttc(car(54.0, vx=20.0), car(0.0, vx=30.0))
    assert geom == "A" and same.ttc == 5.0
    _, geom = ttc(car(0.0, lane=1), car(10.0, y=3.5, lane=2))
    assert geom == "C"


# --- type C ---------------------------------------------------------------------------

def test_type_c_lateral_cut_in():
    # side by side in x, 3.5 m apart laterally closing at 1 m/s: contact when |dy| < 2
    res = ttc_type_c(car(0.0, vx=30.0), car(0.0, y=3.5, vx=30.0, vy=-1.0, lane=2))
    assert res.ttc == pytest.approx(1.5, abs=1e-12)


def test_type_c_passing_without_overlap():
    assert ttc_type_c(car(0.0, vx=30.0), car(-20.0, y=3.5, vx=35.0, lane=2)) is None


def test_type_c_needs_both_axes_at_once():
    # x-overlap is over before y-overlap starts
    a, b = car(0.0, vx=30.0), car(-10.0, y=4.0, vx=40.0, vy=-0.5, lane=2)
    assert ttc_type_c(a, b) is None


def test_type_c_overlap_now_is_flagged_zero():
    res = ttc_type_c(car(0.0), car(1.0, y=1.0, lane=2))
    assert res.ttc == 0.0 and res.flagged


def test_type_c_matches_dense_oracle():
    rng = np.random.default_rng(2024)
    dt, horizon = 1e-3, 60.0
    hits = 0
    for _ in range(1000):
        a, b = random_pair(rng)
        res = ttc_type_c(a, b)
        ref = dense_collision_time(a, b, horizon, dt)
        if res is None or res.ttc > horizon:
            assert ref is None
            continue
        if res.ttc > horizon - dt:
            continue
        hits += 1
        assert ref is not None and abs(res.ttc - ref) <= dt
    assert hits > 50


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ttc_is_never_negative(seed):
    a, b = random_pair(np.random.default_rng(seed))
    for res in (ttc_type_c(a, b), ttc(a, b)[0]):
        assert res is None or (res.ttc >= 0 and math.isfinite(res.ttc))


# --- series and aggregation -----------------------------------------------------------

def test_series_closing_decreases_to_contact():
    ego = straight_track(1, 50, 0.0, 30.0)
    por = straight_track(2, 50, 54.0, 20.0)
    ta = straight_track(3, 50, -30.0, 30.0, y=3.75, lane=2)
    s = pair_ttc_series((ego, por, ta), "ego-por")
    vals = [x.ttc for x in s]
    assert vals[0] == 5.0 and all(g == "A" for g in (x.geometry for x in s))
    assert np.all(np.diff(vals) < 0)
    np.testing.assert_allclose(vals, 5.0 - np.arange(50) / 25.0, atol=1e-9)


def test_series_diverging_is_undefined():
    ego = straight_track(1, 30, 0.0, 20.0)
    por = straight_track(2, 30, 54.0, 30.0)
    ta = straight_track(3, 30, -30.0, 20.0, y=3.75, lane=2)
    s = pair_ttc_series((ego, por, ta), "ego-por")
    assert all(x.ttc is None and x.geometry is None for x in s)


def test_series_geometry_flips_at_lane_crossing():
    n = 20
    ego = straight_track(1, n, 0.0, 30.0)
    lane = np.where(np.arange(n) < 10, 1, 2)
    ego = Track(1, 4.0, 2.0, ego.frames, ego.x, ego.y, ego.vx, ego.vy, ego.ax, ego.ay, lane)
    ta = straight_track(3, n, 60.0, 25.0, y=0.5, lane=2)
    por = straight_track(2, n, 100.0, 30.0)
    s = pair_ttc_series((ego, por, ta), "ego-ta")
    assert [x.geometry for x in s] == ["C"] * 10 + ["A"] * 10


def test_series_covers_common_frames_only():
    ego = straight_track(1, 30, 0.0, 30.0)
    por = straight_track(2, 20, 100.0, 20.0, first=5)
    assert [x.t for x in pair_ttc_series((ego, por, ego), "ego-por")] == list(range(5, 25))


def test_frame_rate_invariance():
    slow = [straight_track(i, 25, x0, v, fr=25.0) for i, x0, v in ((1, 0.0, 30.0), (2, 60.0, 22.0), (3, 200.0, 30.0))]
    fast = [straight_track(i, 50, x0, v, fr=50.0) for i, x0, v in ((1, 0.0, 30.0), (2, 60.0, 22.0), (3, 200.0, 30.0))]
    a = [x.ttc for x in pair_ttc_series(slow, "ego-por")]
    b = [x.ttc for x in pair_ttc_series(fast, "ego-por")][::2]
    np.testing.assert_allclose(a, b, rtol=1e-12)


def sample(t, value, pair="ego-por"):
    return TtcSample(t, pair, value, None if value is None else "A")


def test_primitive_risk_examples():
    assert risk_from_minima(0, [4.0, 8.0, 12.0]).risk == 8.0
    assert risk_from_minima(0, [6.0, None, None]).risk == 6.0
    assert risk_from_minima(0, [None, None, None]).risk is None
    series = {p: [sample(t, v, p) for t, v in enumerate(vals)]
              for p, vals in zip(PAIRS, ([9.0, 4.0, 7.0], [8.0, 8.5, None], [300.0, 250.0, None]))}
    r = primitive_risk(5, series)
    assert r.per_pair_min_ttc == {"ego-por": 4.0, "ego-ta": 8.0, "por-ta": 100.0}
    assert r.risk == pytest.approx((4.0 + 8.0 + 100.0) / 3)
    assert primitive_risk(5, series, frames=(2, 2)).per_pair_min_ttc == {
        "ego-por": 7.0, "ego-ta": None, "por-ta": None}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(0.0, 500.0)), min_size=3, max_size=3))
def test_primitive_risk_bounds(values):
    series = {p: [sample(0, v, p)] for p, v in zip(PAIRS, values)}
    r = primitive_risk(0, series, cap=100.0)
    defined = [min(v, 100.0) for v in values if v is not None]
    if not defined:
        assert r.risk is None
    else:
        assert min(defined) - 1e-12 <= r.risk <= max(defined) + 1e-12 <= 100.0 + 1e-12


def test_cluster_stats():
    risks = [risk_from_minima(i, [v, None, None]) for i, v in
             enumerate([10.0, 20.0, 30.0, 40.0, 1.0, 2.0, 50.0, None])]
    assign = {0: 0, 1: 0, 2: 0, 3: 0, 4: 1, 5: 1, 6: 2, 7: 3}
    df = cluster_risk_stats(assign, risks, k=5)
    assert df["cluster"].tolist() == [1, 0, 2, 3, 4]
    row0 = df.set_index("cluster").loc[0]
    assert row0["frequency"] == 4 and row0["mean"] == 25.0 and row0["median"] == 20.0
    assert row0["std"] == pytest.approx(np.std([10, 20, 30, 40], ddof=1))
    assert np.isnan(df.set_index("cluster").loc[2, "std"])
    assert df.set_index("cluster").loc[3, "frequency"] == 0


def test_planted_low_ttc_cluster_ranks_first():
    rng = np.random.default_rng(0)
    risks, assign = [], {}
    for i in range(60):
        c = i % 3
        risks.append(risk_from_minima(i, [rng.uniform(1, 3) if c == 2 else rng.uniform(20, 80)] * 3))
        assign[i] = c
    assert cluster_risk_stats(assign, risks)["cluster"].iloc[0] == 2


def test_risk_writers(tmp_path):
    risks = [risk_from_minima(1, [4.0, None, 12.0]), PrimitiveRisk(2, dict.fromkeys(PAIRS), None)]
    df = pd.read_csv(write_risk_csv(risks, {1: 0, 2: 1}, tmp_path / "r.csv"))
    assert df.columns.tolist() == ["primitive_id", "cluster", "min_ttc_ego-por", "min_ttc_ego-ta",
                                   "min_ttc_por-ta", "risk"]
    assert df["risk"].iloc[0] == 8.0 and np.isnan(df["risk"].iloc[1])
    hist = ttc_histogram({1: 0, 2: 1}, risks, k=2, cap=100.0)
    assert hist["count"].sum() == 1
    assert hist[(hist.cluster == 0) & (hist.bin_lo == 8.0)]["count"].item() == 1
    assert hist["bin_hi"].max() == 100.0


def test_vehicle_state_rejects_empty_box():
    with pytest.raises(ValueError):
        car(0.0, length=0.0)
