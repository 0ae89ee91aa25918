"""Stage orchestration: ingest -> extract -> segment -> cluster -> risk.

Every stage writes into its own subdirectory of the output directory and
records a cache key there (``.stage.json``). The key hashes the stage's
settings together with the bytes of everything it reads, so a rerun with
unchanged inputs and settings re-uses the stored artifacts. Files are first
written with a ``.partial`` suffix and renamed only when the whole stage
succeeds; a failing stage leaves its ``.partial`` files behind.

Artifacts (relative to the output directory)::

    ingest/rec_<id>.csv          canonical recordings
    ingest/recordings.csv        recording_id, frame_rate, vehicles, excluded
    extract/vehicle_types.csv    recording_id, vehicle_id, length, width, class
    extract/events.csv           one row per lane-change event
    segment/selection.csv        chosen state count per event
    segment/models.json          fitted HMM per event
    segment/primitives.csv       one row per kept primitive
    segment/prepared.csv|.bin    resampled and normalized primitives
    cluster/cluster_report.csv   primitive_id, cluster, dtw_to_center
    cluster/centers.bin          cluster centers (same layout as prepared.bin)
    cluster/frequency.csv        cluster sizes
    cluster/durations.csv        primitive duration histogram per cluster
    cluster/elbow.csv            only when k_range is set
    risk/ttc_series.csv          per-frame TTC of every pair of every event
    risk/risk.csv                per-pair minima and risk per primitive
    risk/cluster_risk.csv        risk statistics per cluster
    risk/ttc_hist.csv            risk histogram per cluster
    manifest.json                counts, effective settings, stage keys
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, cluster, extract, hmm, ingest, prep, risk
from .config import PipelineConfig
from .errors import LcPatternError, StageError, ValidationError
from .synthetic import ScenarioSpec, generate_synthetic, staged_lane_change_spec

logger = logging.getLogger(__name__)

STAGES = ("ingest", "extract", "segment", "cluster", "risk")
MANIFEST = "manifest.json"
_STAMP = ".stage.json"


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, Path):
            h.update(p.name.encode())
            h.update(p.read_bytes())
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()


class _StageDir:
    """Collects a stage's outputs under ``.partial`` names until ``commit``."""

    def __init__(self, root: Path, name: str, key: str):
        self.name, self.key = name, key
        self.dir = root / name
        self.outputs: list[str] = []

    def cached(self) -> bool:
        stamp = self.dir / _STAMP
        if not stamp.is_file():
            return False
        try:
            info = json.loads(stamp.read_text())
        except json.JSONDecodeError:
            return False
        if info.get("key") != self.key:
            return False
        self.outputs = list(info["outputs"])
        return all((self.dir / f).is_file() for f in self.outputs)

    def begin(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / _STAMP).unlink(missing_ok=True)

    def path(self, fname: str) -> Path:
        self.outputs.append(fname)
        return self.dir / (fname + ".partial")

    def commit(self) -> None:
        for f in self.outputs:
            (self.dir / (f + ".partial")).replace(self.dir / f)
        (self.dir / _STAMP).write_text(json.dumps({"key": self.key, "outputs": self.outputs}, indent=1))

    def files(self) -> list[Path]:
        return [self.dir / f for f in self.outputs]


@dataclass
class RunResult:
    output_dir: Path
    manifest: dict
    cache_hits: dict[str, bool] = field(default_factory=dict)


# --- stage bodies --------------------------------------------------------------------

def _load_raw(cfg: PipelineConfig):
    """Recordings named by the config plus the files they were read from."""
    if cfg.synthetic:
        if cfg.synthetic == "staged":
            spec = staged_lane_change_spec()
            src = [spec.to_dict()]
        else:
            spec = ScenarioSpec.from_json(cfg.synthetic)
            src = [Path(cfg.synthetic)]
        return [generate_synthetic(spec, cfg.synthetic_seed).recording], src
    recs, src = [], []
    for entry in cfg.inputs:
        p = Path(entry)
        if p.is_dir():
            triples = ingest.find_recordings(p)
            if not triples:
                raise FileNotFoundError(f"no *_tracks.csv recordings in {p}")
        elif p.name.endswith("_tracks.csv"):
            prefix = p.name[: -len("_tracks.csv")]
            triples = [(p, p.with_name(f"{prefix}_tracksMeta.csv"), p.with_name(f"{prefix}_recordingMeta.csv"))]
        else:
            raise FileNotFoundError(f"input {p} is neither a directory nor a *_tracks.csv file")
        for t in triples:
            recs.append(ingest.parse_recording(*t))
            src.extend(Path(f) for f in t)
    return recs, src


def _stage_ingest(cfg, sd: _StageDir, recs) -> dict:
    rows = []
    for rec in sorted(recs, key=lambda r: str(r.recording_id)):
        if cfg.smooth_window > 1:
            rec = ingest.smooth(rec, cfg.smooth_window)
        rec = ingest.canonicalize(rec)
        ingest.write_canonical_csv(rec, sd.path(f"rec_{rec.recording_id}.csv"))
        rows.append((str(rec.recording_id), rec.frame_rate, len(rec.tracks), len(rec.excluded_ids)))
    if len({r[0] for r in rows}) != len(rows):
        raise ValidationError("recording ids must be unique across inputs")
    pd.DataFrame(rows, columns=["recording_id", "frame_rate", "vehicles", "excluded"]).to_csv(
        sd.path("recordings.csv"), index=False)
    return {"recordings": len(rows), "vehicles": sum(r[2] for r in rows),
            "excluded_vehicles": sum(r[3] for r in rows)}


def _read_recordings(sd: _StageDir) -> dict[str, ingest.Recording]:
    recs = [ingest.read_canonical_csv(p) for p in sd.files() if p.name.startswith("rec_")]
    return {str(r.recording_id): r for r in recs}


def _stage_extract(cfg, sd: _StageDir, recs) -> dict:
    classes, typing = extract.classify_recordings(recs.values(), cfg.typing_seed)
    types = [(rid, vid, recs[rid].tracks[vid].length, recs[rid].tracks[vid].width, lab)
             for (rid, vid), lab in classes.items()]
    pd.DataFrame(types, columns=["recording_id", "vehicle_id", "length", "width", "class"]).to_csv(
        sd.path("vehicle_types.csv"), index=False)
    events = []
    for rid, rec in recs.items():
        labels = {vid: lab for (r, vid), lab in classes.items() if r == rid}
        events += extract.extract_events(rec, labels, cfg.type_filter)
    extract.write_events_manifest(events, sd.path("events.csv"))
    logger.info("extracted %d events", len(events))
    return {"events": len(events)}


def _read_events(events_csv: Path, recs) -> list[tuple[str, extract.Scenario, tuple]]:
    """``(event_id, scenario, (ego, por, ta) windowed tracks)`` per manifest row."""
    df = pd.read_csv(events_csv, dtype={"recording_id": str})
    out = []
    for r in df.itertuples(index=False):
        rec = recs[r.recording_id]
        tracks = tuple(rec.track(int(v)).window(int(r.t_start), int(r.t_end))
                       for v in (r.ego_id, r.por_id, r.ta_id))
        pts = np.column_stack([c for tr in tracks for c in (tr.x, tr.y)])
        eid = f"{r.recording_id}:{r.ego_id}:{r.t_c}"
        out.append((eid, extract.Scenario(pts, rec.frame_rate, int(r.t_start)), tracks))
    return out


def _segment_one(args):
    eid, points, cfg_dict = args
    cfg = PipelineConfig.from_dict(cfg_dict)
    sel = hmm.select_model(points, cfg.n_max, cfg.hmm_seed, criterion=cfg.model_selection,
                           decode_method=cfg.decode, n_mix=cfg.n_mix, reg=cfg.reg,
                           init=cfg.hmm_init, n_init=cfg.hmm_restarts)
    prims = hmm.segment(points, sel.path, cfg.min_frames, scenario_ref=eid)
    return sel, len(hmm.state_runs(sel.path)), prims


def _stage_segment(cfg, sd: _StageDir, events) -> dict:
    jobs = [(eid, sc.points, cfg.to_dict()) for eid, sc, _ in events]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_segment_one, jobs))
    else:
        results = [_segment_one(j) for j in jobs]

    sel_rows, models, prim_rows, prims = [], {}, [], []
    before = 0
    for (eid, sc, _), (sel, n_runs, kept) in zip(events, results):
        before += n_runs
        sel_rows.append((eid, sel.n_states, sel.loglik, n_runs, len(kept), sel.stop_reason))
        models[eid] = {"n_states": sel.n_states, "loglik": sel.loglik,
                       "candidates": sel.candidates, "model": sel.model.to_dict(),
                       "ll_trace": sel.trace, "criterion": sel.criterion}
        for p in kept:
            pid = len(prims)
            prims.append(p)
            prim_rows.append((pid, eid, p.state_label, p.start, p.end, sc.first_frame + p.start,
                              sc.first_frame + p.end, len(p), len(p) / sc.frame_rate))
    pd.DataFrame(sel_rows, columns=["event_id", "n_states", "loglik", "runs", "kept", "stop_reason"]
                 ).to_csv(sd.path("selection.csv"), index=False, float_format="%.17g")
    sd.path("models.json").write_text(json.dumps(models, indent=1, sort_keys=True))
    pd.DataFrame(prim_rows, columns=["primitive_id", "event_id", "state", "start", "end",
                                     "frame_start", "frame_end", "n_frames", "duration_s"]
                 ).to_csv(sd.path("primitives.csv"), index=False, float_format="%.17g")
    samples = prep.prepare([p.points for p in prims], cfg.l) if prims else np.empty((0, cfg.l, 6))
    ids = np.arange(len(prims))
    prep.write_matrix_csv(ids, samples, sd.path("prepared.csv"))
    prep.write_matrix_bin(ids, samples, sd.path("prepared.bin"))
    return {"primitives_before_filter": before, "primitives": len(prims)}


def _stage_cluster(cfg, sd: _StageDir, seg: _StageDir) -> dict:
    ids, samples = prep.read_matrix_bin(seg.dir / "prepared.bin")
    if len(samples) < cfg.k:
        raise ValidationError(f"k={cfg.k} exceeds the number of primitives ({len(samples)})")
    model = cluster.kmeans_dtw(samples, cfg.k, cfg.cluster_seed, cfg.max_iters, center=cfg.center,
                               ids=ids, jobs=cfg.jobs)
    cluster.write_cluster_report(model, sd.path("cluster_report.csv"))
    prep.write_matrix_bin(np.arange(cfg.k), model.centers, sd.path("centers.bin"))
    cluster.frequency_table(model).to_csv(sd.path("frequency.csv"), index=False, float_format="%.17g")
    prims = pd.read_csv(seg.dir / "primitives.csv")
    cluster.duration_histogram(model.labels, prims["duration_s"].to_numpy(), cfg.k).to_csv(
        sd.path("durations.csv"), index=False, float_format="%.17g")
    if cfg.k_range:
        cluster.write_elbow(cluster.elbow_curve(samples, cfg.k_range, cfg.cluster_seed,
                                                max_iters=cfg.max_iters, center=cfg.center,
                                                jobs=cfg.jobs),
                            sd.path("elbow.csv"))
    return {"clusters": cfg.k, "lambda_w": model.lambda_w}


def _stage_risk(cfg, sd: _StageDir, events, seg: _StageDir, clu: _StageDir) -> dict:
    prims = pd.read_csv(seg.dir / "primitives.csv")
    report = pd.read_csv(clu.dir / "cluster_report.csv")
    assign = dict(zip(report["primitive_id"].astype(int), report["cluster"].astype(int)))
    series_rows, risks = [], []
    by_event = {eid: tracks for eid, _, tracks in events}
    for eid, group in prims.groupby("event_id", sort=False):
        series = {pair: risk.pair_ttc_series(by_event[eid], pair) for pair in risk.PAIRS}
        for pair in risk.PAIRS:
            series_rows += [(eid, s.t, pair, s.ttc, s.geometry or "", int(s.flagged)) for s in series[pair]]
        for r in group.itertuples(index=False):
            risks.append(risk.primitive_risk(int(r.primitive_id), series,
                                             (int(r.frame_start), int(r.frame_end)), cfg.ttc_cap))
    risks.sort(key=lambda r: r.primitive_id)
    pd.DataFrame(series_rows, columns=["event_id", "frame", "pair", "ttc", "geometry", "flagged"]
                 ).to_csv(sd.path("ttc_series.csv"), index=False, float_format="%.17g")
    risk.write_risk_csv(risks, assign, sd.path("risk.csv"))
    k = int(report["cluster"].max()) + 1 if len(report) else 0
    stats = risk.cluster_risk_stats(assign, risks, k=cfg.k)
    stats.to_csv(sd.path("cluster_risk.csv"), index=False, float_format="%.17g", na_rep="")
    risk.ttc_histogram(assign, risks, max(k, cfg.k), cfg.ttc_cap).to_csv(
        sd.path("ttc_hist.csv"), index=False, float_format="%.17g")
    return {"primitives_with_risk": sum(r.risk is not None for r in risks)}


# --- driver ----------------------------------------------------------------------------

def run(cfg: PipelineConfig, until: str = "risk") -> RunResult:
    """Run the stages up to and including ``until``; returns the manifest and cache hits."""
    cfg.validate()
    if until not in STAGES:
        raise ValidationError(f"unknown stage {until!r}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts: dict = {}
    stages: dict = {}
    hits: dict[str, bool] = {}
    done: dict[str, _StageDir] = {}

    def execute(name, upstream_files, body):
        key = _digest(__version__, name, cfg.stage_settings(name), *upstream_files)
        sd = _StageDir(out, name, key)
        hit = sd.cached()
        if not hit:
            sd.begin()
            try:
                info = body(sd)
            except StageError:
                raise
            except (LcPatternError, OSError, ValueError, ArithmeticError) as exc:
                raise StageError(name, exc) from exc
            (sd.dir / "counts.json.partial").write_text(json.dumps(info, sort_keys=True))
            sd.outputs.append("counts.json")
            sd.commit()
        counts.update(json.loads((sd.dir / "counts.json").read_text()))
        hits[name] = hit
        stages[name] = {"key": key, "outputs": [f"{name}/{f}" for f in sd.outputs]}
        done[name] = sd
        logger.info("stage %s: %s", name, "cache hit" if hit else "done")
        return sd

    try:
        recs_raw, src = _load_raw(cfg)
    except (LcPatternError, OSError, ValueError) as exc:
        raise StageError("ingest", exc) from exc
    execute("ingest", src, lambda sd: _stage_ingest(cfg, sd, recs_raw))
    order = STAGES[: STAGES.index(until) + 1]
    cache: dict = {}

    def recs():
        if "recs" not in cache:
            cache["recs"] = _read_recordings(done["ingest"])
        return cache["recs"]

    def events():
        if "events" not in cache:
            cache["events"] = _read_events(done["extract"].dir / "events.csv", recs())
        return cache["events"]

    if "extract" in order:
        execute("extract", done["ingest"].files(), lambda sd: _stage_extract(cfg, sd, recs()))
    if "segment" in order:
        execute("segment", done["extract"].files(), lambda sd: _stage_segment(cfg, sd, events()))
    if "cluster" in order:
        execute("cluster", done["segment"].files(), lambda sd: _stage_cluster(cfg, sd, done["segment"]))
    if "risk" in order:
        execute("risk", done["ingest"].files() + done["extract"].files() + done["segment"].files()
                + done["cluster"].files(),
                lambda sd: _stage_risk(cfg, sd, events(), done["segment"], done["cluster"]))

    manifest = {"version": __version__, "completed": list(order), "counts": counts,
                "settings": cfg.to_dict(), "stages": stages}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return RunResult(out, manifest, hits)


# --- report ----------------------------------------------------------------------------

def _fmt(v, nd=2) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "null"
    return f"{v:.{nd}f}" if isinstance(v, float) else str(v)


def cluster_table(run_dir) -> tuple[dict, pd.DataFrame]:
    """Manifest plus one row per cluster: size, share, duration and risk statistics."""
    run_dir = Path(run_dir)
    mpath = run_dir / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no run manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if "risk" not in manifest.get("completed", []):
        raise ValidationError(f"{run_dir}: run did not reach the risk stage")
    freq = pd.read_csv(run_dir / "cluster" / "frequency.csv")
    rep = pd.read_csv(run_dir / "cluster" / "cluster_report.csv")
    prims = pd.read_csv(run_dir / "segment" / "primitives.csv")
    dur = rep.merge(prims[["primitive_id", "duration_s"]], on="primitive_id").groupby("cluster")["duration_s"]
    stats = pd.read_csv(run_dir / "risk" / "cluster_risk.csv")
    table = freq.merge(dur.mean().rename("mean_duration_s"), left_on="cluster", right_index=True, how="left")
    table = table.merge(stats.rename(columns={"frequency": "risk_n", "std": "risk_std",
                                              "mean": "risk_mean", "median": "risk_median"}),
                        on="cluster", how="left")
    return manifest, table


def high_risk(table: pd.DataFrame, n: int = 2) -> list[int]:
    """Clusters with the ``n`` smallest mean risk (ties to the lower cluster index)."""
    t = table.dropna(subset=["risk_mean"]).sort_values(["risk_mean", "cluster"], kind="stable")
    return t["cluster"].astype(int).head(n).tolist()


def report(run_dir) -> str:
    manifest, table = cluster_table(run_dir)
    c = manifest["counts"]
    lines = ["counts"]
    for key in ("recordings", "vehicles", "excluded_vehicles", "events", "primitives_before_filter",
                "primitives", "clusters", "primitives_with_risk"):
        lines.append(f"  {key:<26}{c.get(key, 'null')}")
    lines.append("")
    head = f"{'cluster':>7} {'count':>6} {'share':>6} {'dur_s':>7} {'risk_n':>6} {'std':>7} {'mean':>7} {'median':>7}"
    lines += ["clusters", head]
    for r in table.itertuples(index=False):
        lines.append(f"{r.cluster:>7} {r.count:>6} {_fmt(float(r.share)):>6} {_fmt(float(r.mean_duration_s)):>7} "
                     f"{int(r.risk_n) if pd.notna(r.risk_n) else 0:>6} {_fmt(float(r.risk_std)):>7} "
                     f"{_fmt(float(r.risk_mean)):>7} {_fmt(float(r.risk_median)):>7}")
    lines += ["", "HIGH-RISK"]
    flagged = high_risk(table)
    if not flagged:
        lines.append("  none")
    for cl in flagged:
        mean = float(table.loc[table["cluster"] == cl, "risk_mean"].iloc[0])
        lines.append(f"  cluster {cl}: mean TTC {mean:.2f} s")
    return "\n".join(lines) + "\n"
