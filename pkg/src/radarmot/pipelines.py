"""End-to-end orchestration of the three tracking frameworks.

Each framework is exposed both as a stateful tracker with a step(frame)
method (for benchmarking and streaming use) and as a run_* convenience
function over a frame sequence. All three are strictly online: the output at
frame t depends only on frames up to t.

- tbd-pot: detector boxes, score-thresholded, into the point-object PMB
  tracker.
- jdt-eot: raw radar points, gated against predicted objects, clustered into
  alternative partitions, into the extended-object PMBM tracker.
- tbd-eot: points are first filtered by score-thresholded detector boxes and
  tagged with the box class; each class runs its own extended-object filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import CLASSES, Box3D, Detection, Frame, RadarPoint, TrackRecord
from .eot import (
    EotConfig,
    PmbmDensity,
    empty_pmbm,
    eot_extract,
    eot_predict,
    eot_update_with_partitions,
)
from .partitioning import (
    Cluster,
    ClusteringConfig,
    Partition,
    gate_points,
    make_cluster,
    run_setting,
)
from .pot import PotConfig, empty_pmb, pot_extract, pot_predict, pot_update

CLASS_ID_STRIDE = 1_000_000
"""Track-id offset between the per-class filters of the tbd-eot pipeline."""


class MissingDetectionsError(ValueError):
    """A detection-driven pipeline received a sequence with no detections."""


class MissingPointsError(ValueError):
    """A point-driven pipeline received a sequence with no radar points."""


@dataclass
class PipelineConfig:
    framework: str = "tbd-pot"
    pot: PotConfig = field(default_factory=PotConfig)
    eot: EotConfig = field(default_factory=EotConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig.default)
    score_thresholds: dict[str, float] = field(default_factory=dict)
    default_score_threshold: float = 0.35
    vr_prefilter: bool = False
    """Drop near-static points (|vr| < vr_min) before clustering."""
    vr_min: float = 0.1
    nominal_dt: float = 0.1
    """Fallback prediction interval when timestamps are absent or equal."""
    gate_radius: float = 10.0
    adaptive_gate: bool = False
    """Scale the point gate with each object's estimated extent."""
    adaptive_gate_margin: float = 2.0
    eot_class_configs: dict[str, EotConfig] | None = None
    """Optional per-class overrides for the tbd-eot filters."""

    def score_threshold_for(self, class_label: str) -> float:
        return self.score_thresholds.get(class_label, self.default_score_threshold)


def point_in_rotated_box(point, box: Box3D, tol: float = 1e-9) -> bool:
    """BEV point-in-rectangle test in the box frame, boundary inclusive."""
    dx = float(point[0]) - box.cx
    dy = float(point[1]) - box.cy
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local_x = c * dx + s * dy
    local_y = -s * dx + c * dy
    return (abs(local_x) <= 0.5 * box.length + tol
            and abs(local_y) <= 0.5 * box.width + tol)


def tag_points_to_boxes(points: Sequence[RadarPoint],
                        detections: Sequence[Detection]) -> dict[str, list[int]]:
    """Class label -> indices of points inside a surviving box.

    A point inside several boxes follows the highest-score one (first such
    box on ties). Points outside every box are dropped.
    """
    out: dict[str, list[int]] = {}
    for i, p in enumerate(points):
        best: Detection | None = None
        for det in detections:
            if point_in_rotated_box((p.x, p.y), det.box):
                if best is None or det.score > best.score:
                    best = det
        if best is not None:
            out.setdefault(best.class_label, []).append(i)
    return out


def _step_dt(last_ts: float | None, ts: float, nominal: float) -> float:
    if last_ts is None:
        return nominal
    dt = ts - last_ts
    return dt if dt > 0.0 else nominal


def _filter_points(frame: Frame, cfg: PipelineConfig) -> list[RadarPoint]:
    if not cfg.vr_prefilter:
        return list(frame.points)
    return [p for p in frame.points if abs(p.vr) >= cfg.vr_min]


def _build_partitions(points_xy: np.ndarray, density: PmbmDensity,
                      cfg: PipelineConfig, eot_cfg: EotConfig) -> list[Partition]:
    """Alternative partitions: gated and ungated pools clustered per setting.

    Points near predicted objects and the rest are clustered separately under
    each parameter setting, then combined into one partition per setting and
    deduplicated. With no predicted objects everything is in the ungated pool.
    """
    n = points_xy.shape[0]
    if n == 0:
        return []
    centers = []
    radii = []
    for track in density.tracks:
        for bern in track.locals:
            if bern.r < 0.05:
                continue
            centers.append(bern.ggiw.kin.mean[:2])
            if cfg.adaptive_gate:
                lam_max = float(np.linalg.eigvalsh(bern.ggiw.extent_mean())[-1])
                radii.append(cfg.adaptive_gate_margin
                             + eot_cfg.axis_scale * math.sqrt(max(lam_max, 0.0)))
    if not centers:
        gated = np.empty(0, dtype=int)
        ungated = np.arange(n)
    elif cfg.adaptive_gate:
        c = np.asarray(centers)
        r = np.asarray(radii)
        d2 = ((points_xy[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        mask = (d2 <= (r ** 2)[None, :]).any(axis=1)
        gated = np.nonzero(mask)[0]
        ungated = np.nonzero(~mask)[0]
    else:
        gated, ungated = gate_points(points_xy, np.asarray(centers), cfg.gate_radius)
    xy_g = points_xy[gated]
    xy_u = points_xy[ungated]
    parts: list[Partition] = []
    seen = set()
    # Settings frequently agree on the tight groups, so identical clusters
    # are built once and shared across partitions.
    cluster_memo: dict[tuple[bool, tuple[int, ...]], Cluster] = {}

    def memo_cluster(xy: np.ndarray, group: Sequence[int], ids: np.ndarray,
                     pool: bool) -> Cluster:
        key = (pool, tuple(int(i) for i in group))
        cl = cluster_memo.get(key)
        if cl is None:
            cl = make_cluster(xy, group, ids=ids)
            cluster_memo[key] = cl
        return cl

    for setting in cfg.clustering.settings:
        groups_g = run_setting(xy_g, setting) if len(gated) else []
        groups_u = run_setting(xy_u, setting) if len(ungated) else []
        if groups_g is None or groups_u is None:
            continue
        clusters = tuple(
            [memo_cluster(xy_g, g, gated, True) for g in groups_g]
            + [memo_cluster(xy_u, g, ungated, False) for g in groups_u]
        )
        part = Partition(clusters=clusters)
        key = part.key()
        if key not in seen:
            seen.add(key)
            parts.append(part)
    return parts


class TbdPotTracker:
    """Detector boxes into the point-object PMB filter."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.density = empty_pmb()
        self._last_ts: float | None = None

    def step(self, frame: Frame) -> list[TrackRecord]:
        cfg = self.cfg
        dt = _step_dt(self._last_ts, frame.timestamp, cfg.nominal_dt)
        self._last_ts = frame.timestamp
        self.density = pot_predict(self.density, cfg.pot, dt)
        detections = [d for d in frame.detections
                      if d.score >= cfg.score_threshold_for(d.class_label)]
        self.density = pot_update(self.density, detections, cfg.pot)
        return pot_extract(self.density, cfg.pot, frame.frame_idx)


class JdtEotTracker:
    """Raw radar points into one extended-object PMBM filter."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.density = empty_pmbm()
        self._last_ts: float | None = None

    def step(self, frame: Frame) -> list[TrackRecord]:
        cfg = self.cfg
        dt = _step_dt(self._last_ts, frame.timestamp, cfg.nominal_dt)
        self._last_ts = frame.timestamp
        self.density = eot_predict(self.density, cfg.eot, dt)
        points = _filter_points(frame, cfg)
        xy = np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)
        partitions = _build_partitions(xy, self.density, cfg, cfg.eot)
        self.density = eot_update_with_partitions(self.density, partitions, cfg.eot)
        return eot_extract(self.density, cfg.eot, frame.frame_idx)


class TbdEotTracker:
    """Detector-filtered points into per-class extended-object PMBM filters.

    Each class gets its own filter (with optional per-class parameter
    overrides) and a disjoint track-id range, so outputs can be merged
    without collisions.
    """

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self._last_ts: float | None = None
        overrides = cfg.eot_class_configs or {}
        self.filters: dict[str, tuple[EotConfig, PmbmDensity]] = {}
        for i, label in enumerate(CLASSES):
            eot_cfg = overrides.get(label)
            if eot_cfg is None:
                eot_cfg = replace(cfg.eot, birth_class_label=label)
            density = replace(empty_pmbm(), next_track_id=i * CLASS_ID_STRIDE)
            self.filters[label] = (eot_cfg, density)

    def step(self, frame: Frame) -> list[TrackRecord]:
        cfg = self.cfg
        dt = _step_dt(self._last_ts, frame.timestamp, cfg.nominal_dt)
        self._last_ts = frame.timestamp
        detections = [d for d in frame.detections
                      if d.score >= cfg.score_threshold_for(d.class_label)]
        points = _filter_points(frame, cfg)
        tags = tag_points_to_boxes(points, detections)
        records: list[TrackRecord] = []
        for label in CLASSES:
            eot_cfg, density = self.filters[label]
            density = eot_predict(density, eot_cfg, dt)
            idx = tags.get(label, [])
            xy = np.array([[points[i].x, points[i].y] for i in idx],
                          dtype=float).reshape(-1, 2)
            partitions = _build_partitions(xy, density, cfg, eot_cfg)
            density = eot_update_with_partitions(density, partitions, eot_cfg)
            self.filters[label] = (eot_cfg, density)
            records.extend(eot_extract(density, eot_cfg, frame.frame_idx))
        records.sort(key=lambda r: r.track_id)
        return records


def _run(tracker, frames: Sequence[Frame]) -> list[TrackRecord]:
    out: list[TrackRecord] = []
    for f in frames:
        out.extend(tracker.step(f))
    return out


def run_tbd_pot(frames: Sequence[Frame], cfg: PipelineConfig) -> list[TrackRecord]:
    frames = list(frames)
    if frames and all(not f.detections for f in frames):
        raise MissingDetectionsError(
            "tbd-pot needs detections, but no frame carries any")
    return _run(TbdPotTracker(cfg), frames)


def run_jdt_eot(frames: Sequence[Frame], cfg: PipelineConfig) -> list[TrackRecord]:
    # An all-empty point cloud is a valid (if vacuous) radar sequence, so
    # unlike the detector-fed runners this one never rejects its input.
    return _run(JdtEotTracker(cfg), list(frames))


def run_tbd_eot(frames: Sequence[Frame], cfg: PipelineConfig) -> list[TrackRecord]:
    frames = list(frames)
    if frames and all(not f.detections for f in frames):
        raise MissingDetectionsError(
            "tbd-eot needs detections, but no frame carries any")
    if frames and all(not f.points for f in frames):
        raise MissingPointsError(
            "tbd-eot needs radar points, but no frame carries any")
    return _run(TbdEotTracker(cfg), frames)


FRAMEWORKS = {
    "tbd-pot": run_tbd_pot,
    "jdt-eot": run_jdt_eot,
    "tbd-eot": run_tbd_eot,
}

TRACKER_CLASSES = {
    "tbd-pot": TbdPotTracker,
    "jdt-eot": JdtEotTracker,
    "tbd-eot": TbdEotTracker,
}


def run_pipeline(frames: Sequence[Frame], cfg: PipelineConfig) -> list[TrackRecord]:
    """Dispatch on cfg.framework."""
    try:
        runner = FRAMEWORKS[cfg.framework]
    except KeyError:
        raise ValueError(f"unknown framework {cfg.framework!r}; "
                         f"expected one of {sorted(FRAMEWORKS)}") from None
    return runner(frames, cfg)
