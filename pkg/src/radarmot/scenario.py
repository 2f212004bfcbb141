"""Synthetic radar scenario simulator.

Generates desk-scale sequences with known ground truth: objects move on
constant-velocity or piecewise-waypoint trajectories, emit Poisson-distributed
point clouds shaped by an elliptical extent, and a detector emulation layer
produces noisy boxes with configurable miss and false-positive rates. All
randomness flows from one seeded generator, so a config plus seed fully
determines the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .core import (
    CLASS_GEOMETRY,
    CLASSES,
    Box3D,
    Detection,
    Frame,
    GroundTruthObject,
    RadarPoint,
    normalize_yaw,
)

AXIS_SCALE = 2.0
"""Half-axis multiplier mapping extent eigenvalues to GT box dimensions."""

TRUNCATION_MAHALANOBIS_SQ = 16.0
"""Object points are resampled until within 4 sigma of the extent ellipse."""


class InvalidConfigError(ValueError):
    """Scenario configuration violates a documented invariant."""


@dataclass
class ObjectSpec:
    """One simulated object.

    Motion is constant velocity from `position` at the birth frame unless
    `waypoints` is given, in which case the trajectory linearly interpolates
    (frame, x, y) knots (clamped outside the first/last knot). The extent is
    a world-frame 2x2 SPD matrix shaping both the point cloud and the GT box.
    """

    class_label: str
    birth_frame: int
    death_frame: int | None
    position: np.ndarray
    velocity: np.ndarray
    extent: np.ndarray
    rate: float
    waypoints: tuple[tuple[int, float, float], ...] | None = None


@dataclass
class DetectorSpec:
    """Detector emulation: per-object misses, box noise, and false boxes.

    The false-positive count per frame is Poisson with mean
    fp_rate * (number of live objects).
    """

    fn_rate: float = 0.1
    fp_rate: float = 0.1
    center_sigma: float = 0.2
    size_sigma: float = 0.0
    tp_score_range: tuple[float, float] = (0.5, 1.0)
    fp_score_range: tuple[float, float] = (0.05, 0.6)


@dataclass(frozen=True)
class ClutterStrip:
    """Persistent clutter band (e.g. a guardrail): uniform points in a rect."""

    rect: tuple[float, float, float, float]
    rate: float


@dataclass
class ScenarioConfig:
    name: str
    duration: int
    frame_rate: float
    objects: tuple[ObjectSpec, ...]
    clutter_rate: float
    fov: tuple[float, float, float, float]
    detector: DetectorSpec
    seed: int
    clutter_strips: tuple[ClutterStrip, ...] = ()
    skew_factor: float = 0.0
    sensor_position: tuple[float, float] = (0.0, 0.0)


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.duration <= 0:
        raise InvalidConfigError(f"duration must be positive, got {cfg.duration}")
    if cfg.frame_rate <= 0.0:
        raise InvalidConfigError(f"frame_rate must be positive, got {cfg.frame_rate}")
    if cfg.clutter_rate < 0.0:
        raise InvalidConfigError(f"clutter_rate must be >= 0, got {cfg.clutter_rate}")
    x0, x1, y0, y1 = cfg.fov
    if x1 <= x0 or y1 <= y0:
        raise InvalidConfigError(f"degenerate field of view {cfg.fov}")
    if not 0.0 <= cfg.skew_factor <= 1.0:
        raise InvalidConfigError(f"skew_factor must be in [0, 1], got {cfg.skew_factor}")
    det = cfg.detector
    if not 0.0 <= det.fn_rate <= 1.0:
        raise InvalidConfigError(f"fn_rate must be in [0, 1], got {det.fn_rate}")
    if det.fp_rate < 0.0 or det.center_sigma < 0.0 or det.size_sigma < 0.0:
        raise InvalidConfigError("detector rates and sigmas must be >= 0")
    for lo, hi in (det.tp_score_range, det.fp_score_range):
        if not 0.0 < lo < hi <= 1.0:
            raise InvalidConfigError(f"score range ({lo}, {hi}) must satisfy 0 < lo < hi <= 1")
    for strip in cfg.clutter_strips:
        sx0, sx1, sy0, sy1 = strip.rect
        if sx1 <= sx0 or sy1 <= sy0 or strip.rate < 0.0:
            raise InvalidConfigError(f"bad clutter strip {strip}")
    for i, obj in enumerate(cfg.objects):
        if obj.class_label not in CLASSES:
            raise InvalidConfigError(f"object {i}: unknown class {obj.class_label!r}")
        if obj.rate <= 0.0:
            raise InvalidConfigError(f"object {i}: rate must be positive, got {obj.rate}")
        if obj.birth_frame < 0:
            raise InvalidConfigError(f"object {i}: birth_frame must be >= 0")
        if obj.death_frame is not None and obj.death_frame <= obj.birth_frame:
            raise InvalidConfigError(f"object {i}: death_frame must exceed birth_frame")
        ext = np.asarray(obj.extent, dtype=float)
        if ext.shape != (2, 2) or not np.allclose(ext, ext.T):
            raise InvalidConfigError(f"object {i}: extent must be symmetric 2x2")
        if np.linalg.eigvalsh(ext)[0] <= 0.0:
            raise InvalidConfigError(f"object {i}: extent must be positive definite")
        if obj.waypoints is not None:
            frames = [w[0] for w in obj.waypoints]
            if len(frames) < 2 or any(b <= a for a, b in zip(frames, frames[1:])):
                raise InvalidConfigError(
                    f"object {i}: waypoint frames must be strictly increasing")


def _extent_to_gt_box(center: np.ndarray, extent: np.ndarray,
                      class_label: str) -> Box3D:
    lam, vec = np.linalg.eigh(extent)
    if lam[1] - lam[0] <= 1.0e-12 * max(float(lam[1]), 1.0):
        yaw = 0.0
    else:
        major = vec[:, 1]
        yaw = normalize_yaw(math.atan2(major[1], major[0]))
        if yaw >= 0.5 * math.pi:
            yaw -= math.pi
        elif yaw < -0.5 * math.pi:
            yaw += math.pi
    height, cz = CLASS_GEOMETRY[class_label]
    return Box3D(cx=float(center[0]), cy=float(center[1]), cz=cz,
                 length=2.0 * AXIS_SCALE * math.sqrt(float(lam[1])),
                 width=2.0 * AXIS_SCALE * math.sqrt(float(lam[0])),
                 height=height, yaw=yaw)


def _pose_at(obj: ObjectSpec, frame_idx: int,
             frame_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Position and velocity at a frame (exact, noise-free)."""
    if obj.waypoints is None:
        dt = (frame_idx - obj.birth_frame) / frame_rate
        pos = np.asarray(obj.position, dtype=float) + np.asarray(obj.velocity, dtype=float) * dt
        return pos, np.asarray(obj.velocity, dtype=float)
    wps = obj.waypoints
    if frame_idx <= wps[0][0]:
        return np.array(wps[0][1:], dtype=float), np.zeros(2)
    if frame_idx >= wps[-1][0]:
        return np.array(wps[-1][1:], dtype=float), np.zeros(2)
    for (f0, x0, y0), (f1, x1, y1) in zip(wps, wps[1:]):
        if f0 <= frame_idx < f1:
            frac = (frame_idx - f0) / (f1 - f0)
            p0 = np.array([x0, y0])
            p1 = np.array([x1, y1])
            vel = (p1 - p0) / ((f1 - f0) / frame_rate)
            return p0 + frac * (p1 - p0), vel
    raise AssertionError("unreachable: waypoint segments cover the span")


def _is_live(obj: ObjectSpec, frame_idx: int, duration: int) -> bool:
    death = obj.death_frame if obj.death_frame is not None else duration
    return obj.birth_frame <= frame_idx < death


def skew_point_distribution(points_xy: np.ndarray, object_pos: np.ndarray,
                            sensor_pos: np.ndarray, skew: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Bias points toward the sensor-facing side of the object.

    Each point on the far half is reflected across the object center (along
    the sensor direction) with probability `skew`: 0 is the identity, 1 moves
    every point onto the facing half. Reflection preserves the distance from
    the center, so the extent spread is unchanged in the radial direction.
    """
    if not 0.0 <= skew <= 1.0:
        raise ValueError(f"skew must be in [0, 1], got {skew}")
    pts = np.asarray(points_xy, dtype=float)
    if skew == 0.0 or len(pts) == 0:
        return pts
    u = np.asarray(sensor_pos, dtype=float) - np.asarray(object_pos, dtype=float)
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        return pts
    u = u / norm
    proj = (pts - object_pos) @ u
    flip = (proj < 0.0) & (rng.random(len(pts)) < skew)
    out = pts.copy()
    out[flip] -= 2.0 * proj[flip, None] * u[None, :]
    return out


def _sample_object_points(rng: np.random.Generator, center: np.ndarray,
                          extent: np.ndarray, count: int) -> np.ndarray:
    chol = np.linalg.cholesky(extent)
    out = np.empty((count, 2))
    for i in range(count):
        while True:
            z = rng.standard_normal(2)
            if float(z @ z) <= TRUNCATION_MAHALANOBIS_SQ:
                break
        out[i] = center + chol @ z
    return out


def simulate(cfg: ScenarioConfig) -> list[Frame]:
    """Run the scenario; fully deterministic given the config (incl. seed)."""
    _validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    sensor = np.asarray(cfg.sensor_position, dtype=float)
    x0, x1, y0, y1 = cfg.fov
    frames: list[Frame] = []
    for k in range(cfg.duration):
        points: list[RadarPoint] = []
        ground_truth: list[GroundTruthObject] = []
        live: list[tuple[int, ObjectSpec, np.ndarray, np.ndarray]] = []
        for oi, obj in enumerate(cfg.objects):
            if not _is_live(obj, k, cfg.duration):
                continue
            pos, vel = _pose_at(obj, k, cfg.frame_rate)
            live.append((oi, obj, pos, vel))
            ground_truth.append(GroundTruthObject(
                gt_id=oi, box=_extent_to_gt_box(pos, np.asarray(obj.extent, float), obj.class_label),
                class_label=obj.class_label))
            n = int(rng.poisson(obj.rate))
            if n == 0:
                continue
            pts = _sample_object_points(rng, pos, np.asarray(obj.extent, float), n)
            if cfg.skew_factor > 0.0:
                pts = skew_point_distribution(pts, pos, sensor, cfg.skew_factor, rng)
            _, cz = CLASS_GEOMETRY[obj.class_label]
            for p in pts:
                d = p - sensor
                dist = float(np.linalg.norm(d))
                vr = float(vel @ (d / dist)) if dist > 0.0 else 0.0
                points.append(RadarPoint(x=float(p[0]), y=float(p[1]), z=cz,
                                         vr=vr, rcs=float(rng.normal(10.0, 3.0))))
        for strip in cfg.clutter_strips:
            sx0, sx1, sy0, sy1 = strip.rect
            for _ in range(int(rng.poisson(strip.rate))):
                points.append(RadarPoint(
                    x=float(rng.uniform(sx0, sx1)), y=float(rng.uniform(sy0, sy1)),
                    z=float(rng.uniform(0.0, 2.0)), vr=0.0,
                    rcs=float(rng.normal(5.0, 2.0))))
        for _ in range(int(rng.poisson(cfg.clutter_rate))):
            points.append(RadarPoint(
                x=float(rng.uniform(x0, x1)), y=float(rng.uniform(y0, y1)),
                z=float(rng.uniform(0.0, 2.0)), vr=0.0,
                rcs=float(rng.normal(5.0, 2.0))))

        det = cfg.detector
        detections: list[Detection] = []
        for gt in ground_truth:
            if rng.random() < det.fn_rate:
                continue
            dx, dy = rng.normal(0.0, det.center_sigma, 2) if det.center_sigma > 0.0 else (0.0, 0.0)
            dl, dw = rng.normal(0.0, det.size_sigma, 2) if det.size_sigma > 0.0 else (0.0, 0.0)
            box = Box3D(cx=gt.box.cx + dx, cy=gt.box.cy + dy, cz=gt.box.cz,
                        length=max(gt.box.length + dl, 0.1),
                        width=max(gt.box.width + dw, 0.1),
                        height=gt.box.height, yaw=gt.box.yaw)
            detections.append(Detection(
                box=box, class_label=gt.class_label,
                score=float(rng.uniform(*det.tp_score_range))))
        for _ in range(int(rng.poisson(det.fp_rate * len(live)))):
            label = CLASSES[int(rng.integers(len(CLASSES)))]
            height, cz = CLASS_GEOMETRY[label]
            box = Box3D(cx=float(rng.uniform(x0, x1)), cy=float(rng.uniform(y0, y1)),
                        cz=cz, length=float(rng.uniform(0.6, 5.0)),
                        width=float(rng.uniform(0.4, 2.2)), height=height,
                        yaw=float(rng.uniform(-math.pi, math.pi)))
            detections.append(Detection(
                box=box, class_label=label,
                score=float(rng.uniform(*det.fp_score_range))))

        frames.append(Frame(
            seq_id=cfg.name, frame_idx=k, timestamp=k / cfg.frame_rate,
            points=tuple(points), detections=tuple(detections),
            ground_truth=tuple(ground_truth), ego_info=None))
    return frames


def add_roadside_strips(cfg: ScenarioConfig, rate: float = 6.0,
                        margin: float = 2.0) -> ScenarioConfig:
    """Preset: persistent clutter bands along both long FoV edges."""
    x0, x1, y0, y1 = cfg.fov
    strips = cfg.clutter_strips + (
        ClutterStrip(rect=(x0, x1, y0, y0 + margin), rate=rate),
        ClutterStrip(rect=(x0, x1, y1 - margin, y1), rate=rate),
    )
    return replace(cfg, clutter_strips=strips)


# --- plain-record (JSON-ready) serialization ---

def scenario_to_record(cfg: ScenarioConfig) -> dict[str, Any]:
    return {
        "name": cfg.name,
        "duration": cfg.duration,
        "frame_rate": cfg.frame_rate,
        "seed": cfg.seed,
        "clutter_rate": cfg.clutter_rate,
        "fov": list(cfg.fov),
        "sensor_position": list(cfg.sensor_position),
        "skew_factor": cfg.skew_factor,
        "objects": [
            {
                "class_label": o.class_label,
                "birth_frame": o.birth_frame,
                "death_frame": o.death_frame,
                "position": [float(v) for v in np.asarray(o.position).ravel()],
                "velocity": [float(v) for v in np.asarray(o.velocity).ravel()],
                "extent": [[float(v) for v in row] for row in np.asarray(o.extent)],
                "rate": o.rate,
                "waypoints": ([list(w) for w in o.waypoints]
                              if o.waypoints is not None else None),
            }
            for o in cfg.objects
        ],
        "detector": {
            "fn_rate": cfg.detector.fn_rate,
            "fp_rate": cfg.detector.fp_rate,
            "center_sigma": cfg.detector.center_sigma,
            "size_sigma": cfg.detector.size_sigma,
            "tp_score_range": list(cfg.detector.tp_score_range),
            "fp_score_range": list(cfg.detector.fp_score_range),
        },
        "clutter_strips": [
            {"rect": list(s.rect), "rate": s.rate} for s in cfg.clutter_strips
        ],
    }


def scenario_from_record(rec: dict[str, Any]) -> ScenarioConfig:
    try:
        objects = tuple(
            ObjectSpec(
                class_label=o["class_label"],
                birth_frame=int(o["birth_frame"]),
                death_frame=(int(o["death_frame"]) if o.get("death_frame") is not None
                             else None),
                position=np.array(o["position"], dtype=float),
                velocity=np.array(o["velocity"], dtype=float),
                extent=np.array(o["extent"], dtype=float),
                rate=float(o["rate"]),
                waypoints=(tuple((int(f), float(x), float(y)) for f, x, y in o["waypoints"])
                           if o.get("waypoints") else None),
            )
            for o in rec.get("objects", [])
        )
        det_rec = rec.get("detector", {})
        detector = DetectorSpec(
            fn_rate=float(det_rec.get("fn_rate", 0.1)),
            fp_rate=float(det_rec.get("fp_rate", 0.1)),
            center_sigma=float(det_rec.get("center_sigma", 0.2)),
            size_sigma=float(det_rec.get("size_sigma", 0.0)),
            tp_score_range=tuple(det_rec.get("tp_score_range", (0.5, 1.0))),
            fp_score_range=tuple(det_rec.get("fp_score_range", (0.05, 0.6))),
        )
        strips = tuple(
            ClutterStrip(rect=tuple(float(v) for v in s["rect"]), rate=float(s["rate"]))
            for s in rec.get("clutter_strips", [])
        )
        return ScenarioConfig(
            name=str(rec.get("name", "scenario")),
            duration=int(rec["duration"]),
            frame_rate=float(rec["frame_rate"]),
            objects=objects,
            clutter_rate=float(rec.get("clutter_rate", 0.0)),
            fov=tuple(float(v) for v in rec["fov"]),
            detector=detector,
            seed=int(rec.get("seed", 0)),
            clutter_strips=strips,
            skew_factor=float(rec.get("skew_factor", 0.0)),
            sensor_position=tuple(float(v) for v in rec.get("sensor_position", (0.0, 0.0))),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidConfigError(f"malformed scenario record: {exc}") from exc
