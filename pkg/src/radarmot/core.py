"""Shared data model for radar multi-object tracking.

All geometry lives in a fixed world frame. Tracking happens on the BEV plane
(x, y); z and height are carried through unchanged. Units: meters, seconds,
radians, m/s. Yaw is always stored normalized to [-pi, pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

CLASSES = ("car", "pedestrian", "cyclist", "other")

CLASS_GEOMETRY = {
    "car": (1.6, 0.8),
    "pedestrian": (1.7, 0.85),
    "cyclist": (1.7, 0.85),
    "other": (1.5, 0.75),
}
"""Per-class (height, center z) defaults for boxes built from BEV data."""

TWO_PI = 2.0 * math.pi


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to [-pi, pi). Idempotent; pi maps to -pi."""
    return (yaw + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class RadarPoint:
    """Single radar point in the world frame."""

    x: float
    y: float
    z: float = 0.0
    vr: float = 0.0
    """Radial (Doppler) velocity, m/s, positive away from the sensor."""
    rcs: float = 0.0
    """Radar cross-section, dBsm."""

    def bev(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Box3D:
    """Upright 3D bounding box; yaw rotates about +z, stored in [-pi, pi)."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"box dimensions must be positive, got "
                f"l={self.length} w={self.width} h={self.height}"
            )
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def bev_center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def bev_corners(self) -> np.ndarray:
        """Corners of the BEV footprint, counter-clockwise, shape (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])


@dataclass(frozen=True)
class Detection:
    """One detector output box with class label and confidence score."""

    box: Box3D
    class_label: str
    score: float

    def __post_init__(self) -> None:
        if self.class_label not in CLASSES:
            raise ValueError(f"unknown class label {self.class_label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruthObject:
    gt_id: int
    box: Box3D
    class_label: str

    def __post_init__(self) -> None:
        if self.class_label not in CLASSES:
            raise ValueError(f"unknown class label {self.class_label!r}")


@dataclass(frozen=True)
class Frame:
    """One sensor frame: points, detector boxes, and ground truth."""

    seq_id: str
    frame_idx: int
    timestamp: float
    points: tuple[RadarPoint, ...] = ()
    detections: tuple[Detection, ...] = ()
    ground_truth: tuple[GroundTruthObject, ...] = ()
    ego_info: dict[str, Any] | None = None
    """Opaque ego pose passthrough; the trackers never interpret it."""


@dataclass(frozen=True)
class TrackRecord:
    """One tracker output row: a box estimate for one track in one frame."""

    track_id: int
    frame_idx: int
    box: Box3D
    class_label: str
    existence: float

    def __post_init__(self) -> None:
        if self.class_label not in CLASSES:
            raise ValueError(f"unknown class label {self.class_label!r}")
        if not 0.0 <= self.existence <= 1.0 + 1e-12:
            raise ValueError(f"existence must lie in [0, 1], got {self.existence}")


def bev_distance(a: np.ndarray | Box3D, b: np.ndarray | Box3D) -> float:
    """Euclidean distance between two BEV positions or box centers."""
    pa = a.bev_center() if isinstance(a, Box3D) else np.asarray(a, dtype=float)
    pb = b.bev_center() if isinstance(b, Box3D) else np.asarray(b, dtype=float)
    return float(np.hypot(pa[0] - pb[0], pa[1] - pb[1]))


# --- constant-velocity kinematics shared by both filters and the simulator ---

def cv_transition(dt: float) -> np.ndarray:
    """State transition for [x, y, vx, vy] over dt seconds."""
    f = np.eye(4)
    f[0, 2] = dt
    f[1, 3] = dt
    return f


def cv_process_noise(dt: float, q: float) -> np.ndarray:
    """White-acceleration process noise; q is the acceleration PSD (m^2/s^3)."""
    dt2, dt3 = dt * dt, dt * dt * dt
    return q * np.array(
        [
            [dt3 / 3.0, 0.0, dt2 / 2.0, 0.0],
            [0.0, dt3 / 3.0, 0.0, dt2 / 2.0],
            [dt2 / 2.0, 0.0, dt, 0.0],
            [0.0, dt2 / 2.0, 0.0, dt],
        ]
    )


def log_gaussian_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log density of N(mean, cov) at x, for small dense covariances."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    d = x.shape[0]
    diff = x - mean
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, diff)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (d * math.log(TWO_PI) + log_det + sol @ sol))


# --- flat record (de)serialization used by the line-oriented file formats ---

_BOX_FIELDS = ("cx", "cy", "cz", "length", "width", "height", "yaw")


def box_to_record(box: Box3D) -> dict[str, float]:
    return {k: float(getattr(box, k)) for k in _BOX_FIELDS}


def box_from_record(rec: dict[str, Any]) -> Box3D:
    return Box3D(**{k: float(rec[k]) for k in _BOX_FIELDS})


def point_to_record(p: RadarPoint) -> dict[str, float]:
    return {"x": p.x, "y": p.y, "z": p.z, "vr": p.vr, "rcs": p.rcs}


def point_from_record(rec: dict[str, Any]) -> RadarPoint:
    return RadarPoint(
        x=float(rec["x"]),
        y=float(rec["y"]),
        z=float(rec.get("z", 0.0)),
        vr=float(rec.get("vr", 0.0)),
        rcs=float(rec.get("rcs", 0.0)),
    )


def detection_to_record(det: Detection) -> dict[str, Any]:
    rec: dict[str, Any] = box_to_record(det.box)
    rec["class_label"] = det.class_label
    rec["score"] = float(det.score)
    return rec


def detection_from_record(rec: dict[str, Any]) -> Detection:
    return Detection(
        box=box_from_record(rec),
        class_label=str(rec["class_label"]),
        score=float(rec["score"]),
    )


def ground_truth_to_record(gt: GroundTruthObject) -> dict[str, Any]:
    rec: dict[str, Any] = box_to_record(gt.box)
    rec["gt_id"] = int(gt.gt_id)
    rec["class_label"] = gt.class_label
    return rec


def ground_truth_from_record(rec: dict[str, Any]) -> GroundTruthObject:
    return GroundTruthObject(
        gt_id=int(rec["gt_id"]),
        box=box_from_record(rec),
        class_label=str(rec["class_label"]),
    )


def track_record_to_record(tr: TrackRecord) -> dict[str, Any]:
    rec: dict[str, Any] = box_to_record(tr.box)
    rec["track_id"] = int(tr.track_id)
    rec["frame_idx"] = int(tr.frame_idx)
    rec["class_label"] = tr.class_label
    rec["existence"] = float(tr.existence)
    return rec


def track_record_from_record(rec: dict[str, Any]) -> TrackRecord:
    return TrackRecord(
        track_id=int(rec["track_id"]),
        frame_idx=int(rec["frame_idx"]),
        box=box_from_record(rec),
        class_label=str(rec["class_label"]),
        existence=float(rec["existence"]),
    )


def frame_to_record(frame: Frame) -> dict[str, Any]:
    return {
        "frame_idx": int(frame.frame_idx),
        "timestamp": float(frame.timestamp),
        "points": [point_to_record(p) for p in frame.points],
        "detections": [detection_to_record(d) for d in frame.detections],
        "ground_truth": [ground_truth_to_record(g) for g in frame.ground_truth],
        "ego_info": frame.ego_info,
    }


def frame_from_record(rec: dict[str, Any], seq_id: str) -> Frame:
    return Frame(
        seq_id=seq_id,
        frame_idx=int(rec["frame_idx"]),
        timestamp=float(rec["timestamp"]),
        points=tuple(point_from_record(r) for r in rec["points"]),
        detections=tuple(detection_from_record(r) for r in rec["detections"]),
        ground_truth=tuple(ground_truth_from_record(r) for r in rec["ground_truth"]),
        ego_info=rec.get("ego_info"),
    )
