"""Evaluation metrics for BEV multi-object tracking.

All matching flows through one similarity: S = max(0, 1 - d / d0) with d the
Euclidean BEV center distance, so a localization threshold alpha corresponds
to the distance gate d <= d0 * (1 - alpha). CLEAR metrics use a single alpha;
HOTA averages over an alpha grid with a two-pass global-alignment matching.

Conventions that the literature leaves open are fixed here and locked by
tests: id switches compare against the ground-truth object's most recent
matched track id (gaps allowed); per-frame matching maximizes match count
first, then preserved previous matches, then total similarity; MOTA uses
denominator max(TP + FN, 1); per-alpha LocA is 0 when there are no TPs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import Frame, GroundTruthObject, TrackRecord
from .assignment import solve_assignment


def _default_alpha_grid() -> tuple[float, ...]:
    return tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass
class MetricsConfig:
    d0: float = 4.0
    """Distance (m) at which the similarity reaches zero."""
    alpha_clear: float = 0.5
    """Localization threshold for CLEAR metrics (0.5 is the 2 m gate)."""
    alpha_grid: tuple[float, ...] = field(default_factory=_default_alpha_grid)
    class_agnostic: bool = False

    def __post_init__(self) -> None:
        if self.d0 <= 0.0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        for a in (self.alpha_clear, *self.alpha_grid):
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha must be in (0, 1), got {a}")


def similarity(p, q, d0: float) -> float:
    """S = max(0, 1 - |p - q| / d0) on BEV positions."""
    if d0 <= 0.0:
        raise ValueError(f"d0 must be positive, got {d0}")
    d = math.hypot(float(p[0]) - float(q[0]), float(p[1]) - float(q[1]))
    return max(0.0, 1.0 - d / d0)


@dataclass(frozen=True)
class FrameMatch:
    pairs: tuple[tuple[int, int, float], ...]
    """(estimate index, ground-truth index, similarity) per TP."""
    fp_est: tuple[int, ...]
    fn_gt: tuple[int, ...]


def match_frame(estimates: Sequence[TrackRecord],
                ground_truth: Sequence[GroundTruthObject],
                alpha: float, cfg: MetricsConfig,
                previous_matches: Mapping[int, int] | None = None) -> FrameMatch:
    """Per-frame bipartite matching among pairs with S >= alpha.

    The objective is lexicographic: maximize the number of matches, then the
    number of preserved previous matches (the CLEAR continuity convention),
    then total similarity. Cross-class pairs are ineligible unless
    class_agnostic is set.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    prev = previous_matches or {}
    n_est, n_gt = len(estimates), len(ground_truth)
    if n_est == 0 or n_gt == 0:
        return FrameMatch(pairs=(), fp_est=tuple(range(n_est)),
                          fn_gt=tuple(range(n_gt)))
    scale = float(n_est + n_gt + 1)
    bonus_prev = 4.0 * scale
    bonus_match = 8.0 * scale * scale
    cost = np.full((n_est, n_gt + n_est), np.inf)
    for ei, est in enumerate(estimates):
        cost[ei, n_gt + ei] = 0.0
        for gi, gt in enumerate(ground_truth):
            if not cfg.class_agnostic and est.class_label != gt.class_label:
                continue
            s = similarity(est.box.bev_center(), gt.box.bev_center(), cfg.d0)
            if s < alpha:
                continue
            score = bonus_match + s
            if prev.get(gt.gt_id) == est.track_id:
                score += bonus_prev
            cost[ei, gi] = -score
    sol = solve_assignment(cost)
    pairs = []
    for ei, col in enumerate(sol.row_to_col):
        if col < n_gt:
            s = similarity(estimates[ei].box.bev_center(),
                           ground_truth[col].box.bev_center(), cfg.d0)
            pairs.append((ei, col, s))
    matched_gt = {gi for _, gi, _ in pairs}
    return FrameMatch(
        pairs=tuple(pairs),
        fp_est=tuple(ei for ei in range(n_est)
                     if ei not in {p[0] for p in pairs}),
        fn_gt=tuple(gi for gi in range(n_gt) if gi not in matched_gt),
    )


@dataclass(frozen=True)
class ClearResult:
    tp: int
    fn: int
    fp: int
    ids: int
    mota: float
    motp: float


def mota_from_counts(tp: int, fn: int, fp: int, ids: int) -> float:
    """MOTA = 1 - (FN + FP + IDS) / (TP + FN), denominator floored at 1."""
    return 1.0 - (fn + fp + ids) / max(tp + fn, 1)


def _group_by_frame(records: Iterable[TrackRecord]) -> dict[int, list[TrackRecord]]:
    out: dict[int, list[TrackRecord]] = {}
    for r in records:
        out.setdefault(r.frame_idx, []).append(r)
    return out


def clear_metrics(records: Sequence[TrackRecord], frames: Sequence[Frame],
                  cfg: MetricsConfig) -> ClearResult:
    """CLEAR accumulation at alpha_clear over one sequence.

    An id switch is counted when a ground-truth object is matched to a track
    id different from its most recent matched track id, however long ago that
    match was (gap-tolerant).
    """
    est_by_frame = _group_by_frame(records)
    gt_by_frame = {f.frame_idx: list(f.ground_truth) for f in frames}
    tp = fn = fp = ids = 0
    sim_sum = 0.0
    last_match: dict[int, int] = {}
    for k in sorted(set(est_by_frame) | set(gt_by_frame)):
        ests = est_by_frame.get(k, [])
        gts = gt_by_frame.get(k, [])
        m = match_frame(ests, gts, cfg.alpha_clear, cfg, last_match)
        tp += len(m.pairs)
        fp += len(m.fp_est)
        fn += len(m.fn_gt)
        for ei, gi, s in m.pairs:
            sim_sum += s
            gt_id = gts[gi].gt_id
            track_id = ests[ei].track_id
            if gt_id in last_match and last_match[gt_id] != track_id:
                ids += 1
            last_match[gt_id] = track_id
    return ClearResult(tp=tp, fn=fn, fp=fp, ids=ids,
                       mota=mota_from_counts(tp, fn, fp, ids),
                       motp=sim_sum / tp if tp else 0.0)


def mota_sweep(records: Sequence[TrackRecord], frames: Sequence[Frame],
               alphas: Sequence[float],
               cfg: MetricsConfig) -> list[tuple[float, float]]:
    """Re-run CLEAR at each localization threshold."""
    if not alphas:
        raise ValueError("alphas must be nonempty")
    out = []
    for a in alphas:
        cfg_a = MetricsConfig(d0=cfg.d0, alpha_clear=a,
                              alpha_grid=cfg.alpha_grid,
                              class_agnostic=cfg.class_agnostic)
        out.append((a, clear_metrics(records, frames, cfg_a).mota))
    return out


def class_agnostic_counts(records: Sequence[TrackRecord],
                          frames: Sequence[Frame], radius: float = 2.0,
                          d0: float = 4.0) -> tuple[int, int]:
    """(TP, FN) with class labels ignored and a plain distance gate.

    A radius r corresponds to the similarity threshold alpha = 1 - r / d0,
    boundary inclusive.
    """
    if not 0.0 < radius < d0:
        raise ValueError(f"radius must be in (0, d0), got {radius}")
    cfg = MetricsConfig(d0=d0, class_agnostic=True)
    alpha = 1.0 - radius / d0
    est_by_frame = _group_by_frame(records)
    gt_by_frame = {f.frame_idx: list(f.ground_truth) for f in frames}
    tp = fn = 0
    for k in sorted(set(est_by_frame) | set(gt_by_frame)):
        m = match_frame(est_by_frame.get(k, []), gt_by_frame.get(k, []),
                        alpha, cfg, {})
        tp += len(m.pairs)
        fn += len(m.fn_gt)
    return tp, fn


@dataclass(frozen=True)
class AlphaHota:
    alpha: float
    hota: float
    det_a: float
    ass_a: float
    loc_a: float
    tp: int
    fn: int
    fp: int


@dataclass(frozen=True)
class HotaResult:
    hota: float
    det_a: float
    ass_a: float
    loc_a: float
    per_alpha: tuple[AlphaHota, ...]


def hota(records: Sequence[TrackRecord], frames: Sequence[Frame],
         cfg: MetricsConfig) -> HotaResult:
    """Two-pass HOTA over one sequence.

    Pass one accumulates, per (gt id, track id) pair, a soft potential-match
    count and per-id frame counts, giving a global alignment score
    A = m / (|gt| + |track| - m). Pass two matches each frame by maximizing
    A * S, then gates the matched pairs at each alpha in the grid. Reported
    values are means over the grid.
    """
    est_by_frame = _group_by_frame(records)
    gt_by_frame = {f.frame_idx: list(f.ground_truth) for f in frames}
    frame_keys = sorted(set(est_by_frame) | set(gt_by_frame))
    alphas = cfg.alpha_grid

    def sim_matrix(gts: Sequence[GroundTruthObject],
                   ests: Sequence[TrackRecord]) -> np.ndarray:
        sim = np.zeros((len(gts), len(ests)))
        for gi, gt in enumerate(gts):
            for ei, est in enumerate(ests):
                if not cfg.class_agnostic and est.class_label != gt.class_label:
                    continue
                sim[gi, ei] = similarity(gt.box.bev_center(),
                                         est.box.bev_center(), cfg.d0)
        return sim

    # Pass one: global alignment statistics.
    potential: dict[tuple[int, int], float] = {}
    gt_count: dict[int, int] = {}
    tr_count: dict[int, int] = {}
    for k in frame_keys:
        gts = gt_by_frame.get(k, [])
        ests = est_by_frame.get(k, [])
        for gt in gts:
            gt_count[gt.gt_id] = gt_count.get(gt.gt_id, 0) + 1
        for est in ests:
            tr_count[est.track_id] = tr_count.get(est.track_id, 0) + 1
        if not gts or not ests:
            continue
        sim = sim_matrix(gts, ests)
        denom = sim.sum(axis=0)[None, :] + sim.sum(axis=1)[:, None] - sim
        with np.errstate(invalid="ignore", divide="ignore"):
            sim_iou = np.where(denom > 1e-12, sim / np.maximum(denom, 1e-12), 0.0)
        for gi, gt in enumerate(gts):
            for ei, est in enumerate(ests):
                if sim_iou[gi, ei] > 0.0:
                    key = (gt.gt_id, est.track_id)
                    potential[key] = potential.get(key, 0.0) + float(sim_iou[gi, ei])

    def alignment(key: tuple[int, int]) -> float:
        m = potential.get(key, 0.0)
        denom = gt_count[key[0]] + tr_count[key[1]] - m
        return m / denom if denom > 0.0 else 0.0

    # Pass two: per-frame matching by alignment-weighted similarity,
    # then per-alpha gating of the matched pairs.
    n_alpha = len(alphas)
    tp = [0] * n_alpha
    loc_sum = [0.0] * n_alpha
    matches: list[dict[tuple[int, int], int]] = [dict() for _ in alphas]
    total_gt = sum(gt_count.values())
    total_est = sum(tr_count.values())
    for k in frame_keys:
        gts = gt_by_frame.get(k, [])
        ests = est_by_frame.get(k, [])
        if not gts or not ests:
            continue
        sim = sim_matrix(gts, ests)
        score = np.array([
            [alignment((gt.gt_id, est.track_id)) * sim[gi, ei]
             for ei, est in enumerate(ests)]
            for gi, gt in enumerate(gts)
        ])
        if len(gts) <= len(ests):
            sol = solve_assignment(-score)
            chosen = [(gi, int(ei)) for gi, ei in enumerate(sol.row_to_col)]
        else:
            sol = solve_assignment(-score.T)
            chosen = [(int(gi), ei) for ei, gi in enumerate(sol.row_to_col)]
        for gi, ei in chosen:
            s = float(sim[gi, ei])
            key = (gts[gi].gt_id, ests[ei].track_id)
            for a, alpha in enumerate(alphas):
                if s >= alpha - 1e-12:
                    tp[a] += 1
                    loc_sum[a] += s
                    matches[a][key] = matches[a].get(key, 0) + 1

    rows = []
    for a, alpha in enumerate(alphas):
        fn = total_gt - tp[a]
        fp = total_est - tp[a]
        det_den = tp[a] + fn + fp
        det_a = tp[a] / det_den if det_den > 0 else 0.0
        if tp[a] > 0:
            ass_sum = 0.0
            for key, m in matches[a].items():
                denom = gt_count[key[0]] + tr_count[key[1]] - m
                ass_sum += m * (m / denom if denom > 0 else 0.0)
            ass_a = ass_sum / tp[a]
            loc_a = loc_sum[a] / tp[a]
        else:
            ass_a = 0.0
            loc_a = 0.0
        rows.append(AlphaHota(alpha=alpha, hota=math.sqrt(det_a * ass_a),
                              det_a=det_a, ass_a=ass_a, loc_a=loc_a,
                              tp=tp[a], fn=fn, fp=fp))
    return HotaResult(
        hota=float(np.mean([r.hota for r in rows])),
        det_a=float(np.mean([r.det_a for r in rows])),
        ass_a=float(np.mean([r.ass_a for r in rows])),
        loc_a=float(np.mean([r.loc_a for r in rows])),
        per_alpha=tuple(rows),
    )


@dataclass(frozen=True)
class FpsResult:
    fps: float
    latencies: tuple[float, ...]
    frame_count: int
    repetitions: int


def fps_benchmark(pipeline_factory: Callable[[], object],
                  frames: Sequence[Frame], repetitions: int = 1,
                  timer: Callable[[], float] = time.perf_counter) -> FpsResult:
    """Wall-clock throughput of a tracker's step() over the frames.

    Only the step calls are timed (no I/O); each repetition uses a fresh
    tracker from the factory.
    """
    if not frames:
        raise ValueError("fps_benchmark needs at least one frame")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    latencies: list[float] = []
    for _ in range(repetitions):
        tracker = pipeline_factory()
        for f in frames:
            t0 = timer()
            tracker.step(f)
            t1 = timer()
            latencies.append(t1 - t0)
    total = sum(latencies)
    fps = len(latencies) / total if total > 0.0 else math.inf
    return FpsResult(fps=fps, latencies=tuple(latencies),
                     frame_count=len(frames), repetitions=repetitions)
