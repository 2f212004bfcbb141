"""GNN-PMB tracker for point objects (detector boxes in, tracks out).

The multi-object density is a Poisson point process over undetected objects
plus a list of Bernoulli components for detected ones. Each update keeps only
the single best global association (GNN), so the density stays a plain PMB
with no hypothesis tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .assignment import solve_assignment
from .core import (
    Box3D,
    Detection,
    TrackRecord,
    cv_process_noise,
    cv_transition,
    log_gaussian_density,
)

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])

# Mahalanobis gate at the chi-square(2 dof) 0.99 quantile.
CHI2_GATE_99 = 9.210340371976184


@dataclass(frozen=True)
class KinematicGaussian:
    """Gaussian over [x, y, vx, vy]."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class PppComponent:
    weight: float
    state: KinematicGaussian


@dataclass(frozen=True)
class BernoulliPOT:
    """One potential object: existence probability plus kinematic state.

    Box geometry (size, yaw, z) is not estimated by the point filter; it is
    carried over from the most recent associated detection.
    """

    r: float
    state: KinematicGaussian
    track_id: int
    class_label: str
    last_box: Box3D
    last_score: float


@dataclass(frozen=True)
class PmbDensity:
    ppp: tuple[PppComponent, ...]
    bernoullis: tuple[BernoulliPOT, ...]
    next_track_id: int


def empty_pmb() -> PmbDensity:
    return PmbDensity(ppp=(), bernoullis=(), next_track_id=0)


def _default_birth() -> tuple[PppComponent, ...]:
    state = KinematicGaussian(
        mean=np.zeros(4),
        cov=np.diag([1.0e4, 1.0e4, 25.0, 25.0]),
    )
    return (PppComponent(weight=0.1, state=state),)


@dataclass
class PotConfig:
    survival_prob: float = 0.99
    detection_prob: float = 0.9
    clutter_intensity: float = 1.0e-4
    """Expected false detections per unit BEV area (boxes / m^2)."""
    process_noise: float = 1.0
    meas_noise: np.ndarray = field(default_factory=lambda: np.eye(2) * 0.09)
    gate_threshold: float = CHI2_GATE_99
    birth: tuple[PppComponent, ...] = field(default_factory=_default_birth)
    extract_threshold: float = 0.5
    prune_threshold: float = 1.0e-3
    ppp_prune_threshold: float = 1.0e-8
    max_ppp_components: int = 50
    recycle_pruned: bool = True
    score_modulates_pd: bool = False
    score_modulates_birth: bool = False
    detection_prob_overrides: dict[str, float] = field(default_factory=dict)
    clutter_overrides: dict[str, float] = field(default_factory=dict)

    def pd_for(self, class_label: str) -> float:
        return self.detection_prob_overrides.get(class_label, self.detection_prob)

    def clutter_for(self, class_label: str) -> float:
        return self.clutter_overrides.get(class_label, self.clutter_intensity)


def _predict_state(state: KinematicGaussian, f: np.ndarray,
                   q: np.ndarray) -> KinematicGaussian:
    return KinematicGaussian(mean=f @ state.mean, cov=f @ state.cov @ f.T + q)


def pot_predict(density: PmbDensity, cfg: PotConfig, dt: float) -> PmbDensity:
    """Survival-scaled CV prediction; birth intensity joins the PPP."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    f = cv_transition(dt)
    q = cv_process_noise(dt, cfg.process_noise)
    bernoullis = tuple(
        replace(b, r=b.r * cfg.survival_prob, state=_predict_state(b.state, f, q))
        for b in density.bernoullis
    )
    ppp = tuple(
        PppComponent(weight=c.weight * cfg.survival_prob,
                     state=_predict_state(c.state, f, q))
        for c in density.ppp
    ) + cfg.birth
    return PmbDensity(ppp=ppp, bernoullis=bernoullis, next_track_id=density.next_track_id)


def _kalman_update(state: KinematicGaussian, z: np.ndarray,
                   r_noise: np.ndarray) -> KinematicGaussian:
    s = H @ state.cov @ H.T + r_noise
    k = state.cov @ H.T @ np.linalg.inv(s)
    mean = state.mean + k @ (z - H @ state.mean)
    cov = state.cov - k @ s @ k.T
    cov = 0.5 * (cov + cov.T)
    return KinematicGaussian(mean=mean, cov=cov)


def _miss_bernoulli(b: BernoulliPOT, pd: float) -> BernoulliPOT:
    return replace(b, r=b.r * (1.0 - pd) / (1.0 - b.r * pd))


def _birth_likelihood(z: np.ndarray, ppp: Sequence[PppComponent], pd: float,
                      r_noise: np.ndarray) -> tuple[float, list[float]]:
    """PPP match likelihood of z and per-component posterior weights."""
    if not ppp:
        return 0.0, []
    parts = []
    for comp in ppp:
        s = H @ comp.state.cov @ H.T + r_noise
        parts.append(
            comp.weight * np.exp(log_gaussian_density(z, H @ comp.state.mean, s))
        )
    total = float(sum(parts))
    return pd * total, parts


def _spawn_bernoulli(z: np.ndarray, det: Detection, ppp: Sequence[PppComponent],
                     cfg: PotConfig, track_id: int) -> BernoulliPOT:
    pd = cfg.pd_for(det.class_label)
    lik, parts = _birth_likelihood(z, ppp, pd, cfg.meas_noise)
    if cfg.score_modulates_birth:
        lik *= det.score
    clutter = cfg.clutter_for(det.class_label)
    r = lik / (clutter + lik) if lik > 0.0 else 0.0
    if parts and sum(parts) > 0.0:
        # Moment-matched mixture of per-component Kalman posteriors.
        weights = np.array(parts) / sum(parts)
        states = [_kalman_update(c.state, z, cfg.meas_noise) for c in ppp]
        mean = sum(w * s.mean for w, s in zip(weights, states))
        cov = sum(
            w * (s.cov + np.outer(s.mean - mean, s.mean - mean))
            for w, s in zip(weights, states)
        )
        state = KinematicGaussian(mean=mean, cov=0.5 * (cov + cov.T))
    else:
        state = KinematicGaussian(
            mean=np.array([z[0], z[1], 0.0, 0.0]),
            cov=np.diag([1.0, 1.0, 25.0, 25.0]),
        )
    return BernoulliPOT(
        r=min(r, 1.0),
        state=state,
        track_id=track_id,
        class_label=det.class_label,
        last_box=det.box,
        last_score=det.score,
    )


def pot_update(density: PmbDensity, detections: Sequence[Detection],
               cfg: PotConfig) -> PmbDensity:
    """Single best global association update (GNN over a PMB density).

    Rows are detections; columns are existing Bernoullis plus one new-object
    column per detection, so every detection is explained by an existing
    track, a new track, or clutter. Unassigned tracks take the missed update
    r <- r(1-Pd)/(1-r Pd).
    """
    bernoullis = density.bernoullis
    n_det, n_bern = len(detections), len(bernoullis)

    matched_pairs: dict[int, int] = {}
    new_rows: list[int] = []
    if n_det > 0:
        z_all = [np.array([d.box.cx, d.box.cy]) for d in detections]
        cost = np.full((n_det, n_bern + n_det), np.inf)
        gates = []
        for i, b in enumerate(bernoullis):
            s = H @ b.state.cov @ H.T + cfg.meas_noise
            gates.append((s, np.linalg.inv(s), H @ b.state.mean))
        for j, det in enumerate(detections):
            z = z_all[j]
            for i, b in enumerate(bernoullis):
                if det.class_label != b.class_label:
                    continue
                s, s_inv, zhat = gates[i]
                diff = z - zhat
                if diff @ s_inv @ diff > cfg.gate_threshold:
                    continue
                pd = cfg.pd_for(b.class_label)
                pd_match = pd * det.score if cfg.score_modulates_pd else pd
                if b.r * pd_match <= 0.0 or b.r * pd >= 1.0:
                    continue
                log_match = (
                    np.log(b.r)
                    + np.log(pd_match)
                    + log_gaussian_density(z, zhat, s)
                    - np.log(1.0 - b.r * pd)
                )
                cost[j, i] = -log_match
            pd_birth = cfg.pd_for(det.class_label)
            lik, _ = _birth_likelihood(z, density.ppp, pd_birth, cfg.meas_noise)
            if cfg.score_modulates_birth:
                lik *= det.score
            cost[j, n_bern + j] = -np.log(cfg.clutter_for(det.class_label) + lik)
        solution = solve_assignment(cost)
        for j, col in enumerate(solution.row_to_col):
            if col < n_bern:
                matched_pairs[col] = j
            else:
                new_rows.append(j)

    out_bernoullis: list[BernoulliPOT] = []
    recycled: list[PppComponent] = []
    for i, b in enumerate(bernoullis):
        if i in matched_pairs:
            det = detections[matched_pairs[i]]
            z = np.array([det.box.cx, det.box.cy])
            post = replace(
                b,
                r=1.0,
                state=_kalman_update(b.state, z, cfg.meas_noise),
                last_box=det.box,
                last_score=det.score,
            )
        else:
            post = _miss_bernoulli(b, cfg.pd_for(b.class_label))
        if post.r >= cfg.prune_threshold:
            out_bernoullis.append(post)
        elif cfg.recycle_pruned and post.r > 0.0:
            recycled.append(PppComponent(weight=post.r, state=post.state))

    next_id = density.next_track_id
    for j in new_rows:
        det = detections[j]
        born = _spawn_bernoulli(
            np.array([det.box.cx, det.box.cy]), det, density.ppp, cfg, next_id)
        next_id += 1
        if born.r >= cfg.prune_threshold:
            out_bernoullis.append(born)

    # Undetected objects stay in the PPP, thinned by the detection probability.
    ppp = [
        PppComponent(weight=c.weight * (1.0 - cfg.detection_prob), state=c.state)
        for c in density.ppp
    ] + recycled
    ppp = [c for c in ppp if c.weight >= cfg.ppp_prune_threshold]
    ppp.sort(key=lambda c: -c.weight)
    ppp = ppp[: cfg.max_ppp_components]

    return PmbDensity(
        ppp=tuple(ppp),
        bernoullis=tuple(out_bernoullis),
        next_track_id=next_id,
    )


def pot_extract(density: PmbDensity, cfg: PotConfig, frame_idx: int) -> list[TrackRecord]:
    """Track records for Bernoullis above the existence threshold.

    Position comes from the filter mean; the rest of the box geometry comes
    from the last associated detection.
    """
    records = []
    for b in sorted(density.bernoullis, key=lambda b: b.track_id):
        if b.r < cfg.extract_threshold:
            continue
        box = Box3D(
            cx=float(b.state.mean[0]),
            cy=float(b.state.mean[1]),
            cz=b.last_box.cz,
            length=b.last_box.length,
            width=b.last_box.width,
            height=b.last_box.height,
            yaw=b.last_box.yaw,
        )
        records.append(
            TrackRecord(
                track_id=b.track_id,
                frame_idx=frame_idx,
                box=box,
                class_label=b.class_label,
                existence=min(b.r, 1.0),
            )
        )
    return records
