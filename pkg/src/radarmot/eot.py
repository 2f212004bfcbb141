"""GGIW-PMBM tracker for extended objects.

Each object is a gamma-Gaussian-inverse-Wishart (GGIW) triplet: measurement
rate (gamma), CV kinematics (Gaussian), and a 2x2 elliptical extent (inverse
Wishart, mean V/(v-6)). The multi-object density is Poisson (undetected) plus
a multi-Bernoulli mixture: tracks hold alternative local hypotheses and
global hypotheses select one local hypothesis per track (-1 = absent).

Updates enumerate (prior hypothesis x partition) pairs, rank associations
with Murty k-best over cluster-to-track cost matrices, and renormalize. The
detection probability factorizes as Pd = Pdm * (1 - (b/(b+1))^a): sensor
detectability times the probability of at least one return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon

from .assignment import murty_k_best
from .core import (
    CLASS_GEOMETRY,
    Box3D,
    TrackRecord,
    cv_process_noise,
    cv_transition,
    normalize_yaw,
)
from .partitioning import Cluster, Partition
from .pot import KinematicGaussian

D = 2  # BEV measurement dimension


class DegenerateExtentError(ValueError):
    """Extent matrix is not symmetric positive definite."""


@dataclass(frozen=True)
class GammaRate:
    """Gamma distribution over the Poisson measurement rate; mean a/b."""

    a: float
    b: float


@dataclass(frozen=True)
class IwExtent:
    """Inverse-Wishart extent with dof v > 6; mean V/(v-6) in 2D."""

    v: float
    V: np.ndarray


@dataclass(frozen=True)
class Ggiw:
    rate: GammaRate
    kin: KinematicGaussian
    extent: IwExtent

    def extent_mean(self) -> np.ndarray:
        return self.extent.V / (self.extent.v - 2.0 * D - 2.0)


@dataclass(frozen=True)
class PppGgiw:
    weight: float
    ggiw: Ggiw


@dataclass(frozen=True)
class BernoulliEOT:
    r: float
    ggiw: Ggiw


@dataclass(frozen=True)
class Track:
    """One potential object with alternative local hypotheses.

    The track id persists across hypothesis branching; global hypotheses
    index into `locals`.
    """

    track_id: int
    class_label: str | None
    locals: tuple[BernoulliEOT, ...]


@dataclass(frozen=True)
class GlobalHyp:
    weight: float
    selection: tuple[int, ...]
    """Per track: local hypothesis index, or -1 when absent."""


@dataclass(frozen=True)
class PmbmDensity:
    ppp: tuple[PppGgiw, ...]
    tracks: tuple[Track, ...]
    hyps: tuple[GlobalHyp, ...]
    next_track_id: int


def empty_pmbm() -> PmbmDensity:
    return PmbmDensity(
        ppp=(), tracks=(), hyps=(GlobalHyp(weight=1.0, selection=()),),
        next_track_id=0)


def _default_eot_birth() -> tuple[PppGgiw, ...]:
    ggiw = Ggiw(
        rate=GammaRate(a=1.0, b=0.1),
        kin=KinematicGaussian(
            mean=np.zeros(4), cov=np.diag([1.0e4, 1.0e4, 25.0, 25.0])),
        extent=IwExtent(v=20.0, V=np.eye(2) * 14.0),
    )
    return (PppGgiw(weight=0.1, ggiw=ggiw),)


DEFAULT_CLASSIFICATION = (
    ("pedestrian", (0.0, 1.0), (0.0, 1.2)),
    ("cyclist", (0.0, 1.2), (1.2, 2.4)),
    ("car", (1.4, 2.6), (2.4, 6.0)),
)

DEFAULT_CLASS_GEOMETRY = CLASS_GEOMETRY


@dataclass
class EotConfig:
    survival_prob: float = 0.99
    detection_prob: float = 0.9
    """Pdm: probability that a detectable object is seen by the sensor."""
    clutter_intensity: float = 0.005
    """Expected clutter points per unit BEV area (points / m^2)."""
    process_noise: float = 1.0
    gamma_eta: float = 1.2
    """Forgetting divisor for the gamma parameters during prediction."""
    extent_tau: float = 5.0
    """Time constant (s) of the inverse-Wishart dof decay."""
    meas_var: float = 0.0
    """Optional isotropic sensor noise added to the extent, m^2."""
    birth: tuple[PppGgiw, ...] = field(default_factory=_default_eot_birth)
    birth_extent_from_cluster: bool = True
    extent_floor: float = 0.04
    """Eigenvalue floor (m^2) for cluster-derived extent initialization."""
    gate_distance: float = 10.0
    max_hypotheses: int = 6
    murty_k: int = 3
    hyp_prune_ratio: float = 1.0e-2
    extract_threshold: float = 0.5
    prune_threshold: float = 1.0e-3
    ppp_prune_threshold: float = 1.0e-3
    """Minimum PPP component weight. Detection thinning shrinks stale birth
    components geometrically, so anything below this adds nothing to the
    birth likelihood while costing one GGIW update per cluster."""
    max_ppp_components: int = 30
    axis_scale: float = 2.0
    """Half-axis multiplier mapping extent eigenvalues to box dimensions."""
    nms_iou: float = 0.25
    birth_class_label: str | None = None
    """Class tag for tracks born in this filter (used by per-class runs)."""
    class_geometry: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_GEOMETRY))
    classification: tuple = DEFAULT_CLASSIFICATION


# --- single-component GGIW operations ---

def ggiw_predict(g: Ggiw, cfg: EotConfig, dt: float) -> Ggiw:
    """CV prediction with extent and rate forgetting.

    The extent mean V/(v-6) is invariant; its dof decays toward 6 with time
    constant extent_tau. The gamma mean a/b is invariant while its variance
    grows by gamma_eta.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    f = cv_transition(dt)
    q = cv_process_noise(dt, cfg.process_noise)
    kin = KinematicGaussian(mean=f @ g.kin.mean, cov=f @ g.kin.cov @ f.T + q)
    decay = math.exp(-dt / cfg.extent_tau)
    extent = IwExtent(v=2.0 * D + 2.0 + decay * (g.extent.v - 2.0 * D - 2.0),
                      V=decay * g.extent.V)
    rate = GammaRate(a=g.rate.a / cfg.gamma_eta, b=g.rate.b / cfg.gamma_eta)
    return Ggiw(rate=rate, kin=kin, extent=extent)


def predicted_detection_prob(g: Ggiw, cfg: EotConfig) -> float:
    """Pd = Pdm * P(at least one point) under the predicted gamma rate."""
    p_m = 1.0 - (g.rate.b / (g.rate.b + 1.0)) ** g.rate.a
    return cfg.detection_prob * p_m


_HALF_LOG_PI = 0.5 * math.log(math.pi)


def _logsumexp(values: Sequence[float]) -> float:
    """log(sum(exp(values))) for short plain-float lists."""
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(x - m) for x in values))


def _logdet2(m00: float, m01: float, m11: float) -> float:
    """log determinant of a symmetric positive definite 2x2 matrix."""
    det = m00 * m11 - m01 * m01
    if det <= 0.0:
        raise DegenerateExtentError(f"matrix not positive definite, det={det}")
    return math.log(det)


def _multigammaln2(x: float) -> float:
    """Bivariate multivariate log-gamma: lgamma(x) + lgamma(x - 1/2)."""
    return _HALF_LOG_PI + math.lgamma(x) + math.lgamma(x - 0.5)


def _ggiw_update_core(g: Ggiw, cluster: Cluster, cfg: EotConfig,
                      want_posterior: bool) -> tuple[Ggiw | None, float]:
    """Conjugate update with an n-point cluster and its log pseudo-likelihood.

    The likelihood marginalizes the point count over the gamma rate and the
    cluster geometry over the inverse-Wishart extent, so it is directly
    comparable across clusters of different cardinality. The 2x2 extent and
    innovation algebra is spelled out in scalars; this update dominates the
    tracker's runtime, and most calls only need the likelihood, so the
    posterior is built on request.
    """
    n = cluster.count
    a, b = g.rate.a, g.rate.b
    v, big_v = g.extent.v, g.extent.V
    mean, cov = g.kin.mean, g.kin.cov

    inv_dof = 1.0 / (v - 2.0 * D - 2.0)
    bv00, bv01, bv11 = big_v[0, 0], big_v[0, 1], big_v[1, 1]
    x00 = bv00 * inv_dof
    x01 = bv01 * inv_dof
    x11 = bv11 * inv_dof
    if cfg.meas_var > 0.0:
        x00 += cfg.meas_var
        x11 += cfg.meas_var
    s00 = cov[0, 0] + x00 / n
    s01 = 0.5 * (cov[0, 1] + cov[1, 0]) + x01 / n
    s11 = cov[1, 1] + x11 / n

    det_s = s00 * s11 - s01 * s01
    if det_s <= 0.0:
        raise DegenerateExtentError(f"innovation covariance singular, det={det_s}")
    eps0 = cluster.centroid[0] - mean[0]
    eps1 = cluster.centroid[1] - mean[1]

    # Innovation spread N = X^(1/2) S^(-1/2) eps (X^(1/2) S^(-1/2) eps)^T.
    lx00 = math.sqrt(x00)
    lx10 = x01 / lx00
    lx11 = math.sqrt(max(x11 - lx10 * lx10, 0.0))
    ls00 = math.sqrt(s00)
    ls10 = s01 / ls00
    ls11 = math.sqrt(s11 - ls10 * ls10)
    y0 = eps0 / ls00
    y1 = (eps1 - ls10 * y0) / ls11
    w0 = lx00 * y0
    w1 = lx10 * y0 + lx11 * y1

    sc = cluster.scatter
    b2v00 = bv00 + sc[0, 0] + w0 * w0
    b2v01 = bv01 + sc[0, 1] + w0 * w1
    b2v11 = bv11 + sc[1, 1] + w1 * w1
    v2 = v + n
    a2, b2 = a + n, b + 1.0

    loglik = (
        -0.5 * D * (n * math.log(math.pi) + math.log(n))
        + 0.5 * (v - D - 1.0) * _logdet2(bv00, bv01, bv11)
        - 0.5 * (v2 - D - 1.0) * _logdet2(b2v00, b2v01, b2v11)
        + _multigammaln2(0.5 * (v2 - D - 1.0))
        - _multigammaln2(0.5 * (v - D - 1.0))
        + 0.5 * _logdet2(x00, x01, x11)
        - 0.5 * math.log(det_s)
        + a * math.log(b)
        - math.lgamma(a)
        - a2 * math.log(b2)
        + math.lgamma(a2)
    )
    if not want_posterior:
        return None, float(loglik)

    # Kalman gain K = P H^T S^-1; only the first two state columns enter.
    i00, i01, i11 = s11 / det_s, -s01 / det_s, s00 / det_s
    c2 = cov[:, :2]
    k = np.empty((4, 2))
    k[:, 0] = c2[:, 0] * i00 + c2[:, 1] * i01
    k[:, 1] = c2[:, 0] * i01 + c2[:, 1] * i11
    mean2 = mean + k[:, 0] * eps0 + k[:, 1] * eps1
    # cov2 = cov - K S K^T, with K S = P H^T already at hand.
    cov2 = cov - k[:, 0][:, None] * c2[:, 0][None, :] \
               - k[:, 1][:, None] * c2[:, 1][None, :]
    cov2 = 0.5 * (cov2 + cov2.T)
    big_v2 = np.array([[b2v00, b2v01], [b2v01, b2v11]])
    upd = Ggiw(rate=GammaRate(a2, b2),
               kin=KinematicGaussian(mean2, cov2),
               extent=IwExtent(v2, big_v2))
    return upd, float(loglik)


def ggiw_update(g: Ggiw, cluster: Cluster, cfg: EotConfig) -> tuple[Ggiw, float]:
    """Posterior GGIW and log pseudo-likelihood for an n-point cluster."""
    upd, loglik = _ggiw_update_core(g, cluster, cfg, want_posterior=True)
    assert upd is not None
    return upd, loglik


def ggiw_update_loglik(g: Ggiw, cluster: Cluster, cfg: EotConfig) -> float:
    """Log pseudo-likelihood of ggiw_update without building the posterior."""
    return _ggiw_update_core(g, cluster, cfg, want_posterior=False)[1]


def _miss_bernoulli_eot(bern: BernoulliEOT, pd: float) -> BernoulliEOT:
    return replace(bern, r=bern.r * (1.0 - pd) / (1.0 - bern.r * pd))


# --- geometry helpers ---

def extent_to_box(position: np.ndarray, extent: np.ndarray, cfg: EotConfig,
                  class_label: str | None) -> Box3D:
    """Elliptical extent to an oriented box.

    The major eigenvector sets the yaw (reported modulo pi, in
    [-pi/2, pi/2)); axis lengths are 2 * axis_scale * sqrt(eigenvalue).
    Isotropic extents get yaw 0. Height and z come from per-class defaults.
    """
    x = np.asarray(extent, dtype=float)
    x = 0.5 * (x + x.T)
    if not np.isfinite(x).all():
        raise DegenerateExtentError("extent contains non-finite entries")
    lam, vec = np.linalg.eigh(x)
    if lam[0] <= 0.0:
        raise DegenerateExtentError(f"extent eigenvalues {lam} not positive")
    lam_minor, lam_major = float(lam[0]), float(lam[1])
    if lam_major - lam_minor <= 1.0e-12 * max(lam_major, 1.0):
        yaw = 0.0
    else:
        major = vec[:, 1]
        yaw = math.atan2(major[1], major[0])
        yaw = normalize_yaw(yaw)
        if yaw >= 0.5 * math.pi:
            yaw -= math.pi
        elif yaw < -0.5 * math.pi:
            yaw += math.pi
    length = 2.0 * cfg.axis_scale * math.sqrt(lam_major)
    width = 2.0 * cfg.axis_scale * math.sqrt(lam_minor)
    height, cz = cfg.class_geometry.get(
        class_label or "other", cfg.class_geometry["other"])
    return Box3D(cx=float(position[0]), cy=float(position[1]), cz=cz,
                 length=length, width=width, height=height, yaw=yaw)


def heuristic_classify(box: Box3D, table: Sequence) -> str:
    """First size-table row whose (width, length] intervals contain the box."""
    for label, (w_lo, w_hi), (l_lo, l_hi) in table:
        if w_lo < box.width <= w_hi and l_lo < box.length <= l_hi:
            return label
    return "other"


def bev_iou(a: Box3D, b: Box3D) -> float:
    pa, pb = Polygon(a.bev_corners()), Polygon(b.bev_corners())
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return inter / union if union > 0.0 else 0.0


def nms_boxes(items: Sequence[tuple[Box3D, float]], iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression by descending score.

    Returns kept indices in suppression order; a candidate is dropped when
    its BEV IoU with any kept box exceeds the threshold.
    """
    order = sorted(range(len(items)), key=lambda i: (-items[i][1], i))
    kept: list[int] = []
    for i in order:
        if all(bev_iou(items[i][0], items[j][0]) <= iou_threshold for j in kept):
            kept.append(i)
    return kept


# --- PMBM recursion ---

def eot_predict(density: PmbmDensity, cfg: EotConfig, dt: float) -> PmbmDensity:
    """Survival-scaled prediction of every component; birth joins the PPP."""
    tracks = tuple(
        replace(t, locals=tuple(
            BernoulliEOT(r=b.r * cfg.survival_prob,
                         ggiw=ggiw_predict(b.ggiw, cfg, dt))
            for b in t.locals))
        for t in density.tracks
    )
    ppp = tuple(
        PppGgiw(weight=c.weight * cfg.survival_prob,
                ggiw=ggiw_predict(c.ggiw, cfg, dt))
        for c in density.ppp
    ) + cfg.birth
    return PmbmDensity(ppp=ppp, tracks=tracks, hyps=density.hyps,
                       next_track_id=density.next_track_id)


def _floor_spd(m: np.ndarray, floor: float) -> np.ndarray:
    lam, vec = np.linalg.eigh(0.5 * (m + m.T))
    lam = np.maximum(lam, floor)
    return vec @ np.diag(lam) @ vec.T


def _new_target_option(cluster: Cluster, ppp: Sequence[PppGgiw],
                       cfg: EotConfig) -> tuple[float, BernoulliEOT | None]:
    """Log weight and Bernoulli for explaining a cluster as a new object.

    The weight sums the clutter explanation (intensity^n) and the PPP match
    likelihood; existence is the PPP share. Pure-clutter clusters come back
    with no Bernoulli.
    """
    log_kappa = cluster.count * math.log(cfg.clutter_intensity)
    if not ppp:
        return log_kappa, None
    terms = []
    for comp in ppp:
        lik = ggiw_update_loglik(comp.ggiw, cluster, cfg)
        terms.append((math.log(cfg.detection_prob * comp.weight) + lik, comp))
    log_l = _logsumexp([t[0] for t in terms])
    log_w = _logsumexp([log_kappa, log_l])
    r_new = math.exp(log_l - log_w)
    if r_new < cfg.prune_threshold:
        return log_w, None
    best_comp = max(terms, key=lambda t: t[0])[1]
    ggiw_new, _ = ggiw_update(best_comp.ggiw, cluster, cfg)
    if cfg.birth_extent_from_cluster:
        # The inverse-Wishart carries exactly the evidence of the cluster:
        # n pseudo-observations around the floored sample covariance. A
        # larger dof would lock in a shape estimated from a handful of
        # points and starve later updates.
        x_init = _floor_spd(cluster.scatter / cluster.count, cfg.extent_floor)
        v_new = 2.0 * D + 2.0 + cluster.count
        ggiw_new = replace(ggiw_new,
                           extent=IwExtent(v=v_new, V=float(cluster.count) * x_init))
    return log_w, BernoulliEOT(r=min(r_new, 1.0), ggiw=ggiw_new)


def eot_update_with_partitions(density: PmbmDensity,
                               partitions: Sequence[Partition],
                               cfg: EotConfig) -> PmbmDensity:
    """Multi-partition PMBM update.

    For every (prior global hypothesis x partition) pair a cluster-to-track
    cost matrix is solved with Murty k-best; candidate posteriors are merged
    by identical selections, normalized, pruned to max_hypotheses, and
    renormalized. An empty partition list degenerates to the pure
    missed-detection update.
    """
    parts = list(partitions) if partitions else [Partition(clusters=())]
    tracks = density.tracks
    hyps = density.hyps if density.hyps else (
        GlobalHyp(weight=1.0, selection=(-1,) * len(tracks)),)

    # Unique clusters across partitions, plus per-partition row lists.
    cluster_list: list[Cluster] = []
    cluster_ids: dict[frozenset[int], int] = {}
    part_rows: list[list[int]] = []
    for p in parts:
        rows = []
        for c in p.clusters:
            cid = cluster_ids.get(c.key())
            if cid is None:
                cid = len(cluster_list)
                cluster_ids[c.key()] = cid
                cluster_list.append(c)
            rows.append(cid)
        part_rows.append(rows)

    # Per-(track, local) miss branch and gated match branches. Cost vectors
    # over cluster ids let the per-hypothesis matrices be simple gathers.
    n_cl = len(cluster_list)
    centroids = (np.array([c.centroid for c in cluster_list])
                 if n_cl else np.empty((0, 2)))
    gate_sq = cfg.gate_distance * cfg.gate_distance
    miss_logw: list[list[float]] = []
    miss_bern: list[list[BernoulliEOT]] = []
    match_cost: list[list[np.ndarray]] = []
    for t in tracks:
        miss_logw.append([])
        miss_bern.append([])
        match_cost.append([])
        for bern in t.locals:
            pd = predicted_detection_prob(bern.ggiw, cfg)
            miss_lw = math.log(1.0 - bern.r * pd)
            miss_logw[-1].append(miss_lw)
            miss_bern[-1].append(_miss_bernoulli_eot(bern, pd))
            pos = bern.ggiw.kin.mean[:2]
            cost_vec = np.full(n_cl, np.inf)
            if bern.r > 0.0 and n_cl:
                log_r_pdm = math.log(bern.r) + math.log(cfg.detection_prob)
                d_sq = ((centroids - pos) ** 2).sum(axis=1)
                for cid in np.nonzero(d_sq <= gate_sq)[0]:
                    cid = int(cid)
                    lik = ggiw_update_loglik(bern.ggiw, cluster_list[cid], cfg)
                    cost_vec[cid] = -(log_r_pdm + lik - miss_lw)
            match_cost[-1].append(cost_vec)

    # New-target option per cluster; slots assigned in cluster order.
    new_logw: list[float] = []
    new_bern: list[BernoulliEOT | None] = []
    new_slot: dict[int, int] = {}
    for cid, cl in enumerate(cluster_list):
        log_w, bern = _new_target_option(cl, density.ppp, cfg)
        new_logw.append(log_w)
        new_bern.append(bern)
        if bern is not None:
            new_slot[cid] = len(tracks) + len(new_slot)
    neg_new_logw = -np.asarray(new_logw, dtype=float)
    n_out = len(tracks) + len(new_slot)

    # Posterior local-hypothesis stores, filled on demand.
    post_locals: list[list[BernoulliEOT]] = [[] for _ in range(n_out)]
    node_index: list[dict[tuple, int]] = [dict() for _ in range(n_out)]

    def node_for(t_idx: int, key: tuple, bern: BernoulliEOT) -> int:
        idx = node_index[t_idx].get(key)
        if idx is None:
            idx = len(post_locals[t_idx])
            node_index[t_idx][key] = idx
            post_locals[t_idx].append(bern)
        return idx

    # Match posteriors are only built for pairs that a kept solution selects.
    match_post: dict[tuple[int, int, int], BernoulliEOT] = {}

    def match_bernoulli(t_idx: int, li: int, cid: int) -> BernoulliEOT:
        key = (t_idx, li, cid)
        found = match_post.get(key)
        if found is None:
            upd, _ = ggiw_update(tracks[t_idx].locals[li].ggiw,
                                 cluster_list[cid], cfg)
            found = BernoulliEOT(r=1.0, ggiw=upd)
            match_post[key] = found
        return found

    candidates: dict[tuple[int, ...], list[float]] = {}
    # Partitions differing only in far-clutter grouping reduce to the same
    # enumeration problem, so memoize within the frame.
    murty_cache: dict = {}
    for hyp in hyps:
        if len(hyp.selection) != len(tracks):
            raise AssertionError("global hypothesis selection length mismatch")
        alive = [(t_idx, li) for t_idx, li in enumerate(hyp.selection) if li >= 0]
        base = math.log(hyp.weight) if hyp.weight > 0.0 else -math.inf
        base += sum(miss_logw[t_idx][li] for t_idx, li in alive)
        n_alive = len(alive)
        for rows in part_rows:
            m = len(rows)
            rows_arr = np.asarray(rows, dtype=int)
            cost = np.full((m, n_alive + m), np.inf)
            for j, (t_idx, li) in enumerate(alive):
                cost[:, j] = match_cost[t_idx][li][rows_arr]
            diag = np.arange(m)
            cost[diag, n_alive + diag] = neg_new_logw[rows_arr]
            for sol in murty_k_best(cost, cfg.murty_k, murty_cache):
                log_w = base - sol.total
                selection = [-1] * n_out
                for t_idx, li in alive:
                    selection[t_idx] = node_for(
                        t_idx, ("miss", li), miss_bern[t_idx][li])
                for i, col in enumerate(sol.row_to_col):
                    cid = rows[i]
                    if col < n_alive:
                        t_idx, li = alive[col]
                        selection[t_idx] = node_for(t_idx, ("match", li, cid),
                                                    match_bernoulli(t_idx, li, cid))
                    elif new_bern[cid] is not None:
                        slot = new_slot[cid]
                        selection[slot] = node_for(slot, ("new", cid), new_bern[cid])
                candidates.setdefault(tuple(selection), []).append(log_w)

    # Merge duplicates, normalize, prune by ratio and cap, renormalize.
    keys = sorted(candidates)
    log_ws = np.array([_logsumexp(candidates[k]) for k in keys])
    log_ws -= _logsumexp(list(log_ws))
    ranked = sorted(zip(log_ws, keys), key=lambda kv: (-kv[0], kv[1]))
    cutoff = (ranked[0][0] + math.log(cfg.hyp_prune_ratio)
              if cfg.hyp_prune_ratio > 0.0 else -math.inf)
    kept = [
        (lw, sel) for lw, sel in ranked[: cfg.max_hypotheses]
        if lw >= cutoff
    ]
    norm = _logsumexp([float(lw) for lw, _ in kept])

    # Existence pruning: absent-ify low-r locals, then re-merge selections.
    merged: dict[tuple[int, ...], float] = {}
    for lw, sel in kept:
        sel = tuple(
            s if s >= 0 and post_locals[t][s].r >= cfg.prune_threshold else -1
            for t, s in enumerate(sel)
        )
        merged[sel] = merged.get(sel, 0.0) + math.exp(lw - norm)

    # Drop tracks alive nowhere; compact local stores to referenced nodes.
    alive_tracks = sorted(
        {t for sel in merged for t, s in enumerate(sel) if s >= 0})
    track_map = {t: i for i, t in enumerate(alive_tracks)}
    used_nodes: dict[int, list[int]] = {t: [] for t in alive_tracks}
    for sel in merged:
        for t, s in enumerate(sel):
            if s >= 0 and s not in used_nodes[t]:
                used_nodes[t].append(s)
    node_map: dict[int, dict[int, int]] = {}
    for t in alive_tracks:
        used_nodes[t].sort()
        node_map[t] = {s: i for i, s in enumerate(used_nodes[t])}

    next_id = density.next_track_id
    out_tracks: list[Track] = []
    slot_to_cid = {slot: cid for cid, slot in new_slot.items()}
    new_ids: dict[int, int] = {}
    for slot in sorted(slot_to_cid):
        new_ids[slot] = next_id
        next_id += 1
    for t in alive_tracks:
        locals_t = tuple(post_locals[t][s] for s in used_nodes[t])
        if t < len(tracks):
            out_tracks.append(replace(tracks[t], locals=locals_t))
        else:
            out_tracks.append(Track(track_id=new_ids[t],
                                    class_label=cfg.birth_class_label,
                                    locals=locals_t))

    out_hyps = []
    for sel, w in sorted(merged.items(), key=lambda kv: (-kv[1], kv[0])):
        mapped = tuple(
            node_map[t][sel[t]] if sel[t] >= 0 else -1 for t in alive_tracks)
        out_hyps.append(GlobalHyp(weight=w, selection=mapped))
    total_w = sum(h.weight for h in out_hyps)
    out_hyps = tuple(replace(h, weight=h.weight / total_w) for h in out_hyps)

    # Undetected objects: thin the PPP by its own detection probability.
    ppp = [
        PppGgiw(weight=c.weight * (1.0 - predicted_detection_prob(c.ggiw, cfg)),
                ggiw=c.ggiw)
        for c in density.ppp
    ]
    ppp = [c for c in ppp if c.weight >= cfg.ppp_prune_threshold]
    ppp.sort(key=lambda c: -c.weight)
    ppp = ppp[: cfg.max_ppp_components]

    return PmbmDensity(ppp=tuple(ppp), tracks=tuple(out_tracks),
                       hyps=out_hyps, next_track_id=next_id)


def eot_extract(density: PmbmDensity, cfg: EotConfig, frame_idx: int) -> list[TrackRecord]:
    """Records from the max-weight hypothesis, thresholded and de-duplicated.

    Class comes from the track's stored label when the detector provided one,
    otherwise from the size heuristic. Overlapping estimates are reduced by
    NMS on existence.
    """
    if not density.hyps or not density.tracks:
        return []
    best = max(density.hyps, key=lambda h: h.weight)
    entries: list[tuple[int, Box3D, str, float]] = []
    for track, s in zip(density.tracks, best.selection):
        if s < 0:
            continue
        bern = track.locals[s]
        if bern.r < cfg.extract_threshold:
            continue
        box = extent_to_box(bern.ggiw.kin.mean[:2], bern.ggiw.extent_mean(),
                            cfg, track.class_label)
        label = track.class_label or heuristic_classify(box, cfg.classification)
        if label != track.class_label and track.class_label is None:
            # Re-derive the box so height/z follow the classified label.
            box = extent_to_box(bern.ggiw.kin.mean[:2], bern.ggiw.extent_mean(),
                                cfg, label)
        entries.append((track.track_id, box, label, min(bern.r, 1.0)))
    kept = nms_boxes([(box, r) for _, box, _, r in entries], cfg.nms_iou)
    records = [
        TrackRecord(track_id=entries[i][0], frame_idx=frame_idx,
                    box=entries[i][1], class_label=entries[i][2],
                    existence=entries[i][3])
        for i in kept
    ]
    records.sort(key=lambda rec: rec.track_id)
    return records
