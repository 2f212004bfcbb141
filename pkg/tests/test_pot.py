"""GNN-PMB point-object tracker tests.

The Kalman update oracle and the association-weight enumeration are written
out longhand here, independent of the library implementation.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from radarmot.core import Box3D, Detection, log_gaussian_density
from radarmot.pot import (
    BernoulliPOT,
    KinematicGaussian,
    PmbDensity,
    PotConfig,
    PppComponent,
    empty_pmb,
    pot_extract,
    pot_predict,
    pot_update,
)

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def kalman_update_oracle(mean, cov, z, r_noise):
    s = H @ cov @ H.T + r_noise
    k = cov @ H.T @ np.linalg.inv(s)
    post_mean = mean + k @ (z - H @ mean)
    post_cov = cov - k @ s @ k.T
    return post_mean, post_cov


def det_at(x, y, cls="car", score=0.9, length=4.0, width=2.0):
    return Detection(Box3D(x, y, 0.5, length, width, 1.6, 0.0), cls, score)


def bern_at(x, y, r=0.9, track_id=0, cls="car", vx=0.0, vy=0.0, pos_var=1.0):
    state = KinematicGaussian(
        mean=np.array([x, y, vx, vy]),
        cov=np.diag([pos_var, pos_var, 4.0, 4.0]),
    )
    return BernoulliPOT(
        r=r,
        state=state,
        track_id=track_id,
        class_label=cls,
        last_box=Box3D(x, y, 0.5, 4.0, 2.0, 1.6, 0.0),
        last_score=0.9,
    )


def density_with(*bernoullis, ppp=()):
    next_id = max((b.track_id for b in bernoullis), default=-1) + 1
    return PmbDensity(ppp=tuple(ppp), bernoullis=tuple(bernoullis), next_track_id=next_id)


class TestPotPredict:
    def test_existence_scaled_by_survival(self):
        cfg = PotConfig(survival_prob=0.9)
        density = density_with(bern_at(0, 0, r=0.8))
        out = pot_predict(density, cfg, dt=0.1)
        assert out.bernoullis[0].r == pytest.approx(0.72)

    def test_mean_moves_with_velocity(self):
        cfg = PotConfig()
        density = density_with(bern_at(1.0, 2.0, vx=10.0, vy=-2.0))
        out = pot_predict(density, cfg, dt=0.5)
        np.testing.assert_allclose(out.bernoullis[0].state.mean[:2], [6.0, 1.0])

    def test_covariance_grows_on_diagonal_prior(self):
        cfg = PotConfig(process_noise=1.0)
        density = density_with(bern_at(0, 0))
        out = pot_predict(density, cfg, dt=0.2)
        prior = density.bernoullis[0].state.cov
        pred = out.bernoullis[0].state.cov
        assert pred[0, 0] > prior[0, 0]

    def test_birth_components_appended(self):
        cfg = PotConfig()
        out = pot_predict(empty_pmb(), cfg, dt=0.1)
        assert len(out.ppp) == len(cfg.birth)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            pot_predict(empty_pmb(), PotConfig(), dt=0.0)


class TestPotUpdateMiss:
    def test_missed_existence_formula(self):
        # r' = r(1-Pd)/(1-r*Pd) with r=0.5, Pd=0.9 -> 0.05/0.55
        cfg = PotConfig(detection_prob=0.9)
        density = density_with(bern_at(0, 0, r=0.5))
        out = pot_update(density, [], cfg)
        assert out.bernoullis[0].r == pytest.approx(0.05 / 0.55)

    def test_missed_state_unchanged(self):
        cfg = PotConfig()
        density = density_with(bern_at(3.0, -1.0, vx=2.0))
        out = pot_update(density, [], cfg)
        np.testing.assert_allclose(out.bernoullis[0].state.mean,
                                   density.bernoullis[0].state.mean)
        np.testing.assert_allclose(out.bernoullis[0].state.cov,
                                   density.bernoullis[0].state.cov)

    def test_ppp_scaled_by_one_minus_pd(self):
        cfg = PotConfig(detection_prob=0.9)
        comp = PppComponent(weight=0.4, state=KinematicGaussian(
            mean=np.zeros(4), cov=np.diag([100.0, 100.0, 25.0, 25.0])))
        density = PmbDensity(ppp=(comp,), bernoullis=(), next_track_id=0)
        out = pot_update(density, [], cfg)
        assert out.ppp[0].weight == pytest.approx(0.04)


class TestPotUpdateMatch:
    def test_single_object_equals_kalman_oracle(self):
        cfg = PotConfig(detection_prob=0.9, clutter_intensity=1e-4)
        bern = bern_at(10.0, 5.0, r=0.8)
        density = density_with(bern)
        z = np.array([10.6, 4.7])
        out = pot_update(density, [det_at(z[0], z[1])], cfg)
        post = out.bernoullis[0]
        exp_mean, exp_cov = kalman_update_oracle(
            bern.state.mean, bern.state.cov, z, cfg.meas_noise)
        np.testing.assert_allclose(post.state.mean, exp_mean, atol=1e-9)
        np.testing.assert_allclose(post.state.cov, exp_cov, atol=1e-9)
        assert post.r == pytest.approx(1.0)
        assert post.track_id == bern.track_id

    def test_matched_keeps_detection_box(self):
        cfg = PotConfig()
        density = density_with(bern_at(0.0, 0.0))
        det = det_at(0.2, -0.1, length=4.7, width=1.8, score=0.66)
        out = pot_update(density, [det], cfg)
        assert out.bernoullis[0].last_box.length == 4.7
        assert out.bernoullis[0].last_score == 0.66

    def test_different_class_never_associates(self):
        cfg = PotConfig()
        density = density_with(bern_at(0.0, 0.0, cls="car", track_id=5), ppp=cfg.birth)
        out = pot_update(density, [det_at(0.1, 0.0, cls="pedestrian")], cfg)
        by_id = {b.track_id: b for b in out.bernoullis}
        # The car track was missed; the pedestrian detection spawned a new one.
        assert by_id[5].r < density.bernoullis[0].r
        new = [b for b in out.bernoullis if b.track_id != 5]
        assert len(new) == 1 and new[0].class_label == "pedestrian"

    def test_gate_blocks_distant_detection(self):
        cfg = PotConfig()
        density = density_with(bern_at(0.0, 0.0, pos_var=0.5))
        out = pot_update(density, [det_at(40.0, 40.0)], cfg)
        by_id = {b.track_id: b for b in out.bernoullis}
        assert by_id[0].r < density.bernoullis[0].r  # missed, not matched

    def test_two_object_crossing_matches_enumerated_best_hypothesis(self):
        cfg = PotConfig(detection_prob=0.9, clutter_intensity=1e-4)
        a = bern_at(0.0, 0.0, r=0.9, track_id=0)
        b = bern_at(6.0, 0.0, r=0.9, track_id=1)
        density = density_with(a, b)
        z1, z2 = np.array([0.8, 0.2]), np.array([5.4, -0.3])

        def match_weight(bern, z):
            s = H @ bern.state.cov @ H.T + cfg.meas_noise
            lik = math.exp(log_gaussian_density(z, H @ bern.state.mean, s))
            return bern.r * cfg.detection_prob * lik / (1.0 - bern.r * cfg.detection_prob)

        # Enumerate both full pairings by hand (births are negligible here).
        w_straight = match_weight(a, z1) * match_weight(b, z2)
        w_crossed = match_weight(a, z2) * match_weight(b, z1)
        assert w_straight > w_crossed

        out = pot_update(density, [det_at(*z1), det_at(*z2)], cfg)
        by_id = {bb.track_id: bb for bb in out.bernoullis}
        np.testing.assert_allclose(
            by_id[0].state.mean[:2],
            kalman_update_oracle(a.state.mean, a.state.cov, z1, cfg.meas_noise)[0][:2],
            atol=1e-9,
        )
        np.testing.assert_allclose(
            by_id[1].state.mean[:2],
            kalman_update_oracle(b.state.mean, b.state.cov, z2, cfg.meas_noise)[0][:2],
            atol=1e-9,
        )


class TestPotBirth:
    def test_unmatched_detection_spawns_bernoulli_with_derived_existence(self):
        cfg = PotConfig(detection_prob=0.9, clutter_intensity=1e-4)
        density = pot_predict(empty_pmb(), cfg, dt=0.1)
        z = np.array([12.0, -7.0])
        out = pot_update(density, [det_at(*z)], cfg)
        assert len(out.bernoullis) == 1
        born = out.bernoullis[0]

        # Hand-computed spawn existence: r = L / (clutter + L) with
        # L = Pd * sum_b w_b N(z; H m_b, H P_b H' + R).
        lik = 0.0
        for comp in density.ppp:
            s = H @ comp.state.cov @ H.T + cfg.meas_noise
            lik += comp.weight * math.exp(log_gaussian_density(z, H @ comp.state.mean, s))
        lik *= cfg.detection_prob
        expect_r = lik / (cfg.clutter_intensity + lik)
        assert born.r == pytest.approx(expect_r, rel=1e-9)
        assert born.class_label == "car"

    def test_new_track_ids_are_fresh_and_increasing(self):
        cfg = PotConfig()
        density = pot_predict(empty_pmb(), cfg, dt=0.1)
        out = pot_update(density, [det_at(0, 0), det_at(30, 30)], cfg)
        ids = sorted(b.track_id for b in out.bernoullis)
        assert ids == [0, 1]
        assert out.next_track_id == 2


class TestPotExtract:
    def test_threshold_and_geometry_from_last_detection(self):
        cfg = PotConfig(extract_threshold=0.5)
        strong = bern_at(1.0, 2.0, r=0.9, track_id=3)
        weak = bern_at(5.0, 5.0, r=0.2, track_id=4)
        records = pot_extract(density_with(strong, weak), cfg, frame_idx=7)
        assert [r.track_id for r in records] == [3]
        rec = records[0]
        assert rec.frame_idx == 7
        assert rec.box.cx == pytest.approx(1.0)
        assert rec.box.cy == pytest.approx(2.0)
        assert rec.box.length == strong.last_box.length
        assert rec.existence == pytest.approx(0.9)

    def test_pruning_never_removes_extractable(self):
        cfg = PotConfig()
        assert cfg.prune_threshold < cfg.extract_threshold


class TestNoiseFreeConvergence:
    def test_extracted_set_equals_ground_truth(self):
        # Near-ideal regime: Pd ~ 1, clutter ~ 0, exact detections, tiny R.
        cfg = PotConfig(
            detection_prob=0.999,
            clutter_intensity=1e-12,
            meas_noise=np.eye(2) * 1e-12,
            process_noise=0.1,
        )
        objects = [
            (np.array([5.0, 0.0]), np.array([2.0, 0.5])),
            (np.array([-10.0, 4.0]), np.array([0.0, -1.0])),
        ]
        density = empty_pmb()
        dt = 0.1
        for k in range(6):
            density = pot_predict(density, cfg, dt)
            dets = [
                det_at(p[0] + v[0] * k * dt, p[1] + v[1] * k * dt)
                for p, v in objects
            ]
            density = pot_update(density, dets, cfg)
            if k >= 2:
                records = pot_extract(density, cfg, frame_idx=k)
                assert len(records) == 2
                got = sorted((r.box.cx, r.box.cy) for r in records)
                want = sorted(
                    (p[0] + v[0] * k * dt, p[1] + v[1] * k * dt) for p, v in objects
                )
                for g, w in zip(got, want):
                    assert abs(g[0] - w[0]) < 1e-6
                    assert abs(g[1] - w[1]) < 1e-6


class TestRecycling:
    def test_pruned_bernoulli_recycled_into_ppp(self):
        cfg = PotConfig(detection_prob=0.9, prune_threshold=1e-2, recycle_pruned=True)
        dying = bern_at(0, 0, r=0.02, track_id=0)
        density = density_with(dying)
        out = pot_update(density, [], cfg)
        assert len(out.bernoullis) == 0
        assert len(out.ppp) == 1
        # Recycled weight equals the post-miss existence.
        assert out.ppp[0].weight == pytest.approx(0.02 * 0.1 / (1 - 0.02 * 0.9))
