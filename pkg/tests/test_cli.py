"""Tests for the command-line interface: subcommands, exit codes, manifests."""

import dataclasses
import json
import logging

import numpy as np
import pytest

from radarmot.cli import (
    EXIT_CONFIG,
    EXIT_INPUT,
    EXIT_INVARIANT,
    EXIT_OK,
    clustering_config_from_dict,
    eot_config_from_dict,
    load_layered_config,
    load_scenario,
    main,
    packaged_scenario_path,
    pipeline_config_from_dict,
    pot_config_from_dict,
    size_histogram,
)
from radarmot.core import Box3D, Detection, Frame, GroundTruthObject, TrackRecord
from radarmot.io import (
    ConfigError,
    InvariantError,
    read_frames,
    read_manifest,
    read_records,
    write_frames,
    write_records,
)
from radarmot.scenario import scenario_to_record


@pytest.fixture(scope="module")
def mini_scenario(tmp_path_factory):
    """A 30-frame copy of the default scenario, written to a JSON file."""
    base = load_scenario(packaged_scenario_path("default"))
    cfg = dataclasses.replace(base, name="mini", duration=30, clutter_rate=5.0)
    path = tmp_path_factory.mktemp("scen") / "mini.json"
    path.write_text(json.dumps(scenario_to_record(cfg)) + "\n",
                    encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def sim_root(mini_scenario, tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scenario", str(mini_scenario),
                 "--out", str(root)]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def pot_records(sim_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("trk") / "mini.records.jsonl"
    assert main(["track", "--framework", "tbd-pot", "--input", str(sim_root),
                 "--out", str(out)]) == EXIT_OK
    return out


class TestSimulate:
    def test_writes_frames_and_manifest(self, sim_root, mini_scenario):
        seq_dir = sim_root / "mini"
        frames = read_frames(seq_dir / "frames.jsonl")
        assert len(frames) == 30
        assert frames[0].seq_id == "mini"
        manifest = read_manifest(seq_dir / "manifest.json")
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 0
        assert str(mini_scenario) in manifest["input_paths"]
        assert len(manifest["config_sha256"]) == 64

    def test_same_seed_is_byte_identical(self, mini_scenario, tmp_path):
        outs = []
        for sub in ("a", "b"):
            root = tmp_path / sub
            assert main(["simulate", "--scenario", str(mini_scenario),
                         "--seed", "3", "--out", str(root)]) == EXIT_OK
            outs.append((root / "mini" / "frames.jsonl").read_bytes())
        assert outs[0] == outs[1]

    def test_seed_override_changes_frames(self, mini_scenario, sim_root,
                                          tmp_path):
        assert main(["simulate", "--scenario", str(mini_scenario),
                     "--seed", "5", "--out", str(tmp_path)]) == EXIT_OK
        manifest = read_manifest(tmp_path / "mini" / "manifest.json")
        assert manifest["seed"] == 5
        changed = (tmp_path / "mini" / "frames.jsonl").read_bytes()
        baseline = (sim_root / "mini" / "frames.jsonl").read_bytes()
        assert changed != baseline

    def test_missing_scenario_file_is_input_error(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        code = main(["simulate", "--scenario", str(missing),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_INPUT
        assert str(missing) in capsys.readouterr().err

    def test_invalid_scenario_is_config_error(self, mini_scenario, tmp_path,
                                              capsys):
        record = json.loads(mini_scenario.read_text(encoding="utf-8"))
        record["duration"] = -1.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(record) + "\n", encoding="utf-8")
        code = main(["simulate", "--scenario", str(bad),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_CONFIG
        assert "duration" in capsys.readouterr().err


class TestTrack:
    def test_smoke_stable_ids(self, pot_records):
        seq_id, records = read_records(pot_records)
        assert seq_id == "mini"
        assert records
        span: dict[int, list[int]] = {}
        for r in records:
            span.setdefault(r.track_id, []).append(r.frame_idx)
        persistence = max(len(set(v)) for v in span.values())
        assert persistence >= 15
        frame_ids = [(r.frame_idx, r.track_id) for r in records]
        assert len(frame_ids) == len(set(frame_ids))

    def test_manifest_records_merged_config(self, pot_records):
        manifest = read_manifest(
            pot_records.with_name(pot_records.name + ".manifest.json"))
        assert manifest["command"] == "track"
        assert manifest["config"]["framework"] == "tbd-pot"

    def test_set_override_changes_config_sha(self, sim_root, tmp_path):
        shas = []
        for name, extra in (("a", []),
                            ("b", ["--set", "pot.gate_threshold=25.0"])):
            out = tmp_path / f"{name}.records.jsonl"
            args = ["track", "--framework", "tbd-pot",
                    "--input", str(sim_root), "--out", str(out)] + extra
            assert main(args) == EXIT_OK
            manifest = read_manifest(
                out.with_name(out.name + ".manifest.json"))
            shas.append(manifest["config_sha256"])
        assert shas[0] != shas[1]

    def test_unknown_set_key_is_config_error(self, sim_root, tmp_path, capsys):
        code = main(["track", "--framework", "tbd-pot",
                     "--input", str(sim_root),
                     "--set", "pot.bogus_knob=1",
                     "--out", str(tmp_path / "x.records.jsonl")])
        assert code == EXIT_CONFIG
        assert "bogus_knob" in capsys.readouterr().err

    def test_jdt_eot_without_points_is_input_error(self, tmp_path, capsys):
        box = Box3D(cx=0.0, cy=0.0, cz=0.5, length=4.0, width=2.0, height=1.5,
                    yaw=0.0)
        frames = [
            Frame(seq_id="nopts", frame_idx=k, timestamp=0.1 * k, points=(),
                  detections=(Detection(box=box, class_label="car",
                                        score=0.9),),
                  ground_truth=(), ego_info=None)
            for k in range(3)
        ]
        in_dir = tmp_path / "nopts"
        write_frames(in_dir / "frames.jsonl", frames, seq_id="nopts")
        code = main(["track", "--framework", "jdt-eot", "--input", str(in_dir),
                     "--out", str(tmp_path / "out.records.jsonl")])
        assert code == EXIT_INPUT
        assert "points" in capsys.readouterr().err

    def test_missing_input_dir_is_input_error(self, tmp_path):
        code = main(["track", "--framework", "tbd-pot",
                     "--input", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "out.records.jsonl")])
        assert code == EXIT_INPUT

    def test_multi_sequence_input_writes_directory(self, mini_scenario,
                                                   tmp_path):
        record = json.loads(mini_scenario.read_text(encoding="utf-8"))
        record["name"] = "mini2"
        other = tmp_path / "mini2.json"
        other.write_text(json.dumps(record) + "\n", encoding="utf-8")
        root = tmp_path / "sims"
        for scen in (mini_scenario, other):
            assert main(["simulate", "--scenario", str(scen),
                         "--out", str(root)]) == EXIT_OK
        out_dir = tmp_path / "tracks"
        assert main(["track", "--framework", "tbd-pot", "--input", str(root),
                     "--out", str(out_dir)]) == EXIT_OK
        for seq in ("mini", "mini2"):
            seq_id, records = read_records(out_dir / f"{seq}.records.jsonl")
            assert seq_id == seq
            assert records
        manifest = read_manifest(out_dir / "manifest.json")
        assert set(manifest["wall_clock"]) == {"track_s.mini",
                                               "track_s.mini2"}


class TestEvaluate:
    def test_report_rows(self, sim_root, pot_records, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        code = main(["evaluate", "--gt", str(sim_root),
                     "--pred", str(pot_records),
                     "--report", str(report_path)])
        assert code == EXIT_OK
        body = json.loads(report_path.read_text(encoding="utf-8"))
        assert body["schema"] == "radarmot/report"
        labels = [row["class_label"] for row in body["rows"]]
        assert labels[-1] == "all"
        assert "car" in labels
        for row in body["rows"]:
            for key in ("hota", "det_a", "ass_a", "loc_a", "mota", "motp",
                        "tp", "fn", "fp", "ids"):
                assert key in row
        out = capsys.readouterr().out
        assert "HOTA" in out and "MOTA" in out

    def test_alpha_sweep_rows(self, sim_root, pot_records, tmp_path):
        report_path = tmp_path / "report.json"
        code = main(["evaluate", "--gt", str(sim_root),
                     "--pred", str(pot_records), "--alpha-sweep",
                     "--report", str(report_path)])
        assert code == EXIT_OK
        body = json.loads(report_path.read_text(encoding="utf-8"))
        sweep = body["alpha_sweep"]
        assert [row["alpha"] for row in sweep] == [0.5, 0.6, 0.7, 0.8]

    def test_class_agnostic_single_row(self, sim_root, pot_records, tmp_path):
        report_path = tmp_path / "report.json"
        code = main(["evaluate", "--gt", str(sim_root),
                     "--pred", str(pot_records), "--class-agnostic",
                     "--report", str(report_path)])
        assert code == EXIT_OK
        body = json.loads(report_path.read_text(encoding="utf-8"))
        assert body["class_agnostic"] is True
        assert [row["class_label"] for row in body["rows"]] == ["all"]

    def test_empty_predictions(self, sim_root, tmp_path):
        pred = tmp_path / "empty.records.jsonl"
        write_records(pred, [], seq_id="mini")
        report_path = tmp_path / "report.json"
        code = main(["evaluate", "--gt", str(sim_root), "--pred", str(pred),
                     "--class-agnostic", "--report", str(report_path)])
        assert code == EXIT_OK
        body = json.loads(report_path.read_text(encoding="utf-8"))
        row = body["rows"][0]
        assert row["tp"] == 0 and row["fp"] == 0
        assert row["fn"] > 0
        assert row["mota"] == 0.0
        assert row["hota"] == 0.0

    def test_unknown_sequence_is_input_error(self, sim_root, tmp_path, capsys):
        pred = tmp_path / "other.records.jsonl"
        write_records(pred, [], seq_id="other")
        code = main(["evaluate", "--gt", str(sim_root), "--pred", str(pred),
                     "--report", str(tmp_path / "report.json")])
        assert code == EXIT_INPUT
        assert "other" in capsys.readouterr().err


class TestReport:
    def test_histogram_mass_equals_tp_count(self, sim_root, pot_records,
                                            tmp_path):
        out = tmp_path / "hist.json"
        code = main(["report", "--pred", str(pot_records),
                     "--gt", str(sim_root), "--histogram", "extent-size",
                     "--out", str(out)])
        assert code == EXIT_OK
        body = json.loads(out.read_text(encoding="utf-8"))
        assert body["schema"] == "radarmot/histogram"
        assert body["bin_width"] == 0.25
        assert body["tp_count"] > 0
        for dim in ("length", "width"):
            hist = body[dim]
            assert sum(hist["counts"]) == body["tp_count"]
            widths = np.diff(np.asarray(hist["edges"]))
            assert np.allclose(widths, 0.25)

    def test_uniform_boxes_give_single_bin(self, tmp_path):
        box = Box3D(cx=0.0, cy=0.0, cz=0.5, length=4.2, width=1.8, height=1.5,
                    yaw=0.0)
        frames = []
        records = []
        for k in range(3):
            frames.append(Frame(
                seq_id="uni", frame_idx=k, timestamp=0.1 * k, points=(),
                detections=(),
                ground_truth=(GroundTruthObject(gt_id=1, box=box,
                                                class_label="car"),),
                ego_info=None))
            records.append(TrackRecord(frame_idx=k, track_id=4, box=box,
                                       class_label="car", existence=1.0))
        gt_dir = tmp_path / "uni"
        write_frames(gt_dir / "frames.jsonl", frames, seq_id="uni")
        pred = tmp_path / "uni.records.jsonl"
        write_records(pred, records, seq_id="uni")
        out = tmp_path / "hist.json"
        code = main(["report", "--pred", str(pred), "--gt", str(tmp_path),
                     "--histogram", "extent-size", "--out", str(out)])
        assert code == EXIT_OK
        body = json.loads(out.read_text(encoding="utf-8"))
        assert body["tp_count"] == 3
        assert body["length"]["counts"] == [3]
        assert body["width"]["counts"] == [3]

    def test_size_histogram_rejects_bad_bin_width(self):
        with pytest.raises(ConfigError):
            size_histogram([1.0], 0.0)

    def test_size_histogram_conserves_mass(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.1, 9.7, size=200).tolist()
        hist = size_histogram(values, 0.25)
        assert sum(hist["counts"]) == len(values)
        assert hist["edges"][0] <= min(values)
        assert hist["edges"][-1] >= max(values) - 1e-9


class TestBench:
    def test_bench_reports_fps(self, sim_root, capsys):
        code = main(["bench", "--framework", "tbd-pot",
                     "--input", str(sim_root), "--repeat", "2"])
        assert code == EXIT_OK
        out_lines = capsys.readouterr().out.strip().splitlines()
        body = json.loads(out_lines[-1])
        assert body["framework"] == "tbd-pot"
        assert body["fps"] > 0.0
        assert body["repetitions"] == 2
        assert body["frame_count"] == 30


class TestExitCodes:
    def test_invariant_violation_exits_3(self, mini_scenario, tmp_path,
                                         monkeypatch, capsys):
        def boom(cfg):
            raise InvariantError("broken internal state")

        monkeypatch.setattr("radarmot.cli.simulate", boom)
        code = main(["simulate", "--scenario", str(mini_scenario),
                     "--out", str(tmp_path)])
        assert code == EXIT_INVARIANT
        assert "internal error" in capsys.readouterr().err

    def test_unexpected_exception_exits_3(self, mini_scenario, tmp_path,
                                          monkeypatch, capsys):
        def boom(cfg):
            raise RuntimeError("surprise")

        monkeypatch.setattr("radarmot.cli.simulate", boom)
        code = main(["simulate", "--scenario", str(mini_scenario),
                     "--out", str(tmp_path)])
        assert code == EXIT_INVARIANT
        assert "RuntimeError" in capsys.readouterr().err

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["track"])
        assert excinfo.value.code == EXIT_CONFIG

    def test_log_env_var_sets_verbosity(self, mini_scenario, tmp_path,
                                        monkeypatch):
        monkeypatch.setenv("RADARMOT_LOG", "debug")
        main(["simulate", "--scenario", str(mini_scenario),
              "--out", str(tmp_path / "a")])
        assert logging.getLogger("radarmot").level == logging.DEBUG
        monkeypatch.setenv("RADARMOT_LOG", "not-a-level")
        main(["simulate", "--scenario", str(mini_scenario),
              "--out", str(tmp_path / "b")])
        assert logging.getLogger("radarmot").level == logging.WARNING


class TestConfigBuilders:
    def test_unknown_pot_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            pot_config_from_dict({"bogus": 1})

    def test_pot_meas_noise_scalar_expands(self):
        cfg = pot_config_from_dict({"meas_noise": 0.04})
        assert np.allclose(cfg.meas_noise, 0.04 * np.eye(2))
        cfg = pot_config_from_dict({"meas_noise": [[0.1, 0.0], [0.0, 0.2]]})
        assert np.allclose(cfg.meas_noise, np.diag([0.1, 0.2]))
        with pytest.raises(ConfigError):
            pot_config_from_dict({"meas_noise": [0.1, 0.2, 0.3]})

    def test_unknown_eot_key_rejected(self):
        with pytest.raises(ConfigError, match="mystery"):
            eot_config_from_dict({"mystery": 2})

    def test_clustering_settings_validated(self):
        with pytest.raises(ConfigError):
            clustering_config_from_dict({"settings": []})
        with pytest.raises(ConfigError, match="kmedoids"):
            clustering_config_from_dict(
                {"settings": [{"method": "kmedoids", "k": 3}]})
        cfg = clustering_config_from_dict(
            {"settings": [{"method": "dbscan", "eps": 1.0, "min_pts": 2},
                          {"method": "kmeans", "k": 3, "seed": 7}]})
        assert len(cfg.settings) == 2

    def test_bad_framework_rejected(self):
        with pytest.raises(ConfigError, match="framework"):
            pipeline_config_from_dict({"framework": "tbd-magic"})

    def test_class_config_overrides_base(self):
        merged = {
            "framework": "tbd-eot",
            "eot": {"gamma_eta": 1.5},
            "eot_class_configs": {"pedestrian": {"gamma_eta": 1.1}},
        }
        cfg = pipeline_config_from_dict(merged)
        assert cfg.eot.gamma_eta == 1.5
        assert cfg.eot_class_configs["pedestrian"].gamma_eta == 1.1
        assert cfg.eot_class_configs["pedestrian"].extent_tau == \
            cfg.eot.extent_tau

    def test_layered_override_applies(self):
        merged, cfg = load_layered_config(None, ["eot.murty_k=7"],
                                          framework="jdt-eot")
        assert merged["eot"]["murty_k"] == 7
        assert cfg.eot.murty_k == 7
        assert cfg.framework == "jdt-eot"

    def test_config_file_layer(self, tmp_path):
        override = tmp_path / "cfg.json"
        override.write_text(json.dumps({"eot": {"max_hypotheses": 4}}) + "\n",
                            encoding="utf-8")
        merged, cfg = load_layered_config(str(override), [])
        assert cfg.eot.max_hypotheses == 4

    def test_non_object_config_file_rejected(self, tmp_path):
        override = tmp_path / "cfg.json"
        override.write_text("[1, 2]\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_layered_config(str(override), [])
