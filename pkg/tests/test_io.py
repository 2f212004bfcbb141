"""Tests for the line-oriented file formats, config layering, and manifests."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radarmot.core import (
    Box3D,
    Detection,
    Frame,
    GroundTruthObject,
    RadarPoint,
    TrackRecord,
)
from radarmot.io import (
    ConfigError,
    InputError,
    InvariantError,
    IoError,
    RunManifest,
    config_sha256,
    deep_merge,
    discover_frame_files,
    layer_configs,
    load_json_file,
    make_manifest,
    parse_cli_override,
    read_frames,
    read_manifest,
    read_records,
    write_frames,
    write_manifest,
    write_records,
)


def make_box(cx=1.0, cy=2.0, yaw=0.3):
    return Box3D(cx=cx, cy=cy, cz=0.8, length=4.2, width=1.8, height=1.6,
                 yaw=yaw)


def make_frame(idx, seq_id="seq0"):
    return Frame(
        seq_id=seq_id,
        frame_idx=idx,
        timestamp=idx * 0.1,
        points=(RadarPoint(x=1.0 + idx, y=-2.0, z=0.5, vr=3.25, rcs=11.5),
                RadarPoint(x=0.5, y=4.0)),
        detections=(Detection(box=make_box(), class_label="car", score=0.9),),
        ground_truth=(GroundTruthObject(gt_id=7, box=make_box(cy=2.5),
                                        class_label="car"),),
        ego_info={"vx": 0.0},
    )


class TestFramesFormat:
    def test_round_trip(self, tmp_path):
        frames = [make_frame(i) for i in range(3)]
        path = tmp_path / "frames.jsonl"
        write_frames(path, frames)
        assert read_frames(path) == frames

    def test_write_is_byte_deterministic(self, tmp_path):
        frames = [make_frame(i) for i in range(3)]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_frames(p1, frames)
        write_frames(p2, list(reversed(frames)))
        assert p1.read_bytes() == p2.read_bytes()

    def test_rewrite_of_parsed_file_is_identical(self, tmp_path):
        frames = [make_frame(i) for i in range(2)]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_frames(p1, frames)
        write_frames(p2, read_frames(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_line_has_schema_fields(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        write_frames(path, [make_frame(0)])
        header = json.loads(path.read_text().splitlines()[0])
        assert header["schema"] == "radarmot/frames"
        assert header["schema_version"] == 1
        assert header["seq_id"] == "seq0"

    def test_empty_sequence_needs_explicit_seq_id(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        with pytest.raises(InputError):
            write_frames(path, [])
        write_frames(path, [], seq_id="empty")
        assert read_frames(path) == []

    def test_mixed_seq_ids_rejected(self, tmp_path):
        frames = [make_frame(0, "a"), make_frame(1, "b")]
        with pytest.raises(InputError):
            write_frames(tmp_path / "frames.jsonl", frames)

    def test_missing_file_error_names_path(self, tmp_path):
        missing = tmp_path / "nope" / "frames.jsonl"
        with pytest.raises(IoError, match="nope"):
            read_frames(missing)

    def test_wrong_schema_rejected(self, tmp_path):
        path = tmp_path / "records.jsonl"
        write_records(path, [], seq_id="s")
        with pytest.raises(InputError, match="schema"):
            read_frames(path)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        path.write_text(
            '{"kind":"header","schema":"radarmot/frames","schema_version":99,'
            '"seq_id":"s"}\n')
        with pytest.raises(InputError, match="schema_version"):
            read_frames(path)

    def test_invalid_json_line_reports_location(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        write_frames(path, [make_frame(0)])
        path.write_text(path.read_text() + "{broken\n")
        with pytest.raises(InputError, match=r"frames\.jsonl:3"):
            read_frames(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        path.write_text("")
        with pytest.raises(InputError, match="header"):
            read_frames(path)


class TestRecordsFormat:
    def test_round_trip_preserves_seq_id(self, tmp_path):
        records = [
            TrackRecord(track_id=3, frame_idx=0, box=make_box(),
                        class_label="car", existence=0.9),
            TrackRecord(track_id=1, frame_idx=1, box=make_box(cx=5.0),
                        class_label="pedestrian", existence=1.0),
        ]
        path = tmp_path / "records.jsonl"
        write_records(path, records, seq_id="run7")
        seq_id, back = read_records(path)
        assert seq_id == "run7"
        assert sorted(back, key=lambda r: r.track_id) == sorted(
            records, key=lambda r: r.track_id)

    def test_lines_sorted_by_frame_then_track(self, tmp_path):
        records = [
            TrackRecord(track_id=2, frame_idx=1, box=make_box(),
                        class_label="car", existence=0.9),
            TrackRecord(track_id=1, frame_idx=1, box=make_box(),
                        class_label="car", existence=0.9),
            TrackRecord(track_id=5, frame_idx=0, box=make_box(),
                        class_label="car", existence=0.9),
        ]
        path = tmp_path / "records.jsonl"
        write_records(path, records, seq_id="s")
        rows = [json.loads(ln) for ln in path.read_text().splitlines()[1:]]
        assert [(r["frame_idx"], r["track_id"]) for r in rows] == [
            (0, 5), (1, 1), (1, 2)]

    def test_duplicate_frame_track_pair_is_invariant_violation(self, tmp_path):
        rec = TrackRecord(track_id=1, frame_idx=4, box=make_box(),
                          class_label="car", existence=0.9)
        with pytest.raises(InvariantError):
            write_records(tmp_path / "r.jsonl", [rec, rec], seq_id="s")


@settings(max_examples=40, deadline=None)
@given(
    idx=st.integers(min_value=0, max_value=10_000),
    n_points=st.integers(min_value=0, max_value=5),
    coords=st.lists(
        st.floats(min_value=-100.0, max_value=100.0,
                  allow_nan=False, allow_infinity=False),
        min_size=10, max_size=10),
    score=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
)
def test_frames_round_trip_property(tmp_path_factory, idx, n_points, coords,
                                    score):
    points = tuple(
        RadarPoint(x=coords[i], y=coords[i + 1], vr=coords[i + 2])
        for i in range(n_points))
    frame = Frame(
        seq_id="prop",
        frame_idx=idx,
        timestamp=idx * 0.05,
        points=points,
        detections=(Detection(box=make_box(cx=coords[5], yaw=coords[6] / 50.0),
                              class_label="cyclist", score=score),),
        ground_truth=(),
    )
    path = tmp_path_factory.mktemp("prop") / "frames.jsonl"
    write_frames(path, [frame])
    assert read_frames(path) == [frame]


class TestDiscovery:
    def test_finds_sequence_subdirectories_sorted(self, tmp_path):
        for name in ("b", "a"):
            write_frames(tmp_path / name / "frames.jsonl",
                         [make_frame(0, name)])
        found = discover_frame_files(tmp_path)
        assert [p.parent.name for p in found] == ["a", "b"]

    def test_accepts_direct_frames_file(self, tmp_path):
        write_frames(tmp_path / "frames.jsonl", [make_frame(0)])
        assert len(discover_frame_files(tmp_path)) == 1

    def test_missing_directory(self, tmp_path):
        with pytest.raises(IoError, match="missing"):
            discover_frame_files(tmp_path / "missing")

    def test_directory_without_frames(self, tmp_path):
        with pytest.raises(IoError, match="frames.jsonl"):
            discover_frame_files(tmp_path)


class TestConfigLayering:
    def test_deep_merge_nested_override(self):
        base = {"eot": {"clutter_intensity": 0.005, "murty_k": 4}, "x": 1}
        override = {"eot": {"clutter_intensity": 0.01}}
        merged = deep_merge(base, override)
        assert merged == {"eot": {"clutter_intensity": 0.01, "murty_k": 4},
                          "x": 1}
        assert base["eot"]["clutter_intensity"] == 0.005

    def test_lists_replace_not_merge(self):
        merged = deep_merge({"grid": [1, 2, 3]}, {"grid": [9]})
        assert merged == {"grid": [9]}

    def test_layer_order_later_wins(self):
        merged = layer_configs({"a": 1}, {"a": 2, "b": 1}, None, {"b": 3})
        assert merged == {"a": 2, "b": 3}

    def test_parse_override_json_value(self):
        assert parse_cli_override("eot.clutter_intensity=0.01") == {
            "eot": {"clutter_intensity": 0.01}}

    def test_parse_override_string_fallback(self):
        assert parse_cli_override("framework=tbd-eot") == {
            "framework": "tbd-eot"}

    def test_parse_override_requires_equals(self):
        with pytest.raises(ConfigError):
            parse_cli_override("framework")

    def test_load_json_file_errors(self, tmp_path):
        with pytest.raises(IoError, match="absent.json"):
            load_json_file(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ConfigError, match="bad.json"):
            load_json_file(bad)


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = make_manifest(
            "simulate", {"seed": 5, "duration": 10},
            input_paths=[tmp_path / "scenario.json"], seed=5,
            wall_clock={"elapsed_s": 0.5})
        path = tmp_path / "manifest.json"
        write_manifest(path, manifest)
        back = read_manifest(path)
        assert back["command"] == "simulate"
        assert back["config"] == {"seed": 5, "duration": 10}
        assert back["config_sha256"] == config_sha256({"seed": 5,
                                                       "duration": 10})
        assert back["seed"] == 5
        assert back["schema"] == "radarmot/manifest"

    def test_config_hash_ignores_key_order(self):
        assert config_sha256({"a": 1, "b": 2}) == config_sha256({"b": 2,
                                                                 "a": 1})
        assert config_sha256({"a": 1}) != config_sha256({"a": 2})

    def test_non_manifest_rejected(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"schema": "something-else"}')
        with pytest.raises(InputError, match="manifest"):
            read_manifest(path)

    def test_manifest_is_dataclass_with_version(self):
        manifest = make_manifest("track", {})
        assert isinstance(manifest, RunManifest)
        assert manifest.version
        assert manifest.input_paths == ()


def test_simulated_sequence_round_trips(tmp_path):
    from radarmot.scenario import (DetectorSpec, ObjectSpec, ScenarioConfig,
                                   simulate)

    obj = ObjectSpec(class_label="car", birth_frame=0, death_frame=None,
                     position=np.array([5.0, -5.0]),
                     velocity=np.array([1.0, 0.0]),
                     extent=np.diag([1.1025, 0.2025]), rate=8.0)
    cfg = ScenarioConfig(name="rt", duration=10, frame_rate=10.0,
                         objects=(obj,), clutter_rate=5.0,
                         fov=(-60.0, 60.0, -60.0, 60.0),
                         detector=DetectorSpec(), seed=3)
    frames = simulate(cfg)
    path = tmp_path / "frames.jsonl"
    write_frames(path, frames)
    assert read_frames(path) == frames
