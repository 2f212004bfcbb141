"""Command-line interface.

Subcommands: simulate, track, evaluate, report, bench. Exit codes: 0 on
success, 1 for input errors (missing or malformed data), 2 for configuration
errors (including usage errors), 3 for internal invariant violations. The
environment variable RADARMOT_LOG (debug/info/warning/error) sets verbosity.

Configuration is layered: packaged defaults, then an optional --config file,
then --set key=value overrides; the merged result is recorded in the run
manifest together with its sha256.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .core import Box3D, Frame, TrackRecord
from .eot import EotConfig
from .io import (
    FRAMES_FILENAME,
    MANIFEST_FILENAME,
    ConfigError,
    InputError,
    InvariantError,
    discover_frame_files,
    layer_configs,
    load_json_file,
    make_manifest,
    parse_cli_override,
    read_frames,
    read_records,
    write_frames,
    write_manifest,
    write_records,
)
from .metrics import (
    MetricsConfig,
    clear_metrics,
    fps_benchmark,
    hota,
    match_frame,
    mota_sweep,
)
from .partitioning import ClusterSetting, ClusteringConfig
from .pipelines import (
    FRAMEWORKS,
    TRACKER_CLASSES,
    MissingDetectionsError,
    MissingPointsError,
    PipelineConfig,
    run_pipeline,
)
from .pot import PotConfig
from .scenario import (
    InvalidConfigError,
    ScenarioConfig,
    scenario_from_record,
    scenario_to_record,
    simulate,
)

LOG = logging.getLogger("radarmot")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

REPORT_SCHEMA = "radarmot/report"
HISTOGRAM_SCHEMA = "radarmot/histogram"
SWEEP_ALPHAS = (0.5, 0.6, 0.7, 0.8)


# --- configuration loading ---------------------------------------------------

def default_config_dict() -> dict[str, Any]:
    """The packaged defaults.json as a plain dict."""
    text = resources.files("radarmot").joinpath(
        "configs/defaults.json").read_text(encoding="utf-8")
    return json.loads(text)


def packaged_scenario_path(name: str) -> Path:
    """Path of a committed scenario preset, e.g. 'default' or 'roadside'."""
    return Path(str(resources.files("radarmot").joinpath(
        f"configs/scenarios/{name}.json")))


def _check_keys(section: dict[str, Any], allowed: set[str],
                name: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown {name} config keys {unknown}; allowed: {sorted(allowed)}")


_POT_SCALARS = {
    "survival_prob", "detection_prob", "clutter_intensity", "process_noise",
    "gate_threshold", "extract_threshold", "prune_threshold",
    "ppp_prune_threshold", "max_ppp_components", "recycle_pruned",
    "score_modulates_pd", "score_modulates_birth",
    "detection_prob_overrides", "clutter_overrides",
}

_EOT_SCALARS = {
    "survival_prob", "detection_prob", "clutter_intensity", "process_noise",
    "gamma_eta", "extent_tau", "meas_var", "birth_extent_from_cluster",
    "extent_floor", "gate_distance", "max_hypotheses", "murty_k",
    "hyp_prune_ratio", "extract_threshold", "prune_threshold",
    "ppp_prune_threshold", "max_ppp_components", "axis_scale", "nms_iou",
    "birth_class_label",
}


def pot_config_from_dict(section: dict[str, Any]) -> PotConfig:
    section = dict(section)
    meas = section.pop("meas_noise", None)
    _check_keys(section, _POT_SCALARS, "pot")
    cfg = PotConfig(**section)
    if meas is not None:
        arr = np.asarray(meas, dtype=float)
        if arr.ndim == 0:
            arr = np.eye(2) * float(arr)
        if arr.shape != (2, 2):
            raise ConfigError(
                "pot.meas_noise must be a scalar variance or a 2x2 matrix")
        cfg = dataclasses.replace(cfg, meas_noise=arr)
    return cfg


def eot_config_from_dict(section: dict[str, Any],
                         base: EotConfig | None = None) -> EotConfig:
    _check_keys(section, _EOT_SCALARS, "eot")
    return dataclasses.replace(base or EotConfig(), **section)


def clustering_config_from_dict(section: dict[str, Any]) -> ClusteringConfig:
    _check_keys(section, {"settings"}, "clustering")
    rows = section.get("settings")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("clustering.settings must be a nonempty list")
    settings = []
    for row in rows:
        _check_keys(row, {"method", "eps", "min_pts", "k", "seed"},
                    "clustering setting")
        method = row.get("method")
        if method == "dbscan":
            settings.append(ClusterSetting.for_dbscan(
                eps=float(row["eps"]), min_pts=int(row["min_pts"])))
        elif method == "kmeans":
            settings.append(ClusterSetting.for_kmeans(
                k=int(row["k"]), seed=int(row.get("seed", 0))))
        else:
            raise ConfigError(
                f"clustering method must be dbscan or kmeans, got {method!r}")
    return ClusteringConfig(settings=tuple(settings))


_PIPELINE_TOP = {
    "framework", "pot", "eot", "clustering", "score_thresholds",
    "default_score_threshold", "vr_prefilter", "vr_min", "nominal_dt",
    "gate_radius", "adaptive_gate", "adaptive_gate_margin",
    "eot_class_configs",
}


def pipeline_config_from_dict(merged: dict[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig from a layered JSON config dict."""
    _check_keys(merged, _PIPELINE_TOP, "pipeline")
    framework = merged.get("framework", "tbd-pot")
    if framework not in FRAMEWORKS:
        raise ConfigError(f"framework must be one of {sorted(FRAMEWORKS)}, "
                          f"got {framework!r}")
    eot_cfg = eot_config_from_dict(merged.get("eot", {}))
    class_sections = merged.get("eot_class_configs")
    class_cfgs = None
    if class_sections is not None:
        if not isinstance(class_sections, dict):
            raise ConfigError("eot_class_configs must map class label to "
                              "an eot config object")
        class_cfgs = {
            label: eot_config_from_dict(sub, base=eot_cfg)
            for label, sub in class_sections.items()
        }
    kwargs: dict[str, Any] = {
        "framework": framework,
        "eot": eot_cfg,
        "eot_class_configs": class_cfgs,
    }
    if "pot" in merged:
        kwargs["pot"] = pot_config_from_dict(merged["pot"])
    if "clustering" in merged:
        kwargs["clustering"] = clustering_config_from_dict(merged["clustering"])
    for key in ("score_thresholds", "default_score_threshold", "vr_prefilter",
                "vr_min", "nominal_dt", "gate_radius", "adaptive_gate",
                "adaptive_gate_margin"):
        if key in merged:
            kwargs[key] = merged[key]
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad pipeline config: {exc}") from exc


def load_layered_config(config_path: str | None,
                        overrides: Sequence[str],
                        framework: str | None = None) -> tuple[dict[str, Any],
                                                               PipelineConfig]:
    """defaults.json, then --config, then --set overrides, then --framework."""
    layers: list[dict[str, Any] | None] = [default_config_dict()]
    if config_path is not None:
        file_cfg = load_json_file(config_path)
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        layers.append(file_cfg)
    for text in overrides:
        layers.append(parse_cli_override(text))
    if framework is not None:
        layers.append({"framework": framework})
    merged = layer_configs(*layers)
    return merged, pipeline_config_from_dict(merged)


def load_scenario(path: str | Path) -> ScenarioConfig:
    record = load_json_file(path)
    if not isinstance(record, dict):
        raise ConfigError(f"{path}: scenario must be a JSON object")
    return scenario_from_record(record)


# --- evaluate helpers --------------------------------------------------------

def _frames_for_sequence(gt_dir: str, seq_id: str) -> list[Frame]:
    by_seq: dict[str, list[Frame]] = {}
    for path in discover_frame_files(gt_dir):
        frames = read_frames(path)
        if frames:
            by_seq[frames[0].seq_id] = frames
    if seq_id not in by_seq:
        raise InputError(
            f"no ground-truth sequence {seq_id!r} under {gt_dir} "
            f"(found: {sorted(by_seq)})")
    return by_seq[seq_id]


def _metric_row(label: str, records: Sequence[TrackRecord],
                frames: Sequence[Frame], cfg: MetricsConfig) -> dict[str, Any]:
    clear = clear_metrics(records, frames, cfg)
    hota_res = hota(records, frames, cfg)
    return {
        "class_label": label,
        "hota": hota_res.hota,
        "det_a": hota_res.det_a,
        "ass_a": hota_res.ass_a,
        "loc_a": hota_res.loc_a,
        "mota": clear.mota,
        "motp": clear.motp,
        "tp": clear.tp,
        "fn": clear.fn,
        "fp": clear.fp,
        "ids": clear.ids,
    }


def _filter_class(records: Sequence[TrackRecord], frames: Sequence[Frame],
                  label: str) -> tuple[list[TrackRecord], list[Frame]]:
    recs = [r for r in records if r.class_label == label]
    frs = [dataclasses.replace(
        f, ground_truth=tuple(g for g in f.ground_truth
                              if g.class_label == label))
        for f in frames]
    return recs, frs


def evaluation_report(records: Sequence[TrackRecord], frames: Sequence[Frame],
                      seq_id: str, class_agnostic: bool = False,
                      alpha_sweep: bool = False) -> dict[str, Any]:
    """Per-class metric rows in the published table layout, as a dict."""
    rows = []
    if class_agnostic:
        cfg = MetricsConfig(class_agnostic=True)
        rows.append(_metric_row("all", records, frames, cfg))
    else:
        labels = sorted({g.class_label for f in frames for g in f.ground_truth}
                        | {r.class_label for r in records})
        per_class = MetricsConfig(class_agnostic=True)
        for label in labels:
            recs, frs = _filter_class(records, frames, label)
            rows.append(_metric_row(label, recs, frs, per_class))
        rows.append(_metric_row("all", records, frames, MetricsConfig()))
    report: dict[str, Any] = {
        "schema": REPORT_SCHEMA,
        "schema_version": 1,
        "seq_id": seq_id,
        "class_agnostic": class_agnostic,
        "rows": rows,
    }
    if alpha_sweep:
        sweep_cfg = MetricsConfig(class_agnostic=class_agnostic)
        report["alpha_sweep"] = [
            {"alpha": a, "mota": m}
            for a, m in mota_sweep(records, frames, SWEEP_ALPHAS, sweep_cfg)
        ]
    return report


def _format_report_table(report: dict[str, Any]) -> str:
    header = ("class", "HOTA", "DetA", "AssA", "LocA", "MOTA", "MOTP",
              "TP", "FN", "FP", "IDS")
    lines = ["  ".join(f"{h:>10}" for h in header)]
    for row in report["rows"]:
        cells = [f"{row['class_label']:>10}"]
        for key in ("hota", "det_a", "ass_a", "loc_a", "mota", "motp"):
            cells.append(f"{row[key]:>10.4f}")
        for key in ("tp", "fn", "fp", "ids"):
            cells.append(f"{row[key]:>10d}")
        lines.append("  ".join(cells))
    if "alpha_sweep" in report:
        lines.append("")
        lines.append("  ".join(f"{h:>10}" for h in ("alpha", "MOTA")))
        for row in report["alpha_sweep"]:
            lines.append(f"{row['alpha']:>10.2f}  {row['mota']:>10.4f}")
    return "\n".join(lines)


# --- report helpers ----------------------------------------------------------

def tp_matched_boxes(records: Sequence[TrackRecord], frames: Sequence[Frame],
                     cfg: MetricsConfig) -> list[Box3D]:
    """Estimate boxes matched to ground truth, CLEAR-style at alpha_clear."""
    est_by_frame: dict[int, list[TrackRecord]] = {}
    for r in records:
        est_by_frame.setdefault(r.frame_idx, []).append(r)
    gt_by_frame = {f.frame_idx: list(f.ground_truth) for f in frames}
    last_match: dict[int, int] = {}
    boxes = []
    for k in sorted(set(est_by_frame) | set(gt_by_frame)):
        ests = est_by_frame.get(k, [])
        gts = gt_by_frame.get(k, [])
        m = match_frame(ests, gts, cfg.alpha_clear, cfg, last_match)
        for ei, gi, _ in m.pairs:
            boxes.append(ests[ei].box)
            last_match[gts[gi].gt_id] = ests[ei].track_id
    return boxes


def size_histogram(values: Sequence[float],
                   bin_width: float) -> dict[str, list[float]]:
    """Counts over contiguous bins aligned to multiples of bin_width."""
    if bin_width <= 0.0:
        raise ConfigError(f"bin width must be positive, got {bin_width}")
    if not values:
        return {"edges": [0.0, bin_width], "counts": [0]}
    lo, hi = min(values), max(values)
    start = math.floor(lo / bin_width + 1e-12) * bin_width
    n_bins = max(1, math.ceil((hi - start) / bin_width - 1e-12))
    edges = [start + i * bin_width for i in range(n_bins + 1)]
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=edges)
    if int(counts.sum()) != len(values):
        raise InvariantError(
            f"histogram lost mass: {int(counts.sum())} != {len(values)}")
    return {"edges": edges, "counts": [int(c) for c in counts]}


# --- commands ----------------------------------------------------------------

def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    t0 = time.perf_counter()
    frames = simulate(cfg)
    elapsed = time.perf_counter() - t0
    out_dir = Path(args.out) / cfg.name
    write_frames(out_dir / FRAMES_FILENAME, frames, seq_id=cfg.name)
    manifest = make_manifest(
        "simulate", scenario_to_record(cfg), input_paths=[args.scenario],
        seed=cfg.seed, wall_clock={"elapsed_s": elapsed})
    write_manifest(out_dir / MANIFEST_FILENAME, manifest)
    LOG.info("simulated %d frames in %.3f s", len(frames), elapsed)
    print(f"wrote {out_dir / FRAMES_FILENAME} ({len(frames)} frames)")
    return EXIT_OK


def _cmd_track(args: argparse.Namespace) -> int:
    merged, pcfg = load_layered_config(args.config, args.set or [],
                                       args.framework)
    frame_files = discover_frame_files(args.input)
    out = Path(args.out)
    multi = len(frame_files) > 1
    out_paths = []
    wall: dict[str, float] = {}
    for path in frame_files:
        frames = read_frames(path)
        seq_id = frames[0].seq_id if frames else path.parent.name
        if (pcfg.framework == "jdt-eot" and frames
                and all(not f.points for f in frames)):
            # The library accepts an all-empty point cloud, but a frames
            # file without a single radar point is the wrong input for a
            # point-driven pipeline.
            raise MissingPointsError(
                f"{path}: jdt-eot needs radar points, but no frame carries any")
        t0 = time.perf_counter()
        records = run_pipeline(frames, pcfg)
        wall[f"track_s.{seq_id}"] = time.perf_counter() - t0
        rec_path = out / f"{seq_id}.records.jsonl" if multi else out
        write_records(rec_path, records, seq_id=seq_id)
        out_paths.append(rec_path)
        n_tracks = len({r.track_id for r in records})
        LOG.info("%s: %d records, %d tracks", seq_id, len(records), n_tracks)
        print(f"wrote {rec_path} ({len(records)} records, {n_tracks} tracks)")
    manifest = make_manifest(
        "track", merged,
        input_paths=[args.input] + ([args.config] if args.config else []),
        wall_clock=wall)
    manifest_path = (out / MANIFEST_FILENAME if multi
                     else out.with_name(out.name + ".manifest.json"))
    write_manifest(manifest_path, manifest)
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    seq_id, records = read_records(args.pred)
    frames = _frames_for_sequence(args.gt, seq_id)
    report = evaluation_report(records, frames, seq_id,
                               class_agnostic=args.class_agnostic,
                               alpha_sweep=args.alpha_sweep)
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    print(_format_report_table(report))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    seq_id, records = read_records(args.pred)
    frames = _frames_for_sequence(args.gt, seq_id)
    boxes = tp_matched_boxes(records, frames, MetricsConfig())
    body = {
        "schema": HISTOGRAM_SCHEMA,
        "schema_version": 1,
        "seq_id": seq_id,
        "statistic": args.histogram,
        "bin_width": args.bin_width,
        "tp_count": len(boxes),
        "length": size_histogram([b.length for b in boxes], args.bin_width),
        "width": size_histogram([b.width for b in boxes], args.bin_width),
    }
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    for dim in ("length", "width"):
        hist = body[dim]
        print(f"{dim} histogram (bin {args.bin_width} m, {len(boxes)} TP):")
        for i, count in enumerate(hist["counts"]):
            lo, hi = hist["edges"][i], hist["edges"][i + 1]
            print(f"  [{lo:6.2f}, {hi:6.2f})  {count}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    merged, pcfg = load_layered_config(args.config, args.set or [],
                                       args.framework)
    frame_files = discover_frame_files(args.input)
    frames = read_frames(frame_files[0])
    if len(frame_files) > 1:
        LOG.info("bench uses the first of %d sequences", len(frame_files))
    if not frames:
        raise InputError(f"{frame_files[0]}: no frames to benchmark")
    tracker_cls = TRACKER_CLASSES[pcfg.framework]
    result = fps_benchmark(lambda: tracker_cls(pcfg), frames,
                           repetitions=args.repeat)
    lat = np.asarray(result.latencies)
    body = {
        "framework": pcfg.framework,
        "fps": result.fps,
        "latency_mean_s": float(lat.mean()),
        "latency_p50_s": float(np.percentile(lat, 50)),
        "latency_p95_s": float(np.percentile(lat, 95)),
        "frame_count": result.frame_count,
        "repetitions": result.repetitions,
    }
    print(f"{pcfg.framework}: {result.fps:.1f} fps over "
          f"{result.frame_count} frames x {result.repetitions} repetitions "
          f"(median latency {body['latency_p50_s'] * 1e3:.2f} ms, "
          f"p95 {body['latency_p95_s'] * 1e3:.2f} ms)")
    print(json.dumps(body, sort_keys=True))
    return EXIT_OK


# --- parser and entry point --------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarmot",
        description="Radar multi-object tracking toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic sequence")
    p_sim.add_argument("--scenario", required=True,
                       help="scenario JSON file")
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_track = sub.add_parser("track", help="run a tracking pipeline")
    p_track.add_argument("--framework", choices=sorted(FRAMEWORKS),
                         default=None)
    p_track.add_argument("--input", required=True,
                         help="directory with simulate output")
    p_track.add_argument("--config", default=None,
                         help="JSON config overriding packaged defaults")
    p_track.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="config override, e.g. eot.murty_k=8")
    p_track.add_argument("--out", required=True,
                         help="records file (directory when the input "
                              "holds several sequences)")
    p_track.set_defaults(func=_cmd_track)

    p_eval = sub.add_parser("evaluate", help="CLEAR and HOTA metrics")
    p_eval.add_argument("--gt", required=True,
                        help="directory with ground-truth frames")
    p_eval.add_argument("--pred", required=True, help="records file")
    p_eval.add_argument("--class-agnostic", action="store_true")
    p_eval.add_argument("--alpha-sweep", action="store_true",
                        help="also report MOTA at alpha 0.5/0.6/0.7/0.8")
    p_eval.add_argument("--report", required=True, help="output JSON file")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_rep = sub.add_parser("report", help="histograms over TP-matched boxes")
    p_rep.add_argument("--pred", required=True, help="records file")
    p_rep.add_argument("--gt", required=True,
                       help="directory with ground-truth frames")
    p_rep.add_argument("--histogram", choices=("extent-size",),
                       required=True)
    p_rep.add_argument("--bin-width", type=float, default=0.25)
    p_rep.add_argument("--out", required=True, help="output JSON file")
    p_rep.set_defaults(func=_cmd_report)

    p_bench = sub.add_parser("bench", help="throughput benchmark")
    p_bench.add_argument("--framework", choices=sorted(FRAMEWORKS),
                         required=True)
    p_bench.add_argument("--input", required=True,
                         help="directory with simulate output")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_bench.add_argument("--repeat", type=int, default=5)
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("RADARMOT_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s")
    LOG.setLevel(level)


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MissingDetectionsError, MissingPointsError, InputError) as exc:
        LOG.debug("input error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, InvalidConfigError) as exc:
        LOG.debug("config error", exc_info=True)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        LOG.debug("invariant violation", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except Exception as exc:  # internal bug: report as invariant violation
        LOG.exception("unexpected failure")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
