"""File formats, layered configuration, and run manifests.

All persistent data is line-oriented JSON (one object per line, UTF-8):

- frames file: header line, then one line per frame. Units: meters,
  seconds, radians, m/s, dBsm. See ``configs/format_schema.json`` for the
  field-by-field description.
- records file: header line, then one line per track record.
- manifest: a single JSON object describing one command invocation.

Every format carries ``schema`` and ``schema_version`` fields. Writers emit
keys in sorted order with compact separators, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__
from .core import (
    Frame,
    TrackRecord,
    frame_from_record,
    frame_to_record,
    track_record_from_record,
    track_record_to_record,
)

FRAMES_SCHEMA = "radarmot/frames"
RECORDS_SCHEMA = "radarmot/records"
MANIFEST_SCHEMA = "radarmot/manifest"
SCHEMA_VERSION = 1

FRAMES_FILENAME = "frames.jsonl"
MANIFEST_FILENAME = "manifest.json"


class InputError(Exception):
    """Bad or missing input data. Maps to exit code 1."""


class IoError(InputError):
    """File-level failure; the message always names the path."""


class ConfigError(Exception):
    """Invalid or contradictory configuration. Maps to exit code 2."""


class InvariantError(Exception):
    """Internal invariant violation. Maps to exit code 3."""


def dump_line(obj: Any) -> str:
    """Serialize one object to a canonical single-line JSON string."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)


def _parse_line(line: str, path: Path, lineno: int) -> Any:
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def _check_header(header: Any, schema: str, path: Path) -> dict[str, Any]:
    if not isinstance(header, dict) or header.get("kind") != "header":
        raise InputError(f"{path}: first line must be a header object")
    if header.get("schema") != schema:
        raise InputError(
            f"{path}: expected schema {schema!r}, got {header.get('schema')!r}")
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(
            f"{path}: unsupported schema_version {version!r} "
            f"(supported: {SCHEMA_VERSION})")
    return header


def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IoError(f"file not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return [ln for ln in text.splitlines() if ln.strip()]


def write_frames(path: str | Path, frames: Sequence[Frame],
                 seq_id: str | None = None) -> None:
    """Write one sequence of frames as a header plus one line per frame."""
    path = Path(path)
    seq_ids = {f.seq_id for f in frames}
    if seq_id is None:
        if len(seq_ids) != 1:
            raise InputError(
                f"cannot infer seq_id for {path}: frames carry {sorted(seq_ids)}")
        seq_id = next(iter(seq_ids))
    elif seq_ids - {seq_id}:
        raise InputError(
            f"frames for {sorted(seq_ids)} do not belong to sequence {seq_id!r}")
    header = {"kind": "header", "schema": FRAMES_SCHEMA,
              "schema_version": SCHEMA_VERSION, "seq_id": seq_id}
    lines = [dump_line(header)]
    for frame in sorted(frames, key=lambda f: f.frame_idx):
        rec = frame_to_record(frame)
        rec["kind"] = "frame"
        lines.append(dump_line(rec))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_frames(path: str | Path) -> list[Frame]:
    """Read a frames file written by write_frames."""
    path = Path(path)
    lines = _read_lines(path)
    if not lines:
        raise InputError(f"{path}: empty frames file (missing header)")
    header = _check_header(_parse_line(lines[0], path, 1), FRAMES_SCHEMA, path)
    seq_id = str(header.get("seq_id", ""))
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        rec = _parse_line(line, path, lineno)
        if rec.get("kind") != "frame":
            raise InputError(f"{path}:{lineno}: expected a frame line")
        try:
            frames.append(frame_from_record(rec, seq_id))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: bad frame record: {exc}") from exc
    return frames


def write_records(path: str | Path, records: Sequence[TrackRecord],
                  seq_id: str) -> None:
    """Write tracker output as a header plus one line per track record."""
    path = Path(path)
    seen: set[tuple[int, int]] = set()
    for rec in records:
        key = (rec.frame_idx, rec.track_id)
        if key in seen:
            raise InvariantError(
                f"duplicate track record for frame {key[0]} track {key[1]}")
        seen.add(key)
    header = {"kind": "header", "schema": RECORDS_SCHEMA,
              "schema_version": SCHEMA_VERSION, "seq_id": seq_id}
    lines = [dump_line(header)]
    for rec in sorted(records, key=lambda r: (r.frame_idx, r.track_id)):
        row = track_record_to_record(rec)
        row["kind"] = "record"
        lines.append(dump_line(row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_records(path: str | Path) -> tuple[str, list[TrackRecord]]:
    """Read a records file; returns (seq_id, records)."""
    path = Path(path)
    lines = _read_lines(path)
    if not lines:
        raise InputError(f"{path}: empty records file (missing header)")
    header = _check_header(_parse_line(lines[0], path, 1), RECORDS_SCHEMA, path)
    seq_id = str(header.get("seq_id", ""))
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        rec = _parse_line(line, path, lineno)
        if rec.get("kind") != "record":
            raise InputError(f"{path}:{lineno}: expected a record line")
        try:
            records.append(track_record_from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: bad track record: {exc}") from exc
    return seq_id, records


def discover_frame_files(input_dir: str | Path) -> list[Path]:
    """Find frames files under a directory, one per sequence subdirectory.

    Accepts either a directory of sequence subdirectories (each holding a
    frames.jsonl) or a directory holding a single frames.jsonl directly.
    """
    root = Path(input_dir)
    if not root.is_dir():
        raise IoError(f"input directory not found: {root}")
    direct = root / FRAMES_FILENAME
    found = [direct] if direct.is_file() else []
    found.extend(sorted(p / FRAMES_FILENAME for p in root.iterdir()
                        if p.is_dir() and (p / FRAMES_FILENAME).is_file()))
    if not found:
        raise IoError(f"no {FRAMES_FILENAME} found under {root}")
    return found


# --- layered configuration -------------------------------------------------

def load_json_file(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IoError(f"file not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursively merge override into base; override wins, lists replace."""
    merged = dict(base)
    for key, value in override.items():
        if (key in merged and isinstance(merged[key], dict)
                and isinstance(value, dict)):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_cli_override(text: str) -> dict[str, Any]:
    """Parse one ``dotted.key=value`` override into a nested dict.

    The value is parsed as JSON when possible, else kept as a string, so
    ``eot.clutter_intensity=0.01`` and ``framework=tbd-eot`` both work.
    """
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict[str, Any] = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return out


def layer_configs(*layers: dict[str, Any] | None) -> dict[str, Any]:
    """Merge config layers left to right; later layers win."""
    merged: dict[str, Any] = {}
    for layer in layers:
        if layer is None:
            continue
        if not isinstance(layer, dict):
            raise ConfigError(f"config layer must be an object, got {type(layer)}")
        merged = deep_merge(merged, layer)
    return merged


# --- run manifests ----------------------------------------------------------

def config_sha256(config: dict[str, Any]) -> str:
    """Hash of the canonical JSON serialization of a config."""
    return hashlib.sha256(dump_line(config).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Record of one command invocation, written next to its outputs."""

    command: str
    config: dict[str, Any]
    config_sha256: str
    input_paths: tuple[str, ...]
    seed: int | None
    version: str
    wall_clock: dict[str, float]


def make_manifest(command: str, config: dict[str, Any],
                  input_paths: Iterable[str | Path] = (),
                  seed: int | None = None,
                  wall_clock: dict[str, float] | None = None) -> RunManifest:
    return RunManifest(
        command=command,
        config=config,
        config_sha256=config_sha256(config),
        input_paths=tuple(str(p) for p in input_paths),
        seed=seed,
        version=__version__,
        wall_clock=dict(wall_clock or {}),
    )


def write_manifest(path: str | Path, manifest: RunManifest) -> None:
    path = Path(path)
    body = {"kind": "manifest", "schema": MANIFEST_SCHEMA,
            "schema_version": SCHEMA_VERSION}
    body.update(asdict(manifest))
    body["input_paths"] = list(manifest.input_paths)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, sort_keys=True, indent=2,
                               ensure_ascii=False) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict[str, Any]:
    body = load_json_file(path)
    if not isinstance(body, dict) or body.get("schema") != MANIFEST_SCHEMA:
        raise InputError(f"{path}: not a run manifest")
    if body.get("schema_version") != SCHEMA_VERSION:
        raise InputError(
            f"{path}: unsupported schema_version {body.get('schema_version')!r}")
    return body
