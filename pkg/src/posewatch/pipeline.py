"""Manifest formats and stage wiring shared by the CLI and the test harness.

The windows manifest is binary-free: it references the track/annotation files
(with content hashes) plus per-window metadata, and window tensors are
rebuilt from the tracks on load. Rebuilt metadata is cross-checked against
the manifest so silent drift in any referenced file is caught even without
hash verification.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .artifacts import (
    input_records,
    read_json_artifact,
    verify_inputs,
    write_json_artifact,
)
from .core_types import AnnotationEpisode, ConfigError, read_annotations
from .synth import read_actor_map
from .tracking import read_tracks
from .windows import FoldPlan, WindowConfig, WindowSample, make_windows


@dataclass
class VideoSource:
    """One tracked video feeding window construction."""

    video_id: str
    fps: float
    tracks_path: Path
    actors_path: Path | None = None


def build_windows(
    sources: list[VideoSource],
    episodes: list[AnnotationEpisode],
    cfg: WindowConfig,
) -> tuple[list[WindowSample], dict]:
    """Window every source video with a shared configuration."""
    windows: list[WindowSample] = []
    dropped = {"no_tracks": 0, "horizon": 0}
    for src in sources:
        tracks = read_tracks(src.tracks_path)
        actor_intervals = None
        if src.actors_path is not None:
            actor_intervals = [
                (a.person, a.onset, a.offset) for a in read_actor_map(src.actors_path)
            ]
        video_cfg = WindowConfig(
            window_seconds=cfg.window_seconds,
            stride_frames=cfg.stride_frames,
            task=cfg.task,
            horizon_seconds=cfg.horizon_seconds,
            fps=src.fps,
            video_id=src.video_id,
            min_coverage=cfg.min_coverage,
        )
        build = make_windows(tracks, episodes, video_cfg, actor_intervals=actor_intervals)
        windows.extend(build.windows)
        dropped["no_tracks"] += build.dropped_no_tracks
        dropped["horizon"] += build.dropped_horizon
    return windows, dropped


def write_windows_manifest(
    path: str | Path,
    windows: list[WindowSample],
    dropped: dict,
    cfg: WindowConfig,
    sources: list[VideoSource],
    annotations_path: str | Path,
) -> None:
    path = Path(path)
    base = path.resolve().parent
    inputs: dict[str, str | Path] = {"annotations": annotations_path}
    videos = []
    for src in sources:
        inputs[f"tracks:{src.video_id}"] = src.tracks_path
        rec = {
            "video_id": src.video_id,
            "fps": src.fps,
            "tracks": _rel(src.tracks_path, base),
        }
        if src.actors_path is not None:
            inputs[f"actors:{src.video_id}"] = src.actors_path
            rec["actors"] = _rel(src.actors_path, base)
        videos.append(rec)
    payload = {
        "kind": "windows-manifest",
        "config": {
            "window_seconds": cfg.window_seconds,
            "stride_frames": cfg.stride_frames,
            "task": cfg.task,
            "horizon_seconds": cfg.horizon_seconds,
            "min_coverage": cfg.min_coverage,
        },
        "videos": videos,
        "windows": [
            {
                "video_id": w.video_id,
                "end_frame": w.end_frame,
                "label": w.label,
                "categories": sorted(c.value for c in w.categories),
                "track_ids": w.track_ids,
                "actor_track_id": w.actor_track_id,
            }
            for w in windows
        ],
        "dropped": dropped,
        "annotations": _rel(annotations_path, base),
        "inputs": input_records(path, inputs),
    }
    write_json_artifact(path, payload)


def _rel(p: str | Path, base: Path) -> str:
    return os.path.relpath(Path(p).resolve(), start=base)


def load_windows_manifest(
    path: str | Path, force: bool = False
) -> tuple[list[WindowSample], dict]:
    """Rebuild window tensors from a manifest's referenced files.

    Input hashes are verified (unless forced) and the rebuilt per-window
    metadata must match the manifest exactly.
    """
    path = Path(path)
    manifest = read_json_artifact(path)
    if manifest.get("kind") != "windows-manifest":
        raise ConfigError(f"{path} is not a windows manifest")
    verify_inputs(path, manifest.get("inputs", {}), force=force)
    base = path.resolve().parent
    episodes = read_annotations(base / manifest["annotations"])
    c = manifest["config"]
    cfg = WindowConfig(
        window_seconds=float(c["window_seconds"]),
        stride_frames=int(c["stride_frames"]),
        task=str(c["task"]),
        horizon_seconds=float(c["horizon_seconds"]),
        min_coverage=float(c.get("min_coverage", 0.25)),
    )
    sources = [
        VideoSource(
            video_id=str(v["video_id"]),
            fps=float(v["fps"]),
            tracks_path=base / v["tracks"],
            actors_path=(base / v["actors"]) if v.get("actors") else None,
        )
        for v in manifest["videos"]
    ]
    windows, _ = build_windows(sources, episodes, cfg)
    rows = manifest["windows"]
    if len(rows) != len(windows):
        raise ConfigError(
            f"{path}: rebuilt {len(windows)} windows but manifest lists {len(rows)}; "
            "inputs changed since the manifest was written"
        )
    for w, row in zip(windows, rows):
        same = (
            w.video_id == row["video_id"]
            and w.end_frame == int(row["end_frame"])
            and w.label == bool(row["label"])
            and sorted(c.value for c in w.categories) == list(row["categories"])
            and w.track_ids == list(row["track_ids"])
        )
        if not same:
            raise ConfigError(
                f"{path}: window {w.video_id}@{w.end_frame} no longer matches the manifest"
            )
    return windows, manifest


def write_fold_plan(path: str | Path, plan: FoldPlan, windows_manifest: str | Path) -> None:
    payload = plan.to_json()
    payload["kind"] = "fold-plan"
    payload["inputs"] = input_records(path, {"windows": windows_manifest})
    write_json_artifact(path, payload)


def load_fold_plan(path: str | Path, force: bool = False) -> FoldPlan:
    rec = read_json_artifact(path)
    if rec.get("kind") != "fold-plan":
        raise ConfigError(f"{path} is not a fold plan")
    verify_inputs(Path(path), rec.get("inputs", {}), force=force)
    return FoldPlan.from_json(rec)


def windows_by_video(windows: list[WindowSample]) -> list[list[WindowSample]]:
    """Group windows into per-video clips, preserving order."""
    clips: dict[str, list[WindowSample]] = {}
    for w in windows:
        clips.setdefault(w.video_id, []).append(w)
    return [clips[v] for v in sorted(clips)]
