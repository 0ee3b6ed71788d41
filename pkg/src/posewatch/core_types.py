"""Shared domain types, keypoint conventions, and pose/annotation file formats.

Pose streams are JSON-lines, one frame per line::

    {"frame": 0, "skeletons": [{"id": 0, "joints": [[x, y, valid01], ... 17]}]}

Annotations are CSV with header ``video_id,onset_frame,offset_frame,category,
subject_id`` (inclusive frame bounds, ``subject_id`` may be empty). A stream
metadata sidecar ``{"video_id": ..., "fps": ...}`` carries the frame rate;
fps defaults to 30 when absent.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

JOINT_COUNT = 17

# Fixed 17-point COCO keypoint order; index 11/12 are the hips used for
# centering.
COCO_KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

LEFT_HIP = 11
RIGHT_HIP = 12

# Stick-figure edges over COCO indices, used by the SVG exporter.
COCO_SKELETON_EDGES = (
    (0, 1), (0, 2), (1, 3), (2, 4),
    (0, 5), (0, 6), (5, 6),
    (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
)


class FormatError(ValueError):
    """A pose-stream or annotation file violates the documented format."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class BehaviorCategory(Enum):
    """The six annotated target-behavior categories."""

    RESTRICTED_REPETITIVE = "restricted_repetitive"
    SELF_INJURIOUS = "self_injurious"
    DISRUPTIVE = "disruptive"
    AGGRESSIVE = "aggressive"
    ELOPEMENT = "elopement"
    OUT_OF_SEAT = "out_of_seat"

    @classmethod
    def parse(cls, name: str) -> "BehaviorCategory":
        """Case-insensitive parse of a canonical snake_case category name."""
        key = name.strip().lower()
        for cat in cls:
            if cat.value == key:
                return cat
        valid = ", ".join(c.value for c in cls)
        raise FormatError(f"unknown behavior category {name!r}; valid names: {valid}")


@dataclass(frozen=True)
class Keypoint:
    """One 2-D body keypoint; invalid keypoints sit exactly at (0, 0)."""

    x: float
    y: float
    valid: bool


@dataclass
class Skeleton:
    """One detected 17-keypoint skeleton within a frame.

    ``coords`` is (17, 2) float64 and ``valid`` is a (17,) bool mask. Invalid
    joints are zeroed at construction so sentinel coordinates can never leak
    into distance computations. Instances are immutable after construction.
    """

    coords: np.ndarray
    valid: np.ndarray
    detection_id: int

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.coords.shape != (JOINT_COUNT, 2):
            raise FormatError(f"skeleton must have {JOINT_COUNT} joints, got shape {self.coords.shape}")
        if self.valid.shape != (JOINT_COUNT,):
            raise FormatError(f"validity mask must have shape ({JOINT_COUNT},), got {self.valid.shape}")
        if int(self.valid.sum()) < 2:
            raise FormatError("degenerate skeleton: fewer than 2 valid joints")
        self.coords = np.where(self.valid[:, None], self.coords, 0.0)
        self.coords.setflags(write=False)
        self.valid.setflags(write=False)

    def keypoints(self) -> list[Keypoint]:
        return [
            Keypoint(float(x), float(y), bool(v))
            for (x, y), v in zip(self.coords, self.valid)
        ]


@dataclass
class PoseFrame:
    """All skeletons detected in one video frame."""

    frame_index: int
    skeletons: list[Skeleton] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise FormatError(f"frame_index must be >= 0, got {self.frame_index}")
        ids = [s.detection_id for s in self.skeletons]
        if len(ids) != len(set(ids)):
            raise FormatError(f"duplicate detection ids in frame {self.frame_index}")


@dataclass(frozen=True)
class AnnotationEpisode:
    """One annotated behavior episode with inclusive frame bounds."""

    video_id: str
    onset_frame: int
    offset_frame: int
    category: BehaviorCategory
    subject_id: str | None = None

    def __post_init__(self) -> None:
        if self.onset_frame > self.offset_frame:
            raise FormatError(
                f"episode onset {self.onset_frame} > offset {self.offset_frame}"
            )

    def covers(self, frame_index: int) -> bool:
        return self.onset_frame <= frame_index <= self.offset_frame


@dataclass(frozen=True)
class StreamMeta:
    """Stream metadata sidecar; fps defaults to 30 when the file omits it."""

    video_id: str
    fps: float = 30.0


def _skeleton_from_record(rec: dict, line_no: int) -> Skeleton:
    joints = rec.get("joints")
    if not isinstance(joints, list) or len(joints) != JOINT_COUNT:
        n = len(joints) if isinstance(joints, list) else "missing"
        raise FormatError(f"line {line_no}: skeleton has {n} joints, expected {JOINT_COUNT}")
    coords = np.zeros((JOINT_COUNT, 2))
    valid = np.zeros(JOINT_COUNT, dtype=bool)
    for j, entry in enumerate(joints):
        if not isinstance(entry, list) or len(entry) != 3:
            raise FormatError(f"line {line_no}: joint {j} must be [x, y, valid01]")
        x, y, v = entry
        if v not in (0, 1):
            raise FormatError(f"line {line_no}: joint {j} validity flag must be 0 or 1, got {v!r}")
        coords[j] = (float(x), float(y))
        valid[j] = bool(v)
    try:
        return Skeleton(coords=coords, valid=valid, detection_id=int(rec["id"]))
    except (KeyError, FormatError) as exc:
        raise FormatError(f"line {line_no}: {exc}") from exc


def read_pose_stream(path: str | Path) -> list[PoseFrame]:
    """Read a JSON-lines pose stream, sorted by frame index.

    Raises FormatError naming the offending line on malformed records,
    duplicate frame indices, or degenerate skeletons.
    """
    frames: list[PoseFrame] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "frame" not in rec:
                raise FormatError(f"line {line_no}: frame record must be an object with a 'frame' key")
            idx = rec["frame"]
            if not isinstance(idx, int) or idx < 0:
                raise FormatError(f"line {line_no}: frame index must be a nonnegative integer, got {idx!r}")
            if idx in seen:
                raise FormatError(f"line {line_no}: duplicate frame_index {idx}")
            seen.add(idx)
            skels = [_skeleton_from_record(s, line_no) for s in rec.get("skeletons", [])]
            try:
                frames.append(PoseFrame(frame_index=idx, skeletons=skels))
            except FormatError as exc:
                raise FormatError(f"line {line_no}: {exc}") from exc
    frames.sort(key=lambda f: f.frame_index)
    return frames


def write_pose_stream(frames: list[PoseFrame], path: str | Path) -> None:
    """Write frames as JSON-lines; inverse of read_pose_stream."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame in sorted(frames, key=lambda f: f.frame_index):
            rec = {
                "frame": frame.frame_index,
                "skeletons": [
                    {
                        "id": s.detection_id,
                        "joints": [
                            [float(x), float(y), int(v)]
                            for (x, y), v in zip(s.coords, s.valid)
                        ],
                    }
                    for s in frame.skeletons
                ],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


ANNOTATION_HEADER = ["video_id", "onset_frame", "offset_frame", "category", "subject_id"]


def read_annotations(path: str | Path) -> list[AnnotationEpisode]:
    """Read behavior episodes from CSV; errors carry the 1-based row number."""
    episodes: list[AnnotationEpisode] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("annotation file is empty (missing header)") from None
        if [h.strip() for h in header] != ANNOTATION_HEADER:
            raise FormatError(
                f"annotation header must be {','.join(ANNOTATION_HEADER)}, got {','.join(header)}"
            )
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                raise FormatError(f"row {row_no}: expected 5 columns, got {len(row)}")
            video_id, onset_s, offset_s, category_s, subject = (cell.strip() for cell in row)
            try:
                onset, offset = int(onset_s), int(offset_s)
            except ValueError:
                raise FormatError(f"row {row_no}: onset/offset must be integers") from None
            try:
                episode = AnnotationEpisode(
                    video_id=video_id,
                    onset_frame=onset,
                    offset_frame=offset,
                    category=BehaviorCategory.parse(category_s),
                    subject_id=subject or None,
                )
            except FormatError as exc:
                raise FormatError(f"row {row_no}: {exc}") from exc
            episodes.append(episode)
    return episodes


def write_annotations(episodes: list[AnnotationEpisode], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for ep in episodes:
            writer.writerow(
                [ep.video_id, ep.onset_frame, ep.offset_frame, ep.category.value, ep.subject_id or ""]
            )


def frame_label(
    frame_index: int, episodes: list[AnnotationEpisode]
) -> tuple[bool, set[BehaviorCategory]]:
    """Whether a frame lies inside any episode, and the covering categories."""
    categories = {ep.category for ep in episodes if ep.covers(frame_index)}
    return bool(categories), categories


def read_stream_metadata(path: str | Path) -> StreamMeta:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    if "video_id" not in rec:
        raise FormatError("stream metadata must carry a video_id")
    return StreamMeta(video_id=str(rec["video_id"]), fps=float(rec.get("fps", 30.0)))


def write_stream_metadata(meta: StreamMeta, path: str | Path, extra: dict | None = None) -> None:
    rec = {"video_id": meta.video_id, "fps": meta.fps}
    if extra:
        rec.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, sort_keys=True, indent=2)
        fh.write("\n")
