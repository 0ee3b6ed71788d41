"""Labeled fixed-length window samples and adjacency-aware CV fold plans.

A window covers T = round(window_seconds * fps) consecutive frames and is
labeled by its last frame (detection) or by the frame one horizon past its
last frame (prediction). Fold planning groups windows into per-video blocks
such that any two windows closer than T frames share a block, which makes
every block-level split free of adjacent-window leakage by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_types import AnnotationEpisode, BehaviorCategory, ConfigError, JOINT_COUNT, frame_label
from .tracking import NormalizedTrack, Track, normalize_track

TASK_DETECT = "detect"
TASK_PREDICT = "predict"


@dataclass(frozen=True)
class WindowConfig:
    """Window construction settings; defaults follow the 4 s / 30 Hz protocol."""

    window_seconds: float = 4.0
    stride_frames: int = 30
    task: str = TASK_DETECT
    horizon_seconds: float = 180.0
    fps: float = 30.0
    video_id: str = ""
    min_coverage: float = 0.25

    def frames_per_window(self) -> int:
        t = round(self.window_seconds * self.fps)
        if t < 2:
            raise ConfigError(
                f"window of {self.window_seconds} s at {self.fps} fps is {t} frames; need >= 2"
            )
        return t

    def horizon_frames(self) -> int:
        return round(self.horizon_seconds * self.fps)


@dataclass
class WindowSample:
    """One multi-person normalized pose window with its label."""

    video_id: str
    end_frame: int
    persons: np.ndarray        # (K, T, 17, 2) hip-centered, window-scaled
    presence_mask: np.ndarray  # (K, T) bool: frames each track actually covers
    joint_valid: np.ndarray    # (K, T, 17) bool
    track_ids: list[int]
    label: bool
    categories: set[BehaviorCategory]
    actor_track_id: int | None = None

    @property
    def person_count(self) -> int:
        return self.persons.shape[0]

    @property
    def frames(self) -> int:
        return self.persons.shape[1]


@dataclass
class WindowBuild:
    """make_windows output: the windows plus drop accounting."""

    windows: list[WindowSample]
    dropped_no_tracks: int = 0
    dropped_horizon: int = 0


def _majority_person(track: Track) -> int:
    ids = track.detection_ids()
    return max(set(ids), key=ids.count)


def make_windows(
    tracks: list[Track],
    episodes: list[AnnotationEpisode],
    cfg: WindowConfig,
    actor_intervals: list[tuple[int, int, int]] | None = None,
    stream_end_frame: int | None = None,
) -> WindowBuild:
    """Slide labeled windows over the tracked stream.

    Tracks covering at least ``min_coverage`` of a window's frames enter it
    (edge-hold padded elsewhere). Prediction windows whose target frame lies
    beyond the stream are dropped rather than labeled negative.
    ``actor_intervals`` is optional synthetic ground truth: (person, onset,
    offset) triples identifying who performs each planted episode.
    """
    if cfg.task not in (TASK_DETECT, TASK_PREDICT):
        raise ConfigError(f"unknown task {cfg.task!r}; expected detect or predict")
    if cfg.stride_frames < 1:
        raise ConfigError(f"stride_frames must be >= 1, got {cfg.stride_frames}")
    t_frames = cfg.frames_per_window()
    build = WindowBuild(windows=[])
    if not tracks:
        return build
    eps = [e for e in episodes if not cfg.video_id or e.video_id == cfg.video_id]
    stream_start = min(t.start_frame for t in tracks)
    stream_end = max(t.end_frame for t in tracks)
    if stream_end_frame is not None:
        stream_end = max(stream_end, int(stream_end_frame))
    min_frames = math.ceil(cfg.min_coverage * t_frames)
    horizon = cfg.horizon_frames()
    person_of = {t.track_id: _majority_person(t) for t in tracks} if actor_intervals else {}

    for end in range(stream_start + t_frames - 1, stream_end + 1, cfg.stride_frames):
        span = (end - t_frames + 1, end)
        qualifying = [
            t
            for t in sorted(tracks, key=lambda t: t.track_id)
            if min(t.end_frame, span[1]) - max(t.start_frame, span[0]) + 1 >= min_frames
        ]
        if not qualifying:
            build.dropped_no_tracks += 1
            continue
        if cfg.task == TASK_PREDICT:
            target = end + horizon
            if target > stream_end:
                build.dropped_horizon += 1
                continue
        else:
            target = end
        label, categories = frame_label(target, eps)

        normalized: list[NormalizedTrack] = [normalize_track(t, span) for t in qualifying]
        persons = np.stack([n.coords for n in normalized])
        presence = np.stack([n.present for n in normalized])
        joint_valid = np.stack([n.valid_mask for n in normalized])

        actor_track_id = None
        if actor_intervals and label:
            actors = {p for (p, on, off) in actor_intervals if on <= target <= off}
            candidate_tracks = [t.track_id for t in qualifying if person_of[t.track_id] in actors]
            if len(actors) == 1 and len(candidate_tracks) == 1:
                actor_track_id = candidate_tracks[0]

        build.windows.append(
            WindowSample(
                video_id=cfg.video_id,
                end_frame=end,
                persons=persons,
                presence_mask=presence,
                joint_valid=joint_valid,
                track_ids=[t.track_id for t in qualifying],
                label=label,
                categories=categories,
                actor_track_id=actor_track_id,
            )
        )
    return build


ROLE_TRAIN = "train"
ROLE_VAL = "val"
ROLE_TEST = "test"

# Fractions of windows dealt to train/val/test within every fold.
SPLIT_FRACTIONS = (0.5, 0.2, 0.3)


@dataclass
class FoldSplit:
    train: list[int]
    val: list[int]
    test: list[int]


@dataclass
class FoldPlan:
    """Per-fold split roles for every window, leakage-free by construction."""

    fold_count: int
    seed: int
    window_frames: int
    window_keys: list[tuple[str, int]]   # (video_id, end_frame) per window
    roles: list[list[str]]               # roles[fold][window] in {train,val,test}
    block_count: int = 0

    def split(self, fold: int) -> FoldSplit:
        r = self.roles[fold]
        return FoldSplit(
            train=[i for i, role in enumerate(r) if role == ROLE_TRAIN],
            val=[i for i, role in enumerate(r) if role == ROLE_VAL],
            test=[i for i, role in enumerate(r) if role == ROLE_TEST],
        )

    def to_json(self) -> dict:
        return {
            "fold_count": self.fold_count,
            "seed": self.seed,
            "window_frames": self.window_frames,
            "window_keys": [[v, e] for v, e in self.window_keys],
            "roles": self.roles,
            "block_count": self.block_count,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "FoldPlan":
        return cls(
            fold_count=int(rec["fold_count"]),
            seed=int(rec["seed"]),
            window_frames=int(rec["window_frames"]),
            window_keys=[(str(v), int(e)) for v, e in rec["window_keys"]],
            roles=[list(r) for r in rec["roles"]],
            block_count=int(rec.get("block_count", 0)),
        )


def _adjacency_blocks(windows: list[WindowSample], t_frames: int) -> list[list[int]]:
    """Connected components of same-video windows under |Δend_frame| < T."""
    by_video: dict[str, list[int]] = {}
    for i, w in enumerate(windows):
        by_video.setdefault(w.video_id, []).append(i)
    blocks: list[list[int]] = []
    for video in sorted(by_video):
        idx = sorted(by_video[video], key=lambda i: windows[i].end_frame)
        current = [idx[0]]
        for i in idx[1:]:
            if windows[i].end_frame - windows[current[-1]].end_frame < t_frames:
                current.append(i)
            else:
                blocks.append(current)
                current = [i]
        blocks.append(current)
    return blocks


def plan_folds(windows: list[WindowSample], fold_count: int = 5, seed: int = 0) -> FoldPlan:
    """Deal adjacency blocks to 50/20/30 splits, rotated per fold.

    Windows of one video closer than T frames always share a block, so no
    block assignment can place adjacent windows in different splits. Blocks
    are shuffled once by ``seed``; each fold rotates the shuffled order before
    the cumulative 50/20/30 fill.
    """
    if fold_count < 2:
        raise ConfigError(f"fold_count must be >= 2 to form train/val/test splits, got {fold_count}")
    if len(windows) < fold_count:
        raise ConfigError(f"need at least {fold_count} windows, got {len(windows)}")
    t_frames = windows[0].frames
    blocks = _adjacency_blocks(windows, t_frames)
    if len(blocks) < 3:
        raise ConfigError(
            f"only {len(blocks)} adjacency block(s); cannot fill three splits. "
            "Add more videos or increase the window stride."
        )
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(blocks)))
    total = len(windows)
    roles: list[list[str]] = []
    for fold in range(fold_count):
        shift = round(fold * len(blocks) / fold_count)
        rotated = order[shift:] + order[:shift]
        fold_roles = [""] * total
        cum = 0
        counts = {ROLE_TRAIN: 0, ROLE_VAL: 0, ROLE_TEST: 0}
        for b in rotated:
            if cum < SPLIT_FRACTIONS[0] * total:
                role = ROLE_TRAIN
            elif cum < (SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]) * total:
                role = ROLE_VAL
            else:
                role = ROLE_TEST
            for i in blocks[b]:
                fold_roles[i] = role
            cum += len(blocks[b])
            counts[role] += len(blocks[b])
        if min(counts.values()) == 0:
            raise ConfigError(
                f"fold {fold} leaves a split empty ({counts}); "
                "add more videos or increase the window stride."
            )
        roles.append(fold_roles)
    return FoldPlan(
        fold_count=fold_count,
        seed=seed,
        window_frames=t_frames,
        window_keys=[(w.video_id, w.end_frame) for w in windows],
        roles=roles,
        block_count=len(blocks),
    )
