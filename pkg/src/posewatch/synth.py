"""Synthetic classroom pose scenes with planted behavior motifs.

Persons sit at fixed anchors around the scene center with Gaussian jitter.
Three motifs can be scheduled: a 1.5 Hz vertical jump, a 2.5 Hz horizontal
head shake, and leaving the seat (walk away, then absent). The generator is
fully deterministic in (spec, seed) and emits matching annotations plus a
ground-truth actor map for attention-localization checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_types import (
    AnnotationEpisode,
    BehaviorCategory,
    ConfigError,
    PoseFrame,
    Skeleton,
)

# Seated 17-joint COCO template, pixels, origin at the hip center (y grows
# downward, head above hips).
_TEMPLATE = np.array(
    [
        (0.0, -60.0),    # nose
        (-8.0, -64.0), (8.0, -64.0),    # eyes
        (-20.0, -61.0), (20.0, -61.0),  # ears
        (-20.0, -40.0), (20.0, -40.0),  # shoulders
        (-28.0, -15.0), (28.0, -15.0),  # elbows
        (-30.0, 5.0), (30.0, 5.0),      # wrists
        (-10.0, 0.0), (10.0, 0.0),      # hips
        (-13.0, 35.0), (13.0, 35.0),    # knees
        (-15.0, 65.0), (15.0, 65.0),    # ankles
    ]
)

TORSO_LENGTH = float(np.linalg.norm(_TEMPLATE[5:7].mean(axis=0) - _TEMPLATE[11:13].mean(axis=0)))
HEAD_WIDTH = float(np.linalg.norm(_TEMPLATE[3] - _TEMPLATE[4]))

JUMP_FREQ_HZ = 1.5
JUMP_AMPLITUDE = 0.8 * TORSO_LENGTH
SHAKE_FREQ_HZ = 2.5
SHAKE_AMPLITUDE = 0.5 * HEAD_WIDTH
HEAD_JOINTS = (0, 1, 2, 3, 4)
LEG_JOINTS = (13, 14, 15, 16)
# Legs stay planted while the body lifts, so the motif stays visible after
# per-frame hip-centering removes the rigid translation.
JUMP_LEG_LAG = 1.0
LEAVE_DISTANCE = 300.0

SCENE_CENTER = np.array([640.0, 400.0])
ANCHOR_RADIUS = 240.0

MOTIF_JUMP = "jump"
MOTIF_HEAD_SHAKE = "head_shake"
MOTIF_LEAVE_SEAT = "leave_seat"
MOTIF_KINDS = (MOTIF_JUMP, MOTIF_HEAD_SHAKE, MOTIF_LEAVE_SEAT)

DEFAULT_MOTIF_CATEGORY = {
    MOTIF_JUMP: BehaviorCategory.RESTRICTED_REPETITIVE,
    MOTIF_HEAD_SHAKE: BehaviorCategory.DISRUPTIVE,
    MOTIF_LEAVE_SEAT: BehaviorCategory.OUT_OF_SEAT,
}


@dataclass(frozen=True)
class MotifSpec:
    """One planted behavior episode in a synthetic scene."""

    person: int
    kind: str
    onset: int
    offset: int
    category: BehaviorCategory | None = None

    def resolved_category(self) -> BehaviorCategory:
        return self.category or DEFAULT_MOTIF_CATEGORY[self.kind]


@dataclass
class SynthSceneSpec:
    """Deterministic scene description: same spec + seed -> identical output."""

    video_id: str = "synth"
    person_count: int = 4
    duration_frames: int = 9000
    fps: float = 30.0
    noise_std: float = 1.0
    seed: int = 0
    motifs: list[MotifSpec] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "person_count": self.person_count,
            "duration_frames": self.duration_frames,
            "fps": self.fps,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "motifs": [
                {
                    "person": m.person,
                    "kind": m.kind,
                    "onset": m.onset,
                    "offset": m.offset,
                    **({"category": m.category.value} if m.category else {}),
                }
                for m in self.motifs
            ],
        }

    @classmethod
    def from_json(cls, rec: dict) -> "SynthSceneSpec":
        motifs = [
            MotifSpec(
                person=int(m["person"]),
                kind=str(m["kind"]),
                onset=int(m["onset"]),
                offset=int(m["offset"]),
                category=BehaviorCategory.parse(m["category"]) if m.get("category") else None,
            )
            for m in rec.get("motifs", [])
        ]
        return cls(
            video_id=str(rec.get("video_id", "synth")),
            person_count=int(rec.get("person_count", 4)),
            duration_frames=int(rec.get("duration_frames", 9000)),
            fps=float(rec.get("fps", 30.0)),
            noise_std=float(rec.get("noise_std", 1.0)),
            seed=int(rec.get("seed", 0)),
            motifs=motifs,
        )


@dataclass(frozen=True)
class ActorEpisode:
    """Ground truth: who performs which planted episode."""

    person: int
    onset: int
    offset: int
    kind: str
    category: BehaviorCategory


@dataclass
class SyntheticScene:
    frames: list[PoseFrame]
    episodes: list[AnnotationEpisode]
    actors: list[ActorEpisode]


def person_anchors(person_count: int) -> np.ndarray:
    """Fixed seat positions evenly spaced on a circle around the scene center."""
    angles = 2.0 * np.pi * np.arange(person_count) / max(person_count, 1)
    return SCENE_CENTER + ANCHOR_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _validate(spec: SynthSceneSpec) -> None:
    if spec.person_count < 1:
        raise ConfigError(f"person_count must be >= 1, got {spec.person_count}")
    if spec.duration_frames < 1:
        raise ConfigError(f"duration_frames must be >= 1, got {spec.duration_frames}")
    if spec.noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {spec.noise_std}")
    per_person: dict[int, list[MotifSpec]] = {}
    for m in spec.motifs:
        if m.kind not in MOTIF_KINDS:
            raise ConfigError(f"unknown motif kind {m.kind!r}; expected one of {MOTIF_KINDS}")
        if not 0 <= m.person < spec.person_count:
            raise ConfigError(f"motif person {m.person} out of range [0, {spec.person_count})")
        if not 0 <= m.onset <= m.offset < spec.duration_frames:
            raise ConfigError(
                f"motif interval [{m.onset}, {m.offset}] outside stream of {spec.duration_frames} frames"
            )
        per_person.setdefault(m.person, []).append(m)
    for person, motifs in per_person.items():
        motifs.sort(key=lambda m: m.onset)
        for a, b in zip(motifs, motifs[1:]):
            if b.onset <= a.offset:
                raise ConfigError(
                    f"overlapping motifs on person {person}: "
                    f"[{a.onset}, {a.offset}] and [{b.onset}, {b.offset}]"
                )


def generate_synthetic_scene(spec: SynthSceneSpec) -> SyntheticScene:
    """Render the scene: pose frames, annotations, and the actor map."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    p, d = spec.person_count, spec.duration_frames
    anchors = person_anchors(p)

    # (duration, P, 17, 2) base coordinates with per-frame jitter
    coords = anchors[None, :, None, :] + _TEMPLATE[None, None, :, :]
    coords = np.broadcast_to(coords, (d, p, 17, 2)).copy()
    if spec.noise_std > 0:
        coords += rng.normal(0.0, spec.noise_std, size=coords.shape)
    absent = np.zeros((d, p), dtype=bool)

    for m in spec.motifs:
        t = np.arange(m.onset, m.offset + 1)
        rel = (t - m.onset) / spec.fps
        if m.kind == MOTIF_JUMP:
            lift = JUMP_AMPLITUDE * np.sin(2.0 * np.pi * JUMP_FREQ_HZ * rel)
            coords[t, m.person, :, 1] -= lift[:, None]
            coords[t[:, None], m.person, LEG_JOINTS, 1] += JUMP_LEG_LAG * lift[:, None]
        elif m.kind == MOTIF_HEAD_SHAKE:
            sway = SHAKE_AMPLITUDE * np.sin(2.0 * np.pi * SHAKE_FREQ_HZ * rel)
            coords[t[:, None], m.person, HEAD_JOINTS, 0] += sway[:, None]
        else:  # leave_seat
            away = anchors[m.person] - SCENE_CENTER
            away = away / np.linalg.norm(away)
            walk = max(1, (m.offset - m.onset + 1) // 2)
            for i, frame in enumerate(t):
                if i < walk:
                    coords[frame, m.person] += (i / walk) * LEAVE_DISTANCE * away
                else:
                    absent[frame, m.person] = True

    frames = []
    valid = np.ones(17, dtype=bool)
    for f in range(d):
        skeletons = [
            Skeleton(coords=coords[f, k], valid=valid, detection_id=k)
            for k in range(p)
            if not absent[f, k]
        ]
        frames.append(PoseFrame(frame_index=f, skeletons=skeletons))

    episodes = [
        AnnotationEpisode(
            video_id=spec.video_id,
            onset_frame=m.onset,
            offset_frame=m.offset,
            category=m.resolved_category(),
            subject_id=f"P{m.person:02d}",
        )
        for m in spec.motifs
    ]
    actors = [
        ActorEpisode(
            person=m.person,
            onset=m.onset,
            offset=m.offset,
            kind=m.kind,
            category=m.resolved_category(),
        )
        for m in spec.motifs
    ]
    return SyntheticScene(frames=frames, episodes=episodes, actors=actors)


def write_actor_map(scene: SyntheticScene, video_id: str, path: str | Path) -> None:
    rec = {
        "video_id": video_id,
        "episodes": [
            {
                "person": a.person,
                "onset": a.onset,
                "offset": a.offset,
                "kind": a.kind,
                "category": a.category.value,
            }
            for a in scene.actors
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_actor_map(path: str | Path) -> list[ActorEpisode]:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    return [
        ActorEpisode(
            person=int(e["person"]),
            onset=int(e["onset"]),
            offset=int(e["offset"]),
            kind=str(e.get("kind", "")),
            category=BehaviorCategory.parse(e["category"]),
        )
        for e in rec.get("episodes", [])
    ]
