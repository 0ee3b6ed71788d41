"""Frame-to-frame identity association and pose-trajectory normalization.

Skeletons in consecutive frames are matched by minimum-cost bipartite
assignment on L2 pose distance, chained into tracks, ghost tracks shorter
than one second are dropped, and trajectories are hip-centered and scaled to
unit extent per analysis window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_types import (
    JOINT_COUNT,
    LEFT_HIP,
    RIGHT_HIP,
    FormatError,
    PoseFrame,
    Skeleton,
)

# Cost for skeleton pairs sharing no mutually valid joint when every entry in
# the matrix is such a pair.
FALLBACK_PENALTY = 1e6

# Scale below which a window's pose extent is considered degenerate.
DEGENERATE_SCALE = 1e-6


@dataclass
class CostMatrix:
    """Pairwise L2 pose distances between two frames' skeletons."""

    cost: np.ndarray  # (rows, cols), finite, >= 0

    @property
    def rows(self) -> int:
        return self.cost.shape[0]

    @property
    def cols(self) -> int:
        return self.cost.shape[1]


@dataclass
class Assignment:
    """A minimum-total-cost maximum matching of rows to columns."""

    matches: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]
    total_cost: float


def build_cost_matrix(frame_t: PoseFrame, frame_t1: PoseFrame) -> CostMatrix:
    """L2 distance between every skeleton pair, over mutually valid joints.

    Pairs with no mutually valid joint get a large finite penalty: twice the
    maximum real cost in the matrix, or 1e6 when there is no (nonzero) real
    cost to scale from.
    """
    n, m = len(frame_t.skeletons), len(frame_t1.skeletons)
    if n == 0 or m == 0:
        return CostMatrix(cost=np.zeros((n, m)))
    ca = np.stack([s.coords for s in frame_t.skeletons])  # (n, 17, 2)
    cb = np.stack([s.coords for s in frame_t1.skeletons])  # (m, 17, 2)
    va = np.stack([s.valid for s in frame_t.skeletons])
    vb = np.stack([s.valid for s in frame_t1.skeletons])
    mutual = va[:, None, :] & vb[None, :, :]  # (n, m, 17)
    d2 = ((ca[:, None, :, :] - cb[None, :, :, :]) ** 2).sum(axis=-1)
    cost = np.sqrt((d2 * mutual).sum(axis=-1))
    no_overlap = ~mutual.any(axis=-1)
    if no_overlap.any():
        real = cost[~no_overlap]
        penalty = 2.0 * float(real.max()) if real.size and real.max() > 0 else FALLBACK_PENALTY
        cost = np.where(no_overlap, penalty, cost)
    return CostMatrix(cost=cost)


def _solve_square(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (potentials method).

    Returns col index per row. Deterministic: rows are inserted in ascending
    order and column scans keep the lowest index on ties.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)  # p[j] = 1-based row matched to col j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = np.nonzero(~used[1:])[0] + 1
            cur = cost[i0 - 1, free - 1] - u[i0] - v[free]
            better = cur < minv[free]
            if better.any():
                upd = free[better]
                minv[upd] = cur[better]
                way[upd] = j0
            k = int(np.argmin(minv[free]))  # first minimum -> lowest col index
            j1 = int(free[k])
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.zeros(n, dtype=np.intp)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col


def hungarian_assign(costs: CostMatrix) -> Assignment:
    """Minimum-total-cost maximum matching; rectangles handled by padding.

    All costs must be finite. The deficient dimension is padded with zero-cost
    dummies, which leaves the optimum over real pairs unchanged.
    """
    r, c = costs.rows, costs.cols
    if r == 0 or c == 0:
        return Assignment(
            matches=[], unmatched_rows=list(range(r)), unmatched_cols=list(range(c)), total_cost=0.0
        )
    if not np.all(np.isfinite(costs.cost)):
        raise ValueError("hungarian_assign requires finite costs")
    n = max(r, c)
    padded = np.zeros((n, n))
    padded[:r, :c] = costs.cost
    row_to_col = _solve_square(padded)
    matches = [(i, int(row_to_col[i])) for i in range(r) if row_to_col[i] < c]
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    total = float(sum(costs.cost[i, j] for i, j in matches))
    return Assignment(
        matches=sorted(matches),
        unmatched_rows=[i for i in range(r) if i not in matched_rows],
        unmatched_cols=[j for j in range(c) if j not in matched_cols],
        total_cost=total,
    )


@dataclass
class Track:
    """One person's contiguous pose trajectory."""

    track_id: int
    start_frame: int
    poses: list[Skeleton] = field(default_factory=list)
    subject_id: str | None = None

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.poses) - 1

    @property
    def duration(self) -> int:
        return len(self.poses)

    def covers(self, frame_index: int) -> bool:
        return self.start_frame <= frame_index <= self.end_frame

    def pose_at(self, frame_index: int) -> Skeleton:
        if not self.covers(frame_index):
            raise IndexError(f"track {self.track_id} does not cover frame {frame_index}")
        return self.poses[frame_index - self.start_frame]

    def detection_ids(self) -> list[int]:
        return [s.detection_id for s in self.poses]


def chain_tracks(frames: list[PoseFrame], gate: float) -> list[Track]:
    """Greedy frame-to-frame chaining of minimum-cost assignments.

    A match costing more than ``gate`` is rejected (the track ends and the
    detection starts a new one). Frame-index gaps end all active tracks.
    Every input skeleton lands in exactly one track.
    """
    tracks: list[Track] = []
    active: list[Track] = []
    next_id = 0
    prev_index: int | None = None

    def start(frame_index: int, skeleton: Skeleton) -> Track:
        nonlocal next_id
        t = Track(track_id=next_id, start_frame=frame_index, poses=[skeleton])
        next_id += 1
        tracks.append(t)
        return t

    for frame in frames:
        if prev_index is None or frame.frame_index != prev_index + 1 or not active:
            active = [start(frame.frame_index, s) for s in frame.skeletons]
        else:
            prev_frame = PoseFrame(
                frame_index=prev_index, skeletons=[t.poses[-1] for t in active]
            )
            cm = build_cost_matrix(prev_frame, frame)
            assignment = hungarian_assign(cm)
            new_active: list[Track] = []
            claimed: set[int] = set()
            for i, j in assignment.matches:
                if cm.cost[i, j] <= gate:
                    active[i].poses.append(frame.skeletons[j])
                    new_active.append(active[i])
                    claimed.add(j)
            for j, skeleton in enumerate(frame.skeletons):
                if j not in claimed:
                    new_active.append(start(frame.frame_index, skeleton))
            active = new_active
        prev_index = frame.frame_index
    return tracks


def assemble_tracks(frames: list[PoseFrame], fps: float, gate: float) -> list[Track]:
    """Chain detections into tracks and drop ghost tracks shorter than 1 s."""
    min_frames = math.ceil(fps * 1.0)
    return [t for t in chain_tracks(frames, gate) if t.duration >= min_frames]


def suggest_gate(frames: list[PoseFrame]) -> float:
    """Default matching gate: half the diagonal of the stream's coordinate box."""
    lo = np.full(2, np.inf)
    hi = np.full(2, -np.inf)
    for frame in frames:
        for s in frame.skeletons:
            pts = s.coords[s.valid]
            if pts.size:
                lo = np.minimum(lo, pts.min(axis=0))
                hi = np.maximum(hi, pts.max(axis=0))
    if not np.all(np.isfinite(lo)):
        return FALLBACK_PENALTY
    return 0.5 * float(np.linalg.norm(hi - lo))


@dataclass
class NormalizedTrack:
    """Hip-centered, unit-scale pose trajectory over one window span.

    ``coords`` covers every frame of the span; frames the track does not
    cover are edge-hold copies of the first/last observed pose, with
    ``present`` false there. Invalid joints stay at (0, 0).
    """

    track_id: int
    start_frame: int
    coords: np.ndarray      # (T, 17, 2)
    valid_mask: np.ndarray  # (T, 17) bool
    present: np.ndarray     # (T,) bool: frames actually observed
    degenerate: bool = False


def normalize_track(track: Track, window_span: tuple[int, int]) -> NormalizedTrack:
    """Hip-center each frame and scale by one per-window extent factor.

    The scale is the maximum hip-centered joint norm over the whole span, so
    within-window motion amplitude is preserved. A scale below 1e-6 falls
    back to 1 and flags the result degenerate.
    """
    ws, we = window_span
    if we < ws:
        raise ValueError(f"empty window span ({ws}, {we})")
    if track.end_frame < ws or track.start_frame > we:
        raise ValueError(
            f"track {track.track_id} [{track.start_frame}, {track.end_frame}] "
            f"does not overlap window [{ws}, {we}]"
        )
    span = we - ws + 1
    coords = np.zeros((span, JOINT_COUNT, 2))
    valid = np.zeros((span, JOINT_COUNT), dtype=bool)
    present = np.zeros(span, dtype=bool)
    any_valid = False
    for t in range(span):
        f = ws + t
        clamped = min(max(f, track.start_frame), track.end_frame)
        skel = track.pose_at(clamped)
        present[t] = track.covers(f)
        valid[t] = skel.valid
        if not skel.valid.any():
            continue
        any_valid = True
        hips = skel.valid[[LEFT_HIP, RIGHT_HIP]]
        if hips.any():
            center = skel.coords[[LEFT_HIP, RIGHT_HIP]][hips].mean(axis=0)
        else:
            center = skel.coords[skel.valid].mean(axis=0)
        coords[t] = np.where(skel.valid[:, None], skel.coords - center, 0.0)
    if not any_valid:
        raise ValueError(f"track {track.track_id} has no valid joints in any frame")
    norms = np.linalg.norm(coords, axis=-1)
    scale = float(norms[valid].max()) if valid.any() else 0.0
    degenerate = scale < DEGENERATE_SCALE
    if degenerate:
        scale = 1.0
    coords /= scale
    return NormalizedTrack(
        track_id=track.track_id,
        start_frame=ws,
        coords=coords,
        valid_mask=valid,
        present=present,
        degenerate=degenerate,
    )


def write_tracks(tracks: list[Track], path: str | Path) -> None:
    """Persist tracks as JSON-lines, one track per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in sorted(tracks, key=lambda t: (t.start_frame, t.track_id)):
            rec = {
                "track_id": t.track_id,
                "start_frame": t.start_frame,
                "detections": t.detection_ids(),
                "frames": [
                    [[float(x), float(y), int(v)] for (x, y), v in zip(s.coords, s.valid)]
                    for s in t.poses
                ],
            }
            if t.subject_id:
                rec["subject_id"] = t.subject_id
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_tracks(path: str | Path) -> list[Track]:
    tracks: list[Track] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            frames = rec["frames"]
            detections = rec.get("detections", [0] * len(frames))
            poses = []
            for fi, joints in enumerate(frames):
                arr = np.asarray(joints, dtype=np.float64)
                if arr.shape != (JOINT_COUNT, 3):
                    raise FormatError(f"line {line_no}: frame {fi} has shape {arr.shape}")
                poses.append(
                    Skeleton(
                        coords=arr[:, :2],
                        valid=arr[:, 2] > 0.5,
                        detection_id=int(detections[fi]),
                    )
                )
            tracks.append(
                Track(
                    track_id=int(rec["track_id"]),
                    start_frame=int(rec["start_frame"]),
                    poses=poses,
                    subject_id=rec.get("subject_id"),
                )
            )
    return tracks
