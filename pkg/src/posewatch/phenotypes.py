"""Representative behavior phenotypes via K-medoid clustering.

For one behavior category, the person-level features of the most-attended
person are collected from confidently positive windows, clustered with
K-medoids (k-medoids++ start, assignment/update alternation plus greedy swap
improvement), and the medoid of the largest cluster becomes the category's
representative window. Attended-person bounding boxes and a stick-figure SVG
strip (12 evenly spaced frames) are exported for review.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .core_types import COCO_SKELETON_EDGES, BehaviorCategory, ConfigError
from .windows import WindowSample

# Attention can only point at detected persons, so absence-driven categories
# (an empty seat) carry a caveat in the output.
ABSENCE_DRIVEN = (BehaviorCategory.ELOPEMENT, BehaviorCategory.OUT_OF_SEAT)

BOX_PADDING = 0.10


@dataclass
class AttendedFeature:
    """One window's most-attended person-level feature vector."""

    window_index: int
    feature: np.ndarray
    attended_track_id: int
    probability: float


def collect_attended_features(
    params: mdl.ModelParams,
    cfg: mdl.ModelConfig,
    windows: list[WindowSample],
    confidence_floor: float = 0.8,
    indices: list[int] | None = None,
) -> list[AttendedFeature]:
    """Flattened features of the argmax-attention person per confident window.

    Only windows with predicted probability at or above ``confidence_floor``
    contribute. Requires a variant with person attention.
    """
    if not cfg.has_patt:
        raise ConfigError(
            f"variant {cfg.variant!r} has no person attention; phenotype extraction requires it"
        )
    out: list[AttendedFeature] = []
    for pos, w in enumerate(windows):
        record = mdl.forward(params, cfg, w)
        prob = float(1.0 / (1.0 + np.exp(-np.clip(record.logit, -500, 500))))
        if prob < confidence_floor:
            continue
        attended = int(np.argmax(record.a_person))
        out.append(
            AttendedFeature(
                window_index=indices[pos] if indices is not None else pos,
                feature=record.person_features[attended].ravel().copy(),
                attended_track_id=w.track_ids[attended],
                probability=prob,
            )
        )
    return out


@dataclass
class KMedoidsResult:
    assignments: np.ndarray       # (n,) cluster index per point
    medoids: list[int]            # point index per cluster
    cost: float
    cost_history: list[float]     # total cost after each accepted step


def _total_cost(dist: np.ndarray, medoids: list[int]) -> tuple[float, np.ndarray]:
    d = dist[:, medoids]
    assign = d.argmin(axis=1)  # ties -> lowest cluster index
    return float(d[np.arange(dist.shape[0]), assign].sum()), assign


# Internal restarts per call: one k-medoids++ start plus uniform-random
# starts. Greedy swaps cannot cross between a spread-out and a tight medoid
# configuration, so restarts from both kinds of start are needed to reach the
# global optimum reliably on small instances.
_RESTARTS = 4


def _optimize(dist: np.ndarray, start: list[int], k: int, max_iters: int):
    cost, assign = _total_cost(dist, start)
    medoids = list(start)
    history = [cost]
    n = dist.shape[0]
    for _ in range(max_iters):
        # per-cluster best member as medoid
        new_medoids = list(medoids)
        for c in range(k):
            members = np.nonzero(assign == c)[0]
            if members.size == 0:
                continue
            within = dist[np.ix_(members, members)].sum(axis=1)
            new_medoids[c] = int(members[int(np.argmin(within))])
        new_cost, new_assign = _total_cost(dist, new_medoids)
        if new_cost < cost:
            medoids, cost, assign = new_medoids, new_cost, new_assign
            history.append(cost)
            continue

        # greedy best single (medoid, non-medoid) swap
        best = (0.0, None)
        medoid_set = set(medoids)
        for c in range(k):
            for h in range(n):
                if h in medoid_set:
                    continue
                cand = list(medoids)
                cand[c] = h
                cand_cost, _ = _total_cost(dist, cand)
                if cand_cost < cost and (best[1] is None or cand_cost < best[0]):
                    best = (cand_cost, cand)
        if best[1] is None:
            break
        medoids = best[1]
        cost, assign = _total_cost(dist, medoids)
        history.append(cost)
    return medoids, cost, assign, history


def _distance_matrix(pts: np.ndarray, metric: str) -> np.ndarray:
    if metric == "l2":
        diff = pts[:, None, :] - pts[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))
    if metric == "l1":
        return np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=-1)
    if metric == "cosine":
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        unit = pts / np.maximum(norms, 1e-12)
        return np.clip(1.0 - unit @ unit.T, 0.0, 2.0)
    raise ConfigError(f"unknown distance metric {metric!r}; expected l2, l1 or cosine")


def kmedoids(
    features: list[np.ndarray] | np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    metric: str = "l2",
) -> KMedoidsResult:
    """K-medoids (L2 by default): ++-style seeding, then alternate
    assign/update, then greedy single-swap improvement, best of a few seeded
    starts. Total cost never increases per step and every medoid is a dataset
    member."""
    pts = np.asarray(features, dtype=np.float64)
    if pts.ndim != 2:
        pts = pts.reshape(len(features), -1)
    n = pts.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} available points")

    dist = _distance_matrix(pts, metric)

    rng = np.random.default_rng(seed)
    plus_plus = [int(rng.integers(n))]
    while len(plus_plus) < k:
        d2 = dist[:, plus_plus].min(axis=1) ** 2
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a medoid; take lowest free index
            plus_plus.append(next(i for i in range(n) if i not in plus_plus))
            continue
        plus_plus.append(int(rng.choice(n, p=d2 / total)))

    starts = [plus_plus]
    while len(starts) < _RESTARTS and n > k:
        starts.append(sorted(int(i) for i in rng.choice(n, size=k, replace=False)))

    winner = None
    for start in starts:
        medoids, cost, assign, history = _optimize(dist, start, k, max_iters)
        if winner is None or cost < winner[1]:
            winner = (medoids, cost, assign, history)
    medoids, cost, assign, history = winner
    return KMedoidsResult(assignments=assign, medoids=medoids, cost=cost, cost_history=history)


def silhouette_score(pts: np.ndarray, assignments: np.ndarray, metric: str = "l2") -> float:
    """Mean silhouette over all points; singleton clusters contribute 0."""
    dist = _distance_matrix(np.asarray(pts, dtype=np.float64), metric)
    n = len(assignments)
    clusters = {c: np.nonzero(assignments == c)[0] for c in np.unique(assignments)}
    if len(clusters) < 2:
        raise ConfigError("silhouette needs at least 2 clusters")
    scores = np.zeros(n)
    for i in range(n):
        own = clusters[assignments[i]]
        if own.size <= 1:
            continue
        a = dist[i, own].sum() / (own.size - 1)
        b = min(dist[i, idx].mean() for c, idx in clusters.items() if c != assignments[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def silhouette_sweep(
    features: list[np.ndarray] | np.ndarray,
    k_range=range(2, 11),
    seed: int = 0,
    metric: str = "l2",
) -> dict[int, float]:
    """Silhouette score per cluster count (k capped at the point count)."""
    pts = np.asarray(features, dtype=np.float64)
    if pts.ndim != 2:
        pts = pts.reshape(len(features), -1)
    out: dict[int, float] = {}
    for k in k_range:
        if k >= len(pts) or k < 2:
            continue
        res = kmedoids(pts, k=k, seed=seed, metric=metric)
        out[k] = silhouette_score(pts, res.assignments, metric=metric)
    return out


@dataclass
class ClusterSummary:
    medoid_window_index: int
    medoid_track_id: int
    member_count: int


@dataclass
class PhenotypeResult:
    """The representative attended-person window for one behavior category."""

    category: BehaviorCategory
    clusters: list[ClusterSummary]
    representative_window_index: int
    representative_video_id: str
    representative_end_frame: int
    representative_track_id: int
    frame_range: tuple[int, int]
    boxes: list[tuple[float, float, float, float] | None]
    absence_caveat: bool = False
    clustered_window_count: int = 0

    def to_json(self) -> dict:
        return {
            "category": self.category.value,
            "clusters": [
                {
                    "medoid_window_index": c.medoid_window_index,
                    "medoid_track_id": c.medoid_track_id,
                    "member_count": c.member_count,
                }
                for c in self.clusters
            ],
            "representative": {
                "window_index": self.representative_window_index,
                "video_id": self.representative_video_id,
                "end_frame": self.representative_end_frame,
                "attended_track_id": self.representative_track_id,
                "frame_range": list(self.frame_range),
                "boxes": [list(b) if b else None for b in self.boxes],
            },
            "absence_caveat": self.absence_caveat,
            "clustered_window_count": self.clustered_window_count,
        }


def attended_boxes(
    window: WindowSample, track_id: int
) -> list[tuple[float, float, float, float] | None]:
    """Per-frame bounding box over the attended track's valid joints, padded 10%."""
    k = window.track_ids.index(track_id)
    boxes: list[tuple[float, float, float, float] | None] = []
    for t in range(window.frames):
        valid = window.joint_valid[k, t]
        if not valid.any():
            boxes.append(None)
            continue
        pts = window.persons[k, t][valid]
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        px, py = BOX_PADDING * (x1 - x0), BOX_PADDING * (y1 - y0)
        boxes.append((float(x0 - px), float(y0 - py), float(x1 + px), float(y1 + py)))
    return boxes


def extract_phenotype(
    params: mdl.ModelParams,
    cfg: mdl.ModelConfig,
    windows: list[WindowSample],
    category: BehaviorCategory,
    k: int = 5,
    confidence_floor: float = 0.8,
    seed: int = 0,
    metric: str = "l2",
) -> PhenotypeResult:
    """Cluster confident windows of one category; the largest cluster's medoid
    is the representative (ties resolved toward the lower cluster index)."""
    qualifying = [(i, w) for i, w in enumerate(windows) if w.label and category in w.categories]
    feats = collect_attended_features(
        params,
        cfg,
        [w for _, w in qualifying],
        confidence_floor=confidence_floor,
        indices=[i for i, _ in qualifying],
    )
    if len(feats) < k:
        raise ConfigError(
            f"{len(feats)} window(s) of category {category.value} pass the "
            f"confidence floor {confidence_floor}; need at least k={k}"
        )
    clustering = kmedoids([f.feature for f in feats], k=k, seed=seed, metric=metric)
    sizes = np.bincount(clustering.assignments, minlength=k)
    largest = int(np.argmax(sizes))  # argmax keeps the lowest index on ties
    clusters = [
        ClusterSummary(
            medoid_window_index=feats[m].window_index,
            medoid_track_id=feats[m].attended_track_id,
            member_count=int(sizes[c]),
        )
        for c, m in enumerate(clustering.medoids)
    ]
    rep_feat = feats[clustering.medoids[largest]]
    rep_window = windows[rep_feat.window_index]
    return PhenotypeResult(
        category=category,
        clusters=clusters,
        representative_window_index=rep_feat.window_index,
        representative_video_id=rep_window.video_id,
        representative_end_frame=rep_window.end_frame,
        representative_track_id=rep_feat.attended_track_id,
        frame_range=(rep_window.end_frame - rep_window.frames + 1, rep_window.end_frame),
        boxes=attended_boxes(rep_window, rep_feat.attended_track_id),
        absence_caveat=category in ABSENCE_DRIVEN,
        clustered_window_count=len(feats),
    )


_PANEL = 150
_MARGIN = 12
_COLORS = ("#4878a8", "#6aa84f", "#a87848", "#8855aa", "#558888", "#aa5577")


def phenotype_svg(window: WindowSample, result: PhenotypeResult, panels: int = 12) -> str:
    """Stick-figure strip of evenly spaced frames, attended person boxed."""
    t_idx = np.round(np.linspace(0, window.frames - 1, panels)).astype(int)
    attended_k = window.track_ids.index(result.representative_track_id)
    width = panels * _PANEL
    height = _PANEL + 18
    half = _PANEL / 2 - _MARGIN

    def sx(p: int, x: float) -> str:
        return f"{p * _PANEL + _PANEL / 2 + x * half:.2f}"

    def sy(y: float) -> str:
        return f"{_PANEL / 2 + y * half:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for p, t in enumerate(t_idx):
        parts.append(
            f'<rect x="{p * _PANEL + 1}" y="1" width="{_PANEL - 2}" height="{_PANEL - 2}" '
            f'fill="none" stroke="#cccccc"/>'
        )
        parts.append(
            f'<text x="{p * _PANEL + 4}" y="{_PANEL + 13}" font-size="10" '
            f'fill="#444444">frame {window.end_frame - window.frames + 1 + int(t)}</text>'
        )
        for k in range(window.person_count):
            color = "#cc2222" if k == attended_k else _COLORS[k % len(_COLORS)]
            coords = window.persons[k, t]
            valid = window.joint_valid[k, t]
            for a, b in COCO_SKELETON_EDGES:
                if valid[a] and valid[b]:
                    parts.append(
                        f'<line x1="{sx(p, coords[a, 0])}" y1="{sy(coords[a, 1])}" '
                        f'x2="{sx(p, coords[b, 0])}" y2="{sy(coords[b, 1])}" '
                        f'stroke="{color}" stroke-width="1.2"/>'
                    )
            for j in range(coords.shape[0]):
                if valid[j]:
                    parts.append(
                        f'<circle cx="{sx(p, coords[j, 0])}" cy="{sy(coords[j, 1])}" '
                        f'r="1.6" fill="{color}"/>'
                    )
        box = result.boxes[int(t)]
        if box is not None:
            x0, y0, x1, y1 = box
            bx = float(sx(p, x0))
            bw = float(sx(p, x1)) - bx
            by = float(sy(y0))
            bh = float(sy(y1)) - by
            parts.append(
                f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bw:.2f}" height="{bh:.2f}" '
                f'fill="none" stroke="#cc2222" stroke-width="1.5"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
