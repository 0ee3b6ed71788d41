import numpy as np
import pytest

from posewatch.core_types import (
    JOINT_COUNT,
    AnnotationEpisode,
    BehaviorCategory,
    ConfigError,
    PoseFrame,
    Skeleton,
    frame_label,
)
from posewatch.tracking import Track
from posewatch.windows import (
    FoldPlan,
    WindowConfig,
    make_windows,
    plan_folds,
)

from conftest import make_skeleton, make_window

RRB = BehaviorCategory.RESTRICTED_REPETITIVE
DIS = BehaviorCategory.DISRUPTIVE


def steady_track(start, length, track_id=0, offset=(0.0, 0.0), person=0):
    poses = [make_skeleton(offset=offset, detection_id=person) for _ in range(length)]
    return Track(track_id=track_id, start_frame=start, poses=poses)


def scan_adjacency_violations(plan: FoldPlan, windows) -> int:
    """Exhaustive O(n^2) scan for same-video near-window cross-split pairs."""
    violations = 0
    t = plan.window_frames
    for fold_roles in plan.roles:
        for i in range(len(windows)):
            for j in range(i + 1, len(windows)):
                wi, wj = windows[i], windows[j]
                if wi.video_id != wj.video_id:
                    continue
                if abs(wi.end_frame - wj.end_frame) < t and fold_roles[i] != fold_roles[j]:
                    violations += 1
    return violations


class TestMakeWindows:
    CFG = WindowConfig(window_seconds=4.0, stride_frames=30, fps=30.0, video_id="v")

    def test_detection_label_from_last_frame(self):
        tracks = [steady_track(0, 400)]
        eps = [AnnotationEpisode("v", 120, 250, RRB)]
        build = make_windows(tracks, eps, self.CFG)
        by_end = {w.end_frame: w for w in build.windows}
        assert by_end[119].label is False          # one frame below onset
        assert by_end[149].label is True           # inside the episode
        assert by_end[149].categories == {RRB}
        assert by_end[239].label is True
        assert by_end[299].label is False          # past the offset
        assert by_end[119].categories == set()

    def test_label_matches_frame_label_recomputation(self):
        tracks = [steady_track(0, 500)]
        eps = [
            AnnotationEpisode("v", 100, 220, RRB),
            AnnotationEpisode("v", 200, 300, DIS),
        ]
        build = make_windows(tracks, eps, self.CFG)
        for w in build.windows:
            is_target, cats = frame_label(w.end_frame, eps)
            assert w.label == is_target
            assert w.categories == cats

    def test_prediction_horizon_arithmetic(self):
        # T=3, stride 7: a window ends at frame 100; target = 100 + 180*30 = 5500
        cfg = WindowConfig(
            window_seconds=0.1, stride_frames=7, task="predict", horizon_seconds=180.0,
            fps=30.0, video_id="v",
        )
        tracks = [steady_track(0, 5601)]
        eps = [AnnotationEpisode("v", 5500, 5600, RRB)]
        build = make_windows(tracks, eps, cfg)
        by_end = {w.end_frame: w for w in build.windows}
        assert by_end[100].label is True
        assert by_end[93].label is False  # target 5493 < onset

    def test_prediction_windows_past_stream_dropped(self):
        cfg = WindowConfig(
            window_seconds=1.0, stride_frames=30, task="predict", horizon_seconds=2.0,
            fps=30.0, video_id="v",
        )
        tracks = [steady_track(0, 120)]
        build = make_windows(tracks, [], cfg)
        # stream ends at 119; targets are end+60: only ends <= 59 survive
        assert all(w.end_frame + 60 <= 119 for w in build.windows)
        assert build.dropped_horizon > 0

    def test_low_coverage_track_excluded_and_padding(self):
        long_track = steady_track(0, 400, track_id=0, person=0)
        brief = steady_track(100, 20, track_id=1, offset=(300.0, 0.0), person=1)  # 20/120 < 25%
        half = steady_track(60, 120, track_id=2, offset=(600.0, 0.0), person=2)
        build = make_windows([long_track, brief, half], [], self.CFG)
        w119 = next(w for w in build.windows if w.end_frame == 119)
        assert w119.track_ids == [0, 2]
        k2 = w119.track_ids.index(2)
        # track 2 starts at frame 60: first 60 frames are edge-hold padded
        assert not w119.presence_mask[k2, :60].any()
        assert w119.presence_mask[k2, 60:].all()
        np.testing.assert_array_equal(w119.persons[k2, 0], w119.persons[k2, 59])

    def test_zero_track_windows_dropped_and_counted(self):
        tracks = [steady_track(0, 130), steady_track(600, 130, track_id=1)]
        build = make_windows(tracks, [], self.CFG)
        assert build.dropped_no_tracks > 0
        assert all(w.person_count >= 1 for w in build.windows)

    def test_window_too_short_config_error(self):
        with pytest.raises(ConfigError, match="frames"):
            make_windows([], [], WindowConfig(window_seconds=0.01, fps=30.0)).windows

    def test_actor_attribution(self):
        a = steady_track(0, 400, track_id=0, offset=(0.0, 0.0), person=0)
        b = steady_track(0, 400, track_id=1, offset=(300.0, 0.0), person=1)
        eps = [AnnotationEpisode("v", 150, 260, RRB)]
        build = make_windows([a, b], eps, self.CFG, actor_intervals=[(1, 150, 260)])
        for w in build.windows:
            if w.label:
                assert w.actor_track_id == 1
            else:
                assert w.actor_track_id is None

    def test_coordinates_are_window_normalized(self):
        build = make_windows([steady_track(0, 200)], [], self.CFG)
        w = build.windows[0]
        norms = np.linalg.norm(w.persons[0], axis=-1)
        assert norms[w.joint_valid[0]].max() == pytest.approx(1.0, abs=1e-9)


class TestPlanFolds:
    def _windows(self, rng, videos=10, per_video=10, t=120, spacing=120):
        windows = []
        for v in range(videos):
            for i in range(per_video):
                windows.append(
                    make_window(
                        rng, k=1, t=t, video_id=f"v{v:02d}", end_frame=t - 1 + i * spacing
                    )
                )
        return windows

    def test_split_ratios_within_one_block(self, rng):
        windows = self._windows(rng)
        plan = plan_folds(windows, fold_count=5, seed=3)
        total = len(windows)
        for fold in range(5):
            split = plan.split(fold)
            assert len(split.train) + len(split.val) + len(split.test) == total
            # spacing == T makes every window its own block -> within one window
            assert abs(len(split.train) - 0.5 * total) <= 1
            assert abs(len(split.val) - 0.2 * total) <= 1
            assert abs(len(split.test) - 0.3 * total) <= 1

    def test_zero_adjacency_violations(self, rng):
        # overlapping windows (stride < T) chain into per-video blocks
        windows = self._windows(rng, videos=8, per_video=12, spacing=30)
        plan = plan_folds(windows, fold_count=5, seed=0)
        assert scan_adjacency_violations(plan, windows) == 0

    def test_fold_count_one_rejected(self, rng):
        with pytest.raises(ConfigError, match="fold_count"):
            plan_folds(self._windows(rng), fold_count=1, seed=0)

    def test_single_giant_block_rejected(self, rng):
        windows = [
            make_window(rng, k=1, t=120, video_id="v", end_frame=119 + i * 30) for i in range(40)
        ]
        with pytest.raises(ConfigError, match="block"):
            plan_folds(windows, fold_count=5, seed=0)

    def test_deterministic(self, rng):
        windows = self._windows(rng)
        a = plan_folds(windows, fold_count=5, seed=11)
        b = plan_folds(windows, fold_count=5, seed=11)
        assert a.roles == b.roles
        c = plan_folds(windows, fold_count=5, seed=12)
        assert a.roles != c.roles

    def test_folds_differ_from_each_other(self, rng):
        plan = plan_folds(self._windows(rng), fold_count=5, seed=0)
        assert any(plan.roles[0] != plan.roles[f] for f in range(1, 5))

    def test_round_trip_json(self, rng):
        plan = plan_folds(self._windows(rng), fold_count=3, seed=5)
        back = FoldPlan.from_json(plan.to_json())
        assert back.roles == plan.roles
        assert back.window_keys == plan.window_keys
