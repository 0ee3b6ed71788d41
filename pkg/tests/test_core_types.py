import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posewatch.core_types import (
    JOINT_COUNT,
    AnnotationEpisode,
    BehaviorCategory,
    FormatError,
    PoseFrame,
    Skeleton,
    StreamMeta,
    frame_label,
    read_annotations,
    read_pose_stream,
    read_stream_metadata,
    write_annotations,
    write_pose_stream,
    write_stream_metadata,
)

from conftest import make_frames, make_skeleton


class TestPoseStream:
    def test_empty_file_gives_empty_stream(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        assert read_pose_stream(p) == []

    def test_minimal_round_trip(self, tmp_path):
        p = tmp_path / "s.jsonl"
        frames = make_frames(3, n_people=1)
        write_pose_stream(frames, p)
        back = read_pose_stream(p)
        assert [f.frame_index for f in back] == [0, 1, 2]
        assert all(len(f.skeletons) == 1 for f in back)

    def test_frames_sorted_by_index(self, tmp_path):
        p = tmp_path / "s.jsonl"
        frames = make_frames(3)
        write_pose_stream(frames, p)
        lines = p.read_text().strip().splitlines()
        p.write_text("\n".join(reversed(lines)) + "\n")
        back = read_pose_stream(p)
        assert [f.frame_index for f in back] == [0, 1, 2]

    def test_malformed_line_names_line_number(self, tmp_path):
        p = tmp_path / "s.jsonl"
        write_pose_stream(make_frames(2), p)
        p.write_text(p.read_text() + "{not json\n")
        with pytest.raises(FormatError, match="line 3"):
            read_pose_stream(p)

    def test_duplicate_frame_index_rejected(self, tmp_path):
        p = tmp_path / "s.jsonl"
        write_pose_stream(make_frames(1), p)
        line = p.read_text()
        p.write_text(line + line)
        with pytest.raises(FormatError, match="duplicate frame_index"):
            read_pose_stream(p)

    def test_wrong_joint_count_rejected(self, tmp_path):
        p = tmp_path / "s.jsonl"
        rec = {"frame": 0, "skeletons": [{"id": 0, "joints": [[0.0, 0.0, 1]] * 5}]}
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(FormatError, match="5 joints"):
            read_pose_stream(p)

    def test_degenerate_skeleton_rejected_at_ingest(self, tmp_path):
        p = tmp_path / "s.jsonl"
        joints = [[0.0, 0.0, 0]] * (JOINT_COUNT - 1) + [[1.0, 1.0, 1]]
        rec = {"frame": 0, "skeletons": [{"id": 0, "joints": joints}]}
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(FormatError, match="degenerate"):
            read_pose_stream(p)

    @given(st.data())
    @settings(max_examples=30, deadline=None)
    def test_round_trip_oracle(self, tmp_path_factory, data):
        # random valid stream -> write -> read reproduces an equal value
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        n_frames = data.draw(st.integers(0, 5))
        step = data.draw(st.integers(1, 3))
        frames = []
        for t in range(n_frames):
            skels = []
            for k in range(data.draw(st.integers(0, 3))):
                valid = rng.random(JOINT_COUNT) > 0.2
                if valid.sum() < 2:
                    valid[:2] = True
                coords = rng.normal(0, 100, size=(JOINT_COUNT, 2))
                skels.append(Skeleton(coords=coords, valid=valid, detection_id=k))
            frames.append(PoseFrame(frame_index=t * step, skeletons=skels))
        p = tmp_path_factory.mktemp("rt") / "s.jsonl"
        write_pose_stream(frames, p)
        back = read_pose_stream(p)
        assert len(back) == len(frames)
        for a, b in zip(frames, back):
            assert a.frame_index == b.frame_index
            assert len(a.skeletons) == len(b.skeletons)
            for sa, sb in zip(a.skeletons, b.skeletons):
                assert sa.detection_id == sb.detection_id
                np.testing.assert_array_equal(sa.valid, sb.valid)
                np.testing.assert_array_equal(sa.coords, sb.coords)


class TestSkeleton:
    def test_invalid_joints_zeroed(self):
        valid = np.ones(JOINT_COUNT, dtype=bool)
        valid[3] = False
        coords = np.full((JOINT_COUNT, 2), 7.0)
        s = Skeleton(coords=coords, valid=valid, detection_id=0)
        np.testing.assert_array_equal(s.coords[3], [0.0, 0.0])
        np.testing.assert_array_equal(s.coords[4], [7.0, 7.0])

    def test_duplicate_detection_ids_rejected(self):
        with pytest.raises(FormatError, match="duplicate detection ids"):
            PoseFrame(frame_index=0, skeletons=[make_skeleton(), make_skeleton()])


class TestAnnotations:
    HEADER = "video_id,onset_frame,offset_frame,category,subject_id\n"

    def test_header_only_gives_empty_list(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(self.HEADER)
        assert read_annotations(p) == []

    def test_direct_field_mapping(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(self.HEADER + "vidA,100,250,restricted_repetitive,S09\n")
        (ep,) = read_annotations(p)
        assert ep == AnnotationEpisode(
            video_id="vidA",
            onset_frame=100,
            offset_frame=250,
            category=BehaviorCategory.RESTRICTED_REPETITIVE,
            subject_id="S09",
        )

    def test_unknown_category_lists_valid_names(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(self.HEADER + "vidA,1,2,stimming,\n")
        with pytest.raises(FormatError) as err:
            read_annotations(p)
        for name in (
            "restricted_repetitive",
            "self_injurious",
            "disruptive",
            "aggressive",
            "elopement",
            "out_of_seat",
        ):
            assert name in str(err.value)

    def test_onset_after_offset_names_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(self.HEADER + "vidA,1,2,disruptive,\nvidA,300,200,disruptive,\n")
        with pytest.raises(FormatError, match="row 3"):
            read_annotations(p)

    def test_case_insensitive_parse(self):
        assert BehaviorCategory.parse("Out_Of_Seat") is BehaviorCategory.OUT_OF_SEAT

    def test_round_trip(self, tmp_path):
        p = tmp_path / "a.csv"
        eps = [
            AnnotationEpisode("v", 5, 9, BehaviorCategory.AGGRESSIVE, None),
            AnnotationEpisode("v", 0, 0, BehaviorCategory.ELOPEMENT, "S01"),
        ]
        write_annotations(eps, p)
        assert read_annotations(p) == eps


class TestFrameLabel:
    EP = AnnotationEpisode("v", 100, 250, BehaviorCategory.RESTRICTED_REPETITIVE)

    def test_below_onset_is_negative(self):
        assert frame_label(99, [self.EP]) == (False, set())

    def test_onset_inclusive(self):
        is_target, cats = frame_label(100, [self.EP])
        assert is_target and cats == {BehaviorCategory.RESTRICTED_REPETITIVE}

    def test_offset_inclusive(self):
        assert frame_label(250, [self.EP])[0] is True
        assert frame_label(251, [self.EP])[0] is False

    def test_union_of_overlapping_episodes(self):
        eps = [self.EP, AnnotationEpisode("v", 110, 130, BehaviorCategory.DISRUPTIVE)]
        is_target, cats = frame_label(120, eps)
        assert is_target
        assert cats == {BehaviorCategory.RESTRICTED_REPETITIVE, BehaviorCategory.DISRUPTIVE}

    @given(
        frame=st.integers(0, 500),
        intervals=st.lists(
            st.tuples(st.integers(0, 500), st.integers(0, 200), st.sampled_from(list(BehaviorCategory))),
            max_size=6,
        ),
    )
    @settings(max_examples=200, deadline=None)
    def test_interval_stabbing_brute_force(self, frame, intervals):
        eps = [AnnotationEpisode("v", a, a + w, c) for a, w, c in intervals]
        is_target, cats = frame_label(frame, eps)
        expected = {e.category for e in eps if e.onset_frame <= frame <= e.offset_frame}
        assert cats == expected
        assert is_target == bool(expected)

    @given(
        frame=st.integers(0, 100),
        base=st.lists(st.tuples(st.integers(0, 100), st.integers(0, 50)), max_size=4),
        extra=st.tuples(st.integers(0, 100), st.integers(0, 50)),
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_episode_set(self, frame, base, extra):
        cat = BehaviorCategory.DISRUPTIVE
        eps = [AnnotationEpisode("v", a, a + w, cat) for a, w in base]
        before = frame_label(frame, eps)[0]
        eps.append(AnnotationEpisode("v", extra[0], extra[0] + extra[1], cat))
        after = frame_label(frame, eps)[0]
        assert not (before and not after)


class TestStreamMetadata:
    def test_fps_defaults_to_30(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"video_id": "v"}')
        assert read_stream_metadata(p) == StreamMeta(video_id="v", fps=30.0)

    def test_round_trip_with_extras(self, tmp_path):
        p = tmp_path / "m.json"
        write_stream_metadata(StreamMeta("v", 15.0), p, extra={"note": "x"})
        assert read_stream_metadata(p) == StreamMeta("v", 15.0)
