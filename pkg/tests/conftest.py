import numpy as np
import pytest

from posewatch.core_types import JOINT_COUNT, PoseFrame, Skeleton
from posewatch.model import ModelConfig
from posewatch.windows import WindowSample


def make_skeleton(offset=(0.0, 0.0), detection_id=0, valid=None, spread=10.0):
    """A simple valid skeleton: joints on a deterministic grid around offset."""
    coords = np.stack(
        [
            np.linspace(-spread, spread, JOINT_COUNT) + offset[0],
            np.linspace(spread, -spread, JOINT_COUNT) + offset[1],
        ],
        axis=1,
    )
    if valid is None:
        valid = np.ones(JOINT_COUNT, dtype=bool)
    return Skeleton(coords=coords, valid=np.asarray(valid, dtype=bool), detection_id=detection_id)


def make_frames(n_frames, n_people=1, start=0, step=(0.0, 0.0)):
    """People drifting linearly; person k sits at x offset 100*k."""
    frames = []
    for t in range(n_frames):
        skels = [
            make_skeleton(
                offset=(100.0 * k + step[0] * t, step[1] * t), detection_id=k
            )
            for k in range(n_people)
        ]
        frames.append(PoseFrame(frame_index=start + t, skeletons=skels))
    return frames


def make_window(
    rng, k=2, t=8, label=False, categories=frozenset(), video_id="v", end_frame=100, track_ids=None
):
    """A synthetic WindowSample with random normalized-ish coordinates."""
    persons = rng.normal(0.0, 0.3, size=(k, t, JOINT_COUNT, 2))
    return WindowSample(
        video_id=video_id,
        end_frame=end_frame,
        persons=persons,
        presence_mask=np.ones((k, t), dtype=bool),
        joint_valid=np.ones((k, t, JOINT_COUNT), dtype=bool),
        track_ids=list(track_ids) if track_ids is not None else list(range(k)),
        label=label,
        categories=set(categories),
    )


@pytest.fixture
def tiny_cfg():
    """Smallest config that exercises every head (T=8, matching the window helper)."""
    return ModelConfig(
        variant="ptjatt",
        frames=8,
        backbone_channels=(3, 4, 5, 5),
        backbone_kernel=5,
        jatt_tcn_channels=3,
        jatt_fc=(6, 4),
        tatt_tcn_channels=3,
        tatt_fc=(4,),
        patt_fc=(8, 4),
        classifier_fc=(8, 4),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
