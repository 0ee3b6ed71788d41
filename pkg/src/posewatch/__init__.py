"""Detection of interfering/high-risk behavior episodes in multi-person 2D
pose streams via attention-based group activity recognition."""

from .autodiff import AdamState, NumericFault, Tensor, adam_step
from .core_types import (
    AnnotationEpisode,
    BehaviorCategory,
    ConfigError,
    FormatError,
    Keypoint,
    PoseFrame,
    Skeleton,
    StreamMeta,
    frame_label,
    read_annotations,
    read_pose_stream,
    write_annotations,
    write_pose_stream,
)
from .model import (
    AttentionRecord,
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    predict,
    save_checkpoint,
)
from .phenotypes import PhenotypeResult, collect_attended_features, extract_phenotype, kmedoids
from .synth import MotifSpec, SynthSceneSpec, generate_synthetic_scene
from .tracking import (
    Assignment,
    CostMatrix,
    NormalizedTrack,
    Track,
    assemble_tracks,
    build_cost_matrix,
    hungarian_assign,
    normalize_track,
)
from .train_eval import (
    EvalReport,
    TrainConfig,
    aggregate_cv,
    benchmark_inference,
    evaluate,
    evaluate_cv,
    tpr_per_category,
    train_fold,
)
from .windows import FoldPlan, WindowConfig, WindowSample, make_windows, plan_folds

__version__ = "0.1.0"
