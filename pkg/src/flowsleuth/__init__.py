"""flowsleuth: detect AI-generated video from optical-flow residuals.

The package pairs an appearance branch over raw RGB frames with a temporal
branch over flow residuals (the frame-to-frame difference of dense optical
flow). Smoothly moving real footage leaves near-zero residuals; generative
models tend to leave per-frame motion jitter that the residual branch picks
up. Branch scores are fused by a convex combination and thresholded.

Typical flow: build or ingest a corpus (``dataset``), estimate flow
(``flow``), form residuals and encode inputs (``residual``, ``pipeline``),
train per-branch classifiers (``model``, ``training``), and evaluate with
fused metrics (``evaluation``). The ``flowsleuth`` CLI drives the same
steps from the shell.
"""

from .dataset import (
    FrameSequence,
    Label,
    Manifest,
    Split,
    SyntheticConfig,
    VideoEntry,
    load_all_splits,
    load_frames,
    load_manifest,
    make_synthetic_corpus,
)
from .errors import FlowSleuthError
from .evaluation import (
    BranchEval,
    EvalReport,
    FusionConfig,
    ScoreRow,
    accuracy,
    auc,
    evaluate_dataset,
    f1,
    fuse,
    load_report,
    parse_report,
    serialize_report,
    write_report,
    write_scores_tsv,
)
from .flow import (
    FlowDiagnostics,
    FlowEstimatorConfig,
    FlowField,
    estimate_flow,
    estimate_sequence_flows,
    read_flo,
    write_flo,
)
from .model import (
    Aggregation,
    BackboneConfig,
    BranchModel,
    Prediction,
    forward,
    init_model,
    loss_and_grad,
    score_video,
)
from .pipeline import EncodingPipeline, PreprocessResult
from .residual import (
    EncodedInput,
    InputKind,
    NormalizationSpec,
    ResidualField,
    compute_residuals,
    encode_flow,
    encode_frame,
    encode_residual,
)
from .training import (
    TrainConfig,
    TrainLog,
    TrainRecord,
    TrainState,
    adam_step,
    apply_plateau_rule,
    load_checkpoint,
    save_checkpoint,
    train_branch,
)

__version__ = "0.1.0"

__all__ = [
    "Aggregation",
    "BackboneConfig",
    "BranchEval",
    "BranchModel",
    "EncodedInput",
    "EncodingPipeline",
    "EvalReport",
    "FlowDiagnostics",
    "FlowEstimatorConfig",
    "FlowField",
    "FlowSleuthError",
    "FrameSequence",
    "FusionConfig",
    "InputKind",
    "Label",
    "Manifest",
    "NormalizationSpec",
    "Prediction",
    "PreprocessResult",
    "ResidualField",
    "ScoreRow",
    "Split",
    "SyntheticConfig",
    "TrainConfig",
    "TrainLog",
    "TrainRecord",
    "TrainState",
    "VideoEntry",
    "accuracy",
    "adam_step",
    "apply_plateau_rule",
    "auc",
    "compute_residuals",
    "encode_flow",
    "encode_frame",
    "encode_residual",
    "estimate_flow",
    "estimate_sequence_flows",
    "evaluate_dataset",
    "f1",
    "forward",
    "fuse",
    "init_model",
    "load_all_splits",
    "load_checkpoint",
    "load_frames",
    "load_manifest",
    "load_report",
    "loss_and_grad",
    "make_synthetic_corpus",
    "parse_report",
    "read_flo",
    "save_checkpoint",
    "score_video",
    "serialize_report",
    "train_branch",
    "write_flo",
    "write_report",
    "write_scores_tsv",
]
