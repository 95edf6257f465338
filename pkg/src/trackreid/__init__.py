"""Appearance-based tracklet re-identification with contrastive embeddings.

Frame and joint multi-view encoders trained with a temperature-scaled
contrastive loss, tracklet scoring and grouping at a calibrated
false-positive rate, evaluation metrics, a synthetic benchmark and a
soft-voting classification harness. Everything is plain numpy.
"""
from .cadx import evaluate_groupings, soft_vote
from .data import TrackletRecord, read_manifest, write_manifest
from .encoders import (
    EncoderConfig,
    FrameEncoder,
    JointEncoder,
    encode_frame,
    encode_tracklet_average,
    encode_tracklet_joint,
)
from .errors import ReIDError
from .loss import LossConfig, nt_xent_loss
from .metrics import (
    f1_scores,
    fragmentation_report,
    pr_auc,
    roc_auc,
    sensitivity_at_specificity,
)
from .optim import LarsConfig, lars_step
from .pipeline import run_reid_experiment
from .reid import (
    GroupingPartition,
    TrackletEmbedder,
    calibrate_threshold,
    group_tracklets,
    joint_score,
    late_fusion_score,
    pairwise_similarity_matrix,
)
from .sampling import build_batch, filter_tracklets, pseudo_positive_split
from .synthetic import SyntheticConfig, generate_dataset, inject_frame_scores
from .train import TrainConfig, train_reid

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig", "FrameEncoder", "GroupingPartition", "JointEncoder", "LarsConfig",
    "LossConfig", "ReIDError", "SyntheticConfig", "TrackletEmbedder", "TrackletRecord",
    "TrainConfig", "build_batch", "calibrate_threshold", "encode_frame",
    "encode_tracklet_average", "encode_tracklet_joint", "evaluate_groupings", "f1_scores",
    "filter_tracklets", "fragmentation_report", "generate_dataset", "group_tracklets",
    "inject_frame_scores", "joint_score", "lars_step", "late_fusion_score", "nt_xent_loss",
    "pairwise_similarity_matrix", "pr_auc", "pseudo_positive_split", "read_manifest",
    "roc_auc", "run_reid_experiment", "sensitivity_at_specificity", "soft_vote", "train_reid", "write_manifest",
]
