"""Face-blurring pseudonymisation and movement classification toolkit."""

from .blur import BlurParams, MaskTrajectory, blur_snippet, mask_trajectory
from .errors import GmaBenchError
from .estimators import TemporalConvNetClassifier
from .features import FeatureMatrix, PoseFeatureTransformer, build_features
from .keypoints import (
    KeypointMode,
    SchemaMap,
    SnippetKeypoints,
    default_body25_schema,
    load_snippet,
    load_snippet_dir,
    parse_pose_frame,
    select_keypoints,
)
from .neural import LabeledSample, NetworkSpec, TrainConfig, train
from .evaluation import CvResult, kfold_split, run_cv, ttest_two_sample

__version__ = "0.1.0"

__all__ = [
    "BlurParams",
    "CvResult",
    "FeatureMatrix",
    "GmaBenchError",
    "KeypointMode",
    "LabeledSample",
    "MaskTrajectory",
    "NetworkSpec",
    "PoseFeatureTransformer",
    "SchemaMap",
    "SnippetKeypoints",
    "TemporalConvNetClassifier",
    "TrainConfig",
    "blur_snippet",
    "build_features",
    "default_body25_schema",
    "kfold_split",
    "load_snippet",
    "load_snippet_dir",
    "mask_trajectory",
    "parse_pose_frame",
    "run_cv",
    "select_keypoints",
    "train",
    "ttest_two_sample",
    "__version__",
]
