from .folds import FoldSpec, make_folds
from .loco import loco_eval
from .metrics import ClassificationReport, RegressionReport, classification_metrics, regression_metrics
from .pca import PCAResult, pca_project, write_projection_csv
from .zeroshot import VIDEO_MODES, video_embeddings, zero_shot_eval, zero_shot_probabilities

__all__ = [
    "FoldSpec", "make_folds", "ClassificationReport", "RegressionReport",
    "classification_metrics", "regression_metrics", "PCAResult", "pca_project",
    "write_projection_csv", "VIDEO_MODES", "video_embeddings", "zero_shot_eval",
    "zero_shot_probabilities", "loco_eval",
]
