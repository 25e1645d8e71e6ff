"""Held-out validation of low-dimensional embeddings by distillation into an encoder-decoder."""

__version__ = "0.1.0"

from .data import (
    DataError,
    DataMatrix,
    LabelVector,
    PcaBasis,
    SplitAssignment,
    load_labels,
    load_matrix,
    pca_reduce,
    save_matrix,
    split,
)
from .distill import (
    PointwiseScores,
    TrainConfig,
    TrainTrace,
    check_stop,
    distill,
    heldout_errors,
    lambda_sweep,
)
from .metrics import k_range, lcmc, triplet_accuracy
from .student import (
    StudentModel,
    StudentSpec,
    decode,
    encode,
    init_student,
    load_model,
    param_count,
    save_model,
    width_for_depth,
)
from .teacher import TeacherEmbedding, ingest_teacher, normalize_teacher, pca_teacher
from .validate import (
    build_curve,
    compare_methods,
    distortion_by_group,
    select,
    shift_score,
)

__all__ = [
    "DataError",
    "DataMatrix",
    "LabelVector",
    "PcaBasis",
    "SplitAssignment",
    "load_labels",
    "load_matrix",
    "pca_reduce",
    "save_matrix",
    "split",
    "PointwiseScores",
    "TrainConfig",
    "TrainTrace",
    "check_stop",
    "distill",
    "heldout_errors",
    "lambda_sweep",
    "k_range",
    "lcmc",
    "triplet_accuracy",
    "StudentModel",
    "StudentSpec",
    "decode",
    "encode",
    "init_student",
    "load_model",
    "param_count",
    "save_model",
    "width_for_depth",
    "TeacherEmbedding",
    "ingest_teacher",
    "normalize_teacher",
    "pca_teacher",
    "build_curve",
    "compare_methods",
    "distortion_by_group",
    "select",
    "shift_score",
]
