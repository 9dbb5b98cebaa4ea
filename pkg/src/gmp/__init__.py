"""Multi-view group membership scoring.

Pipeline: dense low-level features -> per-view k-means vocabularies ->
word grids -> kernel-smoothed sparse appearance maps -> bilinear pair
scores combined over view pairs -> ranking / verification metrics.
"""

from .encoding import (
    AppearanceMap,
    KernelParams,
    chessboard_dt,
    encode_entity,
    encode_image,
    kernel_value,
    read_appearance_map,
    write_appearance_map,
)
from .evaluation import (
    CmcCurve,
    EvalReport,
    ScoreTensor,
    cmc,
    cmc_auc,
    evaluate_protocol,
    reduce_tensor,
    score_tensor,
    verification_rate,
)
from .imaging import (
    FeatureField,
    ImageGrid,
    hsv_patch_features,
    load_image,
    read_feature_field,
    rgb_to_hsv,
    write_feature_field,
)
from .scoring import (
    BilinearModel,
    PairCoefficients,
    PairWeights,
    SharedWeights,
    collapsed_location_feature,
    collapsed_pair_feature,
    group_score,
    is_same_group,
    pair_score,
)
from .solver import SvmProblem, SvmSolution, primal_objective, svm_train
from .synthgen import SynthDataset, SynthSpec, generate
from .training import (
    GroupSample,
    TrainConfig,
    TrainingData,
    TrainingRun,
    sample_groups,
    train_direct_two_view,
    train_pairwise,
)
from .vocab import Vocabulary, WordGrid, kmeans_fit, quantize, sample_training_features

__version__ = "0.1.0"

__all__ = [
    "AppearanceMap",
    "BilinearModel",
    "CmcCurve",
    "EvalReport",
    "FeatureField",
    "GroupSample",
    "ImageGrid",
    "KernelParams",
    "PairCoefficients",
    "PairWeights",
    "ScoreTensor",
    "SharedWeights",
    "SvmProblem",
    "SvmSolution",
    "SynthDataset",
    "SynthSpec",
    "TrainConfig",
    "TrainingData",
    "TrainingRun",
    "Vocabulary",
    "WordGrid",
    "chessboard_dt",
    "cmc",
    "cmc_auc",
    "collapsed_location_feature",
    "collapsed_pair_feature",
    "encode_entity",
    "encode_image",
    "evaluate_protocol",
    "generate",
    "group_score",
    "hsv_patch_features",
    "is_same_group",
    "kernel_value",
    "kmeans_fit",
    "load_image",
    "pair_score",
    "primal_objective",
    "quantize",
    "read_appearance_map",
    "read_feature_field",
    "reduce_tensor",
    "rgb_to_hsv",
    "sample_groups",
    "sample_training_features",
    "score_tensor",
    "svm_train",
    "train_direct_two_view",
    "train_pairwise",
    "verification_rate",
    "write_appearance_map",
    "write_feature_field",
]
