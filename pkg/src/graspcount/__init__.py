"""graspcount: how many objects is a multi-fingered hand holding?

Three estimators over hand pose, tactile array, and strain-gauge signals:
a linear regressor on summed vertical contact force, a packing upper bound
from the grasp hull volume, and a trained three-member deep ensemble.
"""

from .errors import (
    DataError,
    DegenerateData,
    DegenerateInput,
    EmptyDataset,
    GraspCountError,
    InvalidDim,
    InvalidMapping,
    JointLimitViolation,
    LengthMismatch,
    NonFiniteGradient,
    NonFiniteValue,
    ShapeMismatch,
    UntrainedModel,
    ValidationError,
)
from .estimators import (
    Autoencoders,
    ClassDistribution,
    EnsembleBundle,
    FeatureVector,
    TactileEncoding,
    TactileGrid,
    build_autoencoder,
    build_classifier,
    encode_features,
    ensemble_predict,
    fine_tune,
    load_bundle,
    regression_to_distribution,
    save_bundle,
    train_autoencoders,
    train_classifiers,
)
from .evaluation import (
    EnsembleEstimator,
    EvalReport,
    ForceEstimator,
    VolumeEstimator,
    confusion_matrix,
    evaluate_estimator,
    rmse,
)
from .force import LinearCountModel, fit_linear, predict_count, vertical_force
from .geometry import (
    ConvexHull,
    ObjectSpec,
    convex_hull,
    grasp_volume_estimate,
    hull_volume,
    upper_bound_count,
)
from .kinematics import (
    HandGeometry,
    HandKeypoints,
    HandPose,
    JointLimits,
    forward_kinematics,
    load_hand_config,
    sensor_frames,
)
from .network import NeuralModel
from .simulator import (
    Dataset,
    GraspSample,
    SceneConfig,
    dedupe_symmetric,
    downsample_tactile,
    generate_dataset,
    load_dataset,
    pregrasp_grid,
    save_dataset,
    simulate_grasp,
)
from .training import TrainConfig, TrainingSet, adam_step, train

__version__ = "0.1.0"
