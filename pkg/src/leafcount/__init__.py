"""leafcount: counting objects in images by direct regression.

The pipeline: load or synthesize annotated image datasets, pool them,
preprocess (resize + histogram stretch), train a CNN regressor with
random-affine augmentation and early stopping, optionally ensemble models
trained on disjoint data portions, score with the counting metric suite
(DiC, |DiC|, MSE, percent agreement, R²), and inspect what the model looks
at with occlusion-sensitivity heatmaps.
"""

from .augment import AffineParams, AugmentConfig, EpochPlan, apply_affine, epoch_stream, random_affine
from .datasets import (
    DatasetDescriptor,
    ImageSample,
    SplitPlan,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    load_split_plan,
    make_split,
    partition_equal,
    pool_datasets,
    save_split_plan,
    select_samples,
    write_dataset,
)
from .ensemble import (
    Ensemble,
    EnsembleTrainResult,
    fuse_predictions,
    load_ensemble,
    save_ensemble,
    train_ensemble,
)
from .exceptions import (
    AnnotationError,
    BuildError,
    CheckpointError,
    ConfigError,
    DatasetError,
    EvaluationError,
    FusionError,
    GenerationError,
    LeafcountError,
    PartitionError,
    PoolingError,
    ShapeError,
    SplitError,
    TrainingDivergedError,
)
from .metrics import (
    MetricsReport,
    PredictionSet,
    evaluate,
    evaluate_by_source,
    format_table,
    read_predictions_csv,
    write_predictions_csv,
    write_report_csv,
)
from .model import (
    BackboneSpec,
    HeadSpec,
    RegressionNetwork,
    build_model,
    load_checkpoint,
    register_backbone,
    round_count,
    save_backbone,
    save_checkpoint,
)
from .occlusion import (
    OcclusionConfig,
    OcclusionHeatmap,
    grid_shape,
    occlusion_map,
    render_heatmap,
    write_heatmap_csv,
)
from .preprocess import DegenerateChannelWarning, PreprocessConfig, histogram_stretch, preprocess, preprocess_all, resize
from .training import (
    Adam,
    CrossValidationResult,
    EarlyStopping,
    TrainConfig,
    TrainHistory,
    cross_validate,
    train,
)

__version__ = "0.1.0"
