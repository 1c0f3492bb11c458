"""Neural surrogates: direct critical-diameter predictor and field generator."""

from .layers import Conv3x3, Dense, PerInputDense, Reshape, Upsample2
from .model import (
    HULL,
    ExtrapolationError,
    NetParams,
    ShapeError,
    check_shapes,
    cnn_build,
    cnn_param_counts,
    cnn_preset_full,
    fcnn_build,
    fcnn_param_count,
    load_net,
    save_net,
)
from .train import (
    CNN_SCHEDULE,
    FCNN_SCHEDULE,
    Adam,
    TrainConfig,
    TrainingError,
    cnn_predict_field,
    cnn_predict_planes,
    cnn_train,
    fcnn_predict,
    fcnn_predict_batch,
    fcnn_train,
    fit,
    gradient_check,
    mse_loss,
    write_loss_csv,
)
