"""Lorenz-trajectory one-step-ahead forecasting with small,
hand-backpropagated neural networks (dilated conv stack, LSTM, and a
1992-style feed-forward baseline)."""

from .lorenz import (
    LorenzParams,
    LorenzState,
    ScaleTransform,
    SeriesSet,
    WindowedDataset,
    euler_integrate,
    lorenz_derivative,
    make_windows,
    rescale,
    split_train_test,
)
from .models import (
    FfnModel,
    LstmModel,
    WaveNetConfig,
    WaveNetModel,
    init_ffn,
    init_lstm,
    init_wavenet,
    param_count,
)
from .train_eval import (
    SCENARIOS,
    EvalReport,
    Scenario,
    TrainConfig,
    evaluate,
    mae_loss,
    make_batches,
    multitask_loss,
    rmse,
    train,
    train_and_evaluate,
)

__all__ = [
    "LorenzParams", "LorenzState", "ScaleTransform", "SeriesSet",
    "WindowedDataset", "euler_integrate", "lorenz_derivative", "make_windows",
    "rescale", "split_train_test",
    "FfnModel", "LstmModel", "WaveNetConfig", "WaveNetModel",
    "init_ffn", "init_lstm", "init_wavenet", "param_count",
    "SCENARIOS", "EvalReport", "Scenario", "TrainConfig",
    "evaluate", "mae_loss", "make_batches", "multitask_loss", "rmse",
    "train", "train_and_evaluate",
]

__version__ = "0.1.0"
