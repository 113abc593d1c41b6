"""Temporal-scale transformer library for fuel-cell RUL prognostics.

Subpackages:

- :mod:`tstransformer.autodiff` -- float64 tensors with reverse-mode AD
- :mod:`tstransformer.model` -- the multi-scale inverted transformer
- :mod:`tstransformer.data` -- ageing-data pipeline and synthetic fixtures
- :mod:`tstransformer.metrics` -- RMSE, threshold RULs, scores, lag errors
- :mod:`tstransformer.training` -- loss, Adam, checkpoints, rolling forecast
- :mod:`tstransformer.cli` -- batch front end (``tst`` command)
"""

from .autodiff import (
    Tensor,
    affine,
    backward,
    depthwise_conv1d,
    gradient_check,
    layer_norm,
    matmul,
    no_grad,
    relu,
    softmax_last,
)
from .data import (
    CsvSchema,
    DegradationSpec,
    NormStats,
    TimeSeries,
    WindowedDataset,
    condense,
    degradation_curve,
    ingest_csv,
    make_windows,
    moving_average,
    split_at,
    synth_degradation,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from .metrics import (
    FaultThresholds,
    MetricsReport,
    RulEstimate,
    accuracy_ft,
    evaluate_forecast,
    lag_error,
    percent_error_ft,
    rmse,
    score_rul,
    threshold_crossing,
)
from .model import ModelConfig, TSTransformerModel, param_count
from .training import (
    Checkpoint,
    ForecastResult,
    TrainConfig,
    adam_init,
    adam_step,
    load_checkpoint,
    mse_loss,
    rolling_forecast,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
