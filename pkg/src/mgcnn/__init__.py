"""Multigraph spectral convolution for short-term turning-movement forecasting.

The package covers the full path from per-intersection detector CSVs (or the
built-in synthetic corridor generator) through preprocessing, time-varying
graph construction, Chebyshev spectral convolution, training, and metric
reporting against naive baselines.
"""

__version__ = "0.1.0"

from .metrics import (
    HistoricalAverage,
    MetricsReport,
    compute_metrics,
    export_series,
    historical_average_baseline,
    persistence_baseline,
    sweep_horizon,
    sweep_lookback,
)
from .model import (
    ForwardTrace,
    LayerParams,
    ModelConfig,
    ModelParams,
    WindowDataset,
    cheb_conv,
    dense,
    dropout,
    forward,
    gradients,
    init_params,
    load_checkpoint,
    pack_windows,
    save_checkpoint,
    temporal_fuse,
)
from .pipeline import (
    CleanFeatureSeries,
    PreparedCorridor,
    RawIntersectionSeries,
    assemble,
    correlation_matrix,
    drop_occupancy,
    ingest_csv,
    iqr_outlier_replace,
    prepare_corridor,
    prune_collinear,
)
from .spectral import (
    NormalizedLaplacian,
    ScaledLaplacian,
    chebyshev_basis,
    degree_vector,
    largest_eigenvalue,
    normalized_laplacian,
    scale_laplacian,
)
from .synth import SynthConfig, generate, ground_truth_profile
from .topology import (
    CorridorTopology,
    GraphSnapshot,
    MultiGraphWindow,
    build_snapshot,
    edge_weight,
    load_topology,
    stack_window,
)
from .trainer import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    lr_schedule,
    mse_loss,
    split_train_test,
    train,
)
