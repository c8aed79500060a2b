"""Pydantic request/response contracts for the millwear service.

The CLI builds the same models and dispatches them to the handlers
in-process, so service and command line accept identical parameters.
Unknown fields are rejected everywhere.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Shared option blocks (defaults mirror the core dataclasses)
# ---------------------------------------------------------------------------


class SegmentationOptions(StrictModel):
    window_len: int = 256
    alpha0: float = 0.01
    alpha1: float = 0.03
    alpha2: float = 10.0
    min_above: float = 0.05
    min_below: float = 0.2


class SpectralOptions(StrictModel):
    frame_len: int = 1024
    hop: int = 512
    window_fn: str = "hann"
    welch_subframes: int = 4
    welch_overlap: float = 0.5


class FeatureOptions(StrictModel):
    window_len: int = 8192
    hop: int = 4096
    mode_bins: int = 64
    autocorr_lag: int = 20
    higuchi_kmax: int = 16
    n_harmonics: int = 10
    tolerance_bins: float = 1.5


class ProcessOptions(StrictModel):
    """Process frequencies for the harmonic-band features; used when the
    input is a bare trace without a dataset manifest."""

    spindle_rpm: float = 11540.0
    flutes: int = 4


# ---------------------------------------------------------------------------
# Health
# ---------------------------------------------------------------------------


class HealthResponse(StrictModel):
    status: str
    version: str


# ---------------------------------------------------------------------------
# Synthetic data generation
# ---------------------------------------------------------------------------


class SynthRequest(StrictModel):
    out_dir: str
    cycles: int = 5
    seed: int = 0
    duration_s: float = 222.0
    profile: str = "A"
    spindle_rpm: float = 11540.0
    flutes: int = 4
    sample_interval: float = 65e-6
    process_s: float = 20.0
    idle_s: float = 2.0
    layout_jitter: float = 0.0
    idle_noise: float = 0.01
    process_noise: float = 0.08
    noise_jitter: float = 0.3
    wear_noise: float = 1.0
    wear_curve: str = "linear"
    wear_transition: float = 0.6
    label_noise: float = 0.05
    transition_jitter: float = 0.1


class SynthResponse(StrictModel):
    manifest_path: str
    cycle_ids: list[str]


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


class SegmentRequest(StrictModel):
    trace_path: str
    out_path: str | None = None
    segmentation: SegmentationOptions = Field(default_factory=SegmentationOptions)


class SegmentInfo(StrictModel):
    start_index: int
    end_index: int
    start_s: float
    end_s: float


class SegmentResponse(StrictModel):
    segments: list[SegmentInfo]
    csv_path: str | None = None


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------


class FeaturesRequest(StrictModel):
    manifest_path: str | None = None
    trace_path: str | None = None
    out_path: str = "features.csv"
    export_stft_dir: str | None = None
    segmentation: SegmentationOptions = Field(default_factory=SegmentationOptions)
    spectral: SpectralOptions = Field(default_factory=SpectralOptions)
    features: FeatureOptions = Field(default_factory=FeatureOptions)
    process: ProcessOptions = Field(default_factory=ProcessOptions)


class FeaturesResponse(StrictModel):
    csv_path: str
    n_windows: int
    n_cycles: int
    n_segments_skipped: int
    stft_paths: list[str] = []


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainRequest(StrictModel):
    features_path: str
    model: str = "svc"  # "tree" | "svc"
    train_fraction: float = 0.6
    seed: int = 0
    out_path: str = "model.json"
    split_out_path: str | None = None
    C: float = 1.0
    gamma: float | None = None
    min_samples_split: int = 2


class SplitInfo(StrictModel):
    train_fraction: float
    seed: int
    train_cycles: list[str]
    val_cycles: list[str]


class TrainResponse(StrictModel):
    model_path: str
    split: SplitInfo
    train_accuracy: float


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class EvalRequest(StrictModel):
    model_path: str
    features_path: str
    cycle_ids: list[str] | None = None
    split_path: str | None = None
    partition: str = "val"  # with split_path: "val" | "train"
    min_run: int = 3
    out_prefix: str | None = None


class EvalResponse(StrictModel):
    accuracy: float
    confusion: dict[str, int]
    transition_delays: dict[str, int | None]
    n_windows: int
    n_cycles: int
    predictions_path: str | None = None
    delays_path: str | None = None
    summary_path: str | None = None


# ---------------------------------------------------------------------------
# Split sweep
# ---------------------------------------------------------------------------


class SweepRequest(StrictModel):
    features_path: str
    models: list[str] = ["tree", "svc"]
    fractions: list[float] = [0.2, 0.4, 0.6, 0.8]
    n_seeds: int = 5
    seed: int = 0
    min_run: int = 3
    out_path: str = "heatmap.csv"
    eval_features_path: str | None = None
    jobs: int = 1
    C: float = 1.0
    gamma: float | None = None
    min_samples_split: int = 2


class GridCell(StrictModel):
    model: str
    train_fraction: float
    mean_accuracy: float


class SweepResponse(StrictModel):
    csv_path: str
    grid: list[GridCell]


# ---------------------------------------------------------------------------
# Inline prediction (monitoring clients)
# ---------------------------------------------------------------------------


class PredictRequest(StrictModel):
    model_path: str
    rows: list[dict[str, float]]  # keyed by the canonical feature names
    apply_filter: bool = False
    min_run: int = 3


class PredictResponse(StrictModel):
    labels: list[int]
    filtered_labels: list[int] | None = None
