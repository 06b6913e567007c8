"""pulsekit: remote-photoplethysmography pipeline toolkit.

Temporal speed/modulation augmentations, face-crop preprocessing, classical
pulse estimators (GREEN/CHROM/POS), Hann overlap-add reconstruction, STFT
heart-rate extraction, evaluation metrics, and a synthetic-session
generator for end-to-end verification.
"""

from .augment import (
    AugmentedClip,
    ModulationSpec,
    SpatialAugSpec,
    SpeedAugSpec,
    apply_augmentation,
    modulate,
    modulate_clip,
    modulation_bounds,
    modulation_positions,
    random_augment,
    sample_modulation_factor,
    sample_target_hr,
    source_hr,
    spatial_augment,
    speed_augment,
)
from .core import (
    DEFAULT_BAND,
    HrSeries,
    LandmarkTrack,
    RngState,
    SessionManifest,
    VideoClip,
    Waveform,
    load_session,
    read_landmarks_json,
    read_waveform_csv,
    resample_waveform,
    truncate_to_match,
    write_waveform_csv,
)
from .errors import (
    FrameLoadError,
    InsufficientContextError,
    ManifestError,
    NoSourceHrError,
    PipelineError,
)
from .estimate import (
    ChunkPrediction,
    Estimator,
    PredictionSet,
    estimate_chrom,
    estimate_green,
    estimate_pos,
    get_estimator,
    load_external_predictions,
    run_chunked,
    save_predictions,
)
from .metrics import (
    MetricsReport,
    SessionMetrics,
    ZeroEffortBaseline,
    aggregate,
    mean_absolute_error,
    mean_error,
    neg_pearson_loss,
    r_wave,
    rmse,
    zero_effort,
)
from .postprocess import (
    DatasetStats,
    StftConfig,
    dataset_stats,
    hr_full,
    hr_series,
    mask_unstable_gt,
    overlap_add,
    periodic_hann,
    stft_window_centers,
)
from .preprocess import (
    CropSpec,
    average_downsample_fps,
    crop_face,
    crop_region,
    load_clip,
    preprocess_session,
    save_clip,
)
from .synth import (
    HrTrajectory,
    SynthSpec,
    disc_box,
    render_session,
    synth_session,
    synth_waveform,
)

__version__ = "0.1.0"
