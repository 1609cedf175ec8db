"""noisedesk: desk-scale diffusion noise-schedule toolkit.

Small, dependency-light pieces for studying zero-terminal-SNR noise
schedules end to end: schedule construction and rescaling, velocity-style
preconditioning, Euler sampling with an analytic infinite-noise first step,
a hand-rolled toy denoiser with MinSNR and tag loss weighting, aspect-ratio
bucketing, and streaming latent statistics.
"""

from .bucketing import (
    Batch,
    BucketLayout,
    CropGeometry,
    EpochPlan,
    assign_bucket,
    crop_fraction,
    fit_geometry,
    generate_buckets,
    log_aspect_distance,
    plan_epoch,
    read_manifest,
    write_manifest,
)
from .errors import (
    ContractViolationError,
    DataError,
    DegenerateChannelError,
    IdempotenceError,
    NoisedeskError,
    ParameterError,
    ScheduleOrderError,
    TensorFormatError,
    TrainingDivergedError,
)
from .experiment import MeanBiasResult, mean_bias_experiment
from .precond import FunctionNetwork, Preconditioner, RawNetwork
from .sampler import SamplerConfig, euler_step, sample, ztsnr_first_step
from .schedule import (
    DEFAULT_TERMINAL_CLAMP,
    MIN_TERMINAL_CLAMP,
    NoiseSchedule,
    SigmaSchedule,
    build_vp_schedule,
    inference_indices,
    inference_sigmas,
    rescale_to_ztsnr,
    scale_sigma_max_for_resolution,
    sigma_view,
)
from .stats import (
    ANIME_LATENT_MEANS,
    ANIME_LATENT_SAMPLE_COUNT,
    ANIME_LATENT_STDS,
    SD1_LEGACY_SCALE,
    SDXL_LEGACY_SCALE,
    ChannelStats,
    denormalize,
    legacy_denormalize,
    legacy_normalize,
    normalize,
    welford_update,
)
from .tensorio import read_tensor, write_tensor
from .training import (
    TrainConfig,
    ToyNetwork,
    gaussian_blob,
    load_toy,
    minsnr_weight,
    save_toy,
    tag_loss_weights,
    train_toy,
)

__version__ = "0.1.0"

__all__ = [
    "ANIME_LATENT_MEANS",
    "ANIME_LATENT_SAMPLE_COUNT",
    "ANIME_LATENT_STDS",
    "Batch",
    "BucketLayout",
    "ChannelStats",
    "ContractViolationError",
    "CropGeometry",
    "DataError",
    "DEFAULT_TERMINAL_CLAMP",
    "DegenerateChannelError",
    "EpochPlan",
    "FunctionNetwork",
    "IdempotenceError",
    "MeanBiasResult",
    "MIN_TERMINAL_CLAMP",
    "NoiseSchedule",
    "NoisedeskError",
    "ParameterError",
    "Preconditioner",
    "RawNetwork",
    "SamplerConfig",
    "ScheduleOrderError",
    "SD1_LEGACY_SCALE",
    "SDXL_LEGACY_SCALE",
    "SigmaSchedule",
    "TensorFormatError",
    "ToyNetwork",
    "TrainConfig",
    "TrainingDivergedError",
    "assign_bucket",
    "build_vp_schedule",
    "crop_fraction",
    "denormalize",
    "euler_step",
    "fit_geometry",
    "gaussian_blob",
    "generate_buckets",
    "inference_indices",
    "inference_sigmas",
    "legacy_denormalize",
    "legacy_normalize",
    "load_toy",
    "log_aspect_distance",
    "mean_bias_experiment",
    "minsnr_weight",
    "normalize",
    "plan_epoch",
    "read_manifest",
    "read_tensor",
    "rescale_to_ztsnr",
    "sample",
    "save_toy",
    "scale_sigma_max_for_resolution",
    "sigma_view",
    "tag_loss_weights",
    "train_toy",
    "welford_update",
    "write_manifest",
    "write_tensor",
    "ztsnr_first_step",
]
