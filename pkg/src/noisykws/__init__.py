"""Noise-robust keyword spotting with inter-intra contrastive regularization."""

from .dataio import (
    COMMANDS_10,
    COMMANDS_35,
    ClassSubset,
    Manifest,
    NoiseBank,
    assign_splits,
    sample_noise_segment,
    scan_keyword_corpus,
    scan_noise_bank,
)
from .dsp import (
    AudioClip,
    AugmentPolicy,
    MelConfig,
    augment_view,
    decode_wav,
    fit_duration,
    log_mel,
    mix_at_snr,
    spec_mask,
    speed_perturb,
    time_shift,
)
from .evaluate import AccuracyGrid, EvalSpec, NoiseSource, evaluate_grid, export_embeddings, project_2d
from .i2cr import (
    EmbeddingBatch,
    LossBreakdown,
    LossConfig,
    RampSchedule,
    alpha,
    i2cr_loss,
    positive_sets,
    sim,
    total_loss,
)
from .model import EncoderConfig, KWSModel, build_model
from .train import TrainConfig, TrainState, fit, load_checkpoint, lr_at, make_batch, save_checkpoint, train_step

__version__ = "0.1.0"
