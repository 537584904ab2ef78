"""Mask-and-restore anomaly detection and localization for images.

Train a restoration network on normal images hidden behind random grid
masks, then localize anomalies by progressively refining the mask until
it covers exactly the regions the network cannot restore.
"""

from .checkpoint import CheckpointError, inspect_checkpoint, load_checkpoint, save_checkpoint
from .data import DataError, LoadedDataset, load_dataset, load_image, load_mask
from .evaluation import UndefinedAucError, evaluate, pixel_auc, roc_auc
from .masks import (
    GridSpec,
    apply_mask,
    make_checkerboard_pair,
    make_training_triplet,
    sample_random_mask,
)
from .metrics import (
    GmsConfig,
    LossWeights,
    error_map_f,
    gms_loss,
    gms_map,
    mse_loss,
    ssim_loss,
    ssim_map,
    total_loss,
)
from .model import ArchConfig, RestorationNet, build_model, compose
from .refinement import (
    DetectionResult,
    RefinementState,
    detect,
    initialize_scores,
    progressive_refinement,
    refine_mask,
)
from .synthetic import SynthSpec, generate_synthetic
from .training import TrainConfig, TrainingError, compute_thresholds, train

__version__ = "0.1.0"
