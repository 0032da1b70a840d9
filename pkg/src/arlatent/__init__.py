"""Attribute-regularized latent representation learning on synthetic shapes.

A library plus CLI harness covering: a synthetic two-phase shape dataset
with exactly countable area attributes, four training methods (plain and
attribute-regularized variants of both a standard VAE and an adversarially
trained encoder/decoder pair), reconstruction and latent-interpretability
metrics, and latent-traversal tooling.
"""

from .archive import load_array_archive, save_array_archive
from .config import ExperimentConfig, load_config
from .errors import (
    ContractError,
    CorruptArchiveError,
    InvalidConfigError,
    OutOfBoundsError,
    TrainingDivergedError,
    UndefinedCorrelationError,
    UndefinedMetricError,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    attribute_reg_loss,
    attrivae_total_loss,
    gaussian_kl,
    pairwise_distance_matrix,
    reconstruction_loss,
    sivae_decoder_loss,
    sivae_encoder_loss,
)
from .metrics import (
    CodesTable,
    MetricsReport,
    evaluate_model,
    interpretability_score,
    modularity_metric,
    sap_metric,
    scc_metric,
    spearman,
    ssim,
)
from .models import ConvVAE, ModelConfig, build_model, load_checkpoint, reparameterize, save_checkpoint
from .perceptual import PerceptualDistance, perceptual_feature_distance
from .synth import (
    DatasetArchive,
    SampleRecord,
    ShapeSpec,
    VariationConfig,
    generate_dataset,
    load_archive,
    rasterize,
    sample_shape_spec,
    save_archive,
)
from .training import FitResult, TrainConfig, TrainState, fit
from .traversal import measure_decoded_attribute, traversal_monotonicity, traverse

__version__ = "0.1.0"
