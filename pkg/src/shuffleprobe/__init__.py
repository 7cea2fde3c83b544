"""shuffleprobe: detect AI-generated images by probing shuffled tiles.

The pipeline: cut an image into tiles, shuffle them to strip global layout,
push views through a frozen encoder, score with per-tile-size linear heads,
and average the logits across scales. Includes a paired-benchmark builder
(per-image generator overfits and deterministic denoising round trips), a
blur/JPEG degradation harness, and manifest-driven evaluation.
"""

from .config import ProjectConfig, load_config
from .detector import (
    ScoreRecord,
    ShuffleEnsembleDetector,
    classify,
    load_bundle,
    read_score_file,
    save_bundle,
    write_score_file,
)
from .encoders import (
    AvgPoolEncoder,
    BackendSpec,
    ClipVitL14Encoder,
    EncoderBackend,
    TexturePoolEncoder,
    load_backend,
)
from .heads import (
    LinearHeadClassifier,
    bce_loss,
    build_training_features,
    sigmoid,
    train_head_on_manifest,
)
from .manifest import (
    Manifest,
    ManifestRow,
    ToyCorpusSpec,
    load_image,
    read_manifest,
    scan_real_fake_layout,
    split_train_val,
    synth_toy_corpus,
    validate_manifest,
    write_manifest,
)
from .metrics import (
    EvalReport,
    accuracy,
    average_precision,
    build_report,
    export_scatter,
    per_class_accuracy,
    sweep,
)
from .patches import (
    CompositeSampler,
    PatchGrid,
    PatchShuffle,
    assemble,
    partition,
    patch_shuffle,
    sample_composite,
    shuffle,
    unshuffle,
)
from .rng import derive_seed, fisher_yates_permutation, make_rng
from .validation import center_crop
from .twins import (
    DdimSchedule,
    GanFitConfig,
    ScaledNoisePredictor,
    TwinPair,
    ZeroNoisePredictor,
    build_twinsynths,
    ddim_forward,
    ddim_reverse,
    fit_gan_twin,
    linear_alpha_schedule,
    psnr,
)
from .degrade import (
    DegradeSpec,
    apply_degradation_sweep,
    gaussian_blur,
    gaussian_kernel,
    jpeg_compress,
)

__version__ = "0.1.0"

__all__ = [
    "AvgPoolEncoder",
    "BackendSpec",
    "ClipVitL14Encoder",
    "CompositeSampler",
    "DdimSchedule",
    "DegradeSpec",
    "EncoderBackend",
    "EvalReport",
    "GanFitConfig",
    "LinearHeadClassifier",
    "Manifest",
    "ManifestRow",
    "PatchGrid",
    "PatchShuffle",
    "ProjectConfig",
    "ScaledNoisePredictor",
    "ScoreRecord",
    "ShuffleEnsembleDetector",
    "TexturePoolEncoder",
    "ToyCorpusSpec",
    "TwinPair",
    "ZeroNoisePredictor",
    "accuracy",
    "apply_degradation_sweep",
    "assemble",
    "average_precision",
    "bce_loss",
    "build_report",
    "build_training_features",
    "build_twinsynths",
    "center_crop",
    "classify",
    "ddim_forward",
    "ddim_reverse",
    "derive_seed",
    "export_scatter",
    "fisher_yates_permutation",
    "fit_gan_twin",
    "gaussian_blur",
    "gaussian_kernel",
    "jpeg_compress",
    "linear_alpha_schedule",
    "load_backend",
    "load_bundle",
    "load_config",
    "load_image",
    "make_rng",
    "partition",
    "patch_shuffle",
    "per_class_accuracy",
    "psnr",
    "read_manifest",
    "read_score_file",
    "sample_composite",
    "save_bundle",
    "scan_real_fake_layout",
    "shuffle",
    "sigmoid",
    "split_train_val",
    "sweep",
    "synth_toy_corpus",
    "train_head_on_manifest",
    "unshuffle",
    "validate_manifest",
    "write_manifest",
    "write_score_file",
]
