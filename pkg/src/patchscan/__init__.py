"""patchscan: patch-based surface defect detection with ROI-gated classification."""

from .dataset import (
    LABEL_DEFECT,
    LABEL_NO_DEFECT,
    FoldPlan,
    LabeledPatch,
    ManifestEntry,
    Sample,
    augment_defect,
    balance,
    build_labeled_set,
    export_patches,
    group_kfold,
    label_patch,
    load_samples,
    read_manifest,
    write_manifest,
)
from .detector import DetectorParams, Keypoint, detect, gate_patches, hessian_response
from .errors import (
    BoundsError,
    DatasetError,
    EmbeddingLookupError,
    FormatError,
    ParameterError,
    PatchScanError,
)
from .features import (
    EmbeddingManifest,
    extract,
    hsv_histogram,
    lbp_histogram,
    load_embeddings,
    lookup_embedding,
    rgb_histogram,
    surf_patch_descriptor,
    write_embeddings,
)
from .imgops import (
    GRAY_WEIGHTS,
    PatchGrid,
    Rect,
    box_sum,
    build_integral,
    flip_patch,
    gaussian_blur,
    intensity_range,
    partition,
    rgb_to_hsv,
    rotate_patch,
    to_grayscale,
)
from .model_file import load_model, save_model
from .pipeline import (
    CvResult,
    DefectMap,
    MetricsReport,
    PipelineConfig,
    TimingReport,
    benchmark,
    cross_validate,
    draw_overlay,
    evaluate,
    infer,
    postprocess_expand,
    train_model,
    train_pipeline,
    truth_from_mask,
)
from .svm import (
    LinearSvmModel,
    Standardizer,
    TrainConfig,
    fit_standardizer,
    predict,
    predict_batch,
    train_svm,
)
from .synth import SynthConfig, generate

__version__ = "0.1.0"
