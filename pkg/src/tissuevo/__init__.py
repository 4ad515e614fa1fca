"""Bi-temporal ischemic tissue characterization on 4D perfusion CT."""

__version__ = "0.1.0"

from .errors import TissuevoError, ValidationError, DataError  # noqa: E402
from .volume_io import (  # noqa: E402
    EmbeddingMap,
    FeatureRecord,
    FeatureTable,
    LabelMask,
    Volume4D,
    read_embedding_blob,
    read_feature_table,
    read_nifti,
    write_embedding_blob,
    write_feature_table,
    write_nifti,
)
from .roi import ROI_CLASSES, BiTemporalRoiMap, build_bitemporal, build_t1_labels, dilate_mask  # noqa: E402
from .baseline import extract_baseline_slice  # noqa: E402
from .glcm import extract_glcm_slice, glcm_features  # noqa: E402
from .stats import bonferroni, cliffs_delta, mann_whitney_u, shapiro_wilk, wilcoxon_signed_rank  # noqa: E402
from .similarity import cos_sim, delta_cos, mean_group_sim  # noqa: E402
from .tsne import TSNE, TsneConfig  # noqa: E402
from .phantom import PhantomConfig, generate_phantom  # noqa: E402
from .features import BaselineFeatureExtractor, Case, EmbeddingAggregator, GlcmFeatureExtractor  # noqa: E402

__all__ = [
    "__version__",
    "TissuevoError",
    "ValidationError",
    "DataError",
    "EmbeddingMap",
    "FeatureRecord",
    "FeatureTable",
    "LabelMask",
    "Volume4D",
    "read_embedding_blob",
    "read_feature_table",
    "read_nifti",
    "write_embedding_blob",
    "write_feature_table",
    "write_nifti",
    "ROI_CLASSES",
    "BiTemporalRoiMap",
    "build_bitemporal",
    "build_t1_labels",
    "dilate_mask",
    "extract_baseline_slice",
    "extract_glcm_slice",
    "glcm_features",
    "bonferroni",
    "cliffs_delta",
    "mann_whitney_u",
    "shapiro_wilk",
    "wilcoxon_signed_rank",
    "cos_sim",
    "delta_cos",
    "mean_group_sim",
    "TSNE",
    "TsneConfig",
    "PhantomConfig",
    "generate_phantom",
    "BaselineFeatureExtractor",
    "Case",
    "EmbeddingAggregator",
    "GlcmFeatureExtractor",
]
