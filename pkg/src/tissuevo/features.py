"""Estimator-style wrappers that turn cases into per-slice feature tables.

A *case* is one patient's preprocessed volume and bi-temporal ROI map.
The extractors follow the scikit-learn conventions (``get_params``,
``set_params``, stateless ``fit``) so they slot into parameter sweeps.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin

from . import baseline, glcm
from .embeddings import aggregate_slice
from .volume_io import FeatureTable

FAMILY_FEATURES = {
    baseline.FAMILY: baseline.BASELINE_FEATURES,
    glcm.FAMILY: glcm.GLCM_FEATURES,
}


def feature_names_for(family, width):
    names = FAMILY_FEATURES.get(family)
    if names is not None and len(names) == width:
        return list(names)
    return [f"f{k}" for k in range(width)]


@dataclass
class Case:
    patient: str
    volume: object  # Volume4D
    roi: object  # BiTemporalRoiMap
    embeddings: dict = field(default_factory=dict)  # family -> {z: EmbeddingMap}


def _map_slices(fn, jobs, n_jobs):
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _slices(cases):
    return [(case, z) for case in cases for z in range(case.volume.spatial_dims[2])]


class BaselineFeatureExtractor(BaseEstimator, TransformerMixin):
    """Sliding-window first-order statistics, max-pooled per slice and ROI class."""

    def __init__(self, n_jobs=1):
        self.n_jobs = n_jobs

    def fit(self, cases, y=None):
        return self

    def transform(self, cases):
        per_slice = _map_slices(
            lambda job: baseline.extract_baseline_slice(job[0].volume, job[1], job[0].roi, job[0].patient),
            _slices(cases),
            self.n_jobs,
        )
        rows = [r for recs in per_slice for r in recs]
        return FeatureTable(baseline.FAMILY, baseline.BASELINE_FEATURES, rows)


class GlcmFeatureExtractor(BaseEstimator, TransformerMixin):
    """Per-slice 3D co-occurrence features (Imc1, Imc2, MCC, Correlation).

    Skipped classes are listed in ``audit_`` after ``transform``.
    """

    def __init__(self, bin_width=8.0, delta=1, direction_mode="average", n_jobs=1):
        self.bin_width = bin_width
        self.delta = delta
        self.direction_mode = direction_mode
        self.n_jobs = n_jobs

    def fit(self, cases, y=None):
        return self

    def transform(self, cases):
        def one(job):
            case, z = job
            audit = []
            recs = glcm.extract_glcm_slice(
                case.volume, z, case.roi, case.patient,
                self.bin_width, self.delta, self.direction_mode, audit,
            )
            return recs, audit

        results = _map_slices(one, _slices(cases), self.n_jobs)
        self.audit_ = [line for _, audit in results for line in audit]
        rows = [r for recs, _ in results for r in recs]
        return FeatureTable(glcm.FAMILY, glcm.GLCM_FEATURES, rows)


class EmbeddingAggregator(BaseEstimator, TransformerMixin):
    """Max-pool CNN activation maps per slice and ROI class.

    ``mode`` is ``"dense"`` (grid geometry from the map) or ``"grid"``
    (nearest-neighbour mask downsampling to the map's grid).
    """

    def __init__(self, family="MJNET", mode="dense"):
        self.family = family
        self.mode = mode

    def fit(self, cases, y=None):
        return self

    def transform(self, cases):
        rows = []
        dim = None
        for case in cases:
            maps = case.embeddings.get(self.family, {})
            for z in sorted(maps):
                emb = maps[z]
                dim = dim or emb.dim
                rows.extend(
                    aggregate_slice(emb, case.roi.labels[:, :, z], case.patient, z, self.family, self.mode)
                )
        return FeatureTable(self.family, [f"f{k}" for k in range(dim or 0)], rows)
