"""Aggregate externally computed CNN activations into per-ROI descriptors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, GeometryError
from .volume_io import FeatureRecord


@dataclass
class PatientEmbedding:
    patient: str
    roi_class: str
    vector: np.ndarray


def gap_patch(activation):
    """Global average pool of a ``(4, 4, 1, C)`` activation block over all but the channel axis."""
    activation = np.asarray(activation, dtype=np.float64)
    return activation.reshape(-1, activation.shape[-1]).mean(axis=0)


def _class_max(vectors, labels):
    """Element-wise max of ``vectors[k]`` grouped by ``labels[k]`` (codes > 0)."""
    from .roi import ROI_LEGEND

    out = {}
    for code in np.unique(labels):
        if code == 0:
            continue
        out[ROI_LEGEND[int(code)]] = vectors[labels == code].max(axis=0)
    return out


def _records(pooled, patient, z, family):
    from .roi import ROI_CLASSES

    return [
        FeatureRecord(str(patient), int(z), name, family, tuple(float(v) for v in pooled[name]))
        for name in ROI_CLASSES
        if name in pooled
    ]


def aggregate_dense(emb, roi_slice, patient, z, family="MJNET"):
    """Max-pool grid vectors by the ROI label of the pixel each grid cell maps to."""
    roi_slice = np.asarray(roi_slice)
    rows, cols = emb.pixel_coords()
    nx, ny = roi_slice.shape
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= nx or cols.max() >= ny:
        raise GeometryError(
            f"grid {emb.grid_dims} with stride {emb.stride}, offset {emb.offset} leaves the {nx}x{ny} slice"
        )
    labels = roi_slice[np.ix_(rows, cols)]
    return _records(_class_max(emb.vectors, labels), patient, z, family)


def downsample_mask(roi_slice, factor):
    """Nearest-neighbour downsampling; cell ``(i, j)`` takes pixel ``(i*factor, j*factor)``."""
    roi_slice = np.asarray(roi_slice)
    factor = int(factor)
    if factor < 1 or roi_slice.shape[0] % factor or roi_slice.shape[1] % factor:
        raise GeometryError(f"factor {factor} does not divide slice shape {roi_slice.shape}")
    return roi_slice[::factor, ::factor].copy()


def aggregate_grid(emb, grid_labels, patient, z, family="NNUNET"):
    grid_labels = np.asarray(grid_labels)
    if grid_labels.shape != emb.grid_dims:
        raise GeometryError(f"label grid {grid_labels.shape} does not match embedding grid {emb.grid_dims}")
    return _records(_class_max(emb.vectors, grid_labels), patient, z, family)


def aggregate_slice(emb, roi_slice, patient, z, family, mode):
    """Dispatch on ``mode``: ``dense`` uses the map geometry, ``grid`` downsamples the mask."""
    if mode == "dense":
        return aggregate_dense(emb, roi_slice, patient, z, family)
    if mode == "grid":
        h, w = emb.grid_dims
        nx, ny = np.asarray(roi_slice).shape
        if nx % h or ny % w or nx // h != ny // w:
            raise GeometryError(f"slice {nx}x{ny} is not an integer multiple of grid {h}x{w}")
        return aggregate_grid(emb, downsample_mask(roi_slice, nx // h), patient, z, family)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def pool_patient(records):
    """Element-wise max over one patient's slice descriptors for one ROI class."""
    records = list(records)
    if not records:
        raise EmptyGroup("no slice records to pool")
    keys = {(r.patient, r.roi_class) for r in records}
    if len(keys) != 1:
        raise ValueError(f"records span several patient/class groups: {sorted(keys)}")
    stacked = np.array([r.values for r in records], dtype=np.float64)
    patient, roi_class = keys.pop()
    return PatientEmbedding(patient, roi_class, stacked.max(axis=0))


def pool_patients(table):
    """``{patient: {roi_class: vector}}`` for every group in a feature table."""
    groups = {}
    for r in table.rows:
        groups.setdefault((r.patient, r.roi_class), []).append(r)
    out = {}
    for (patient, roi_class), recs in sorted(groups.items()):
        out.setdefault(patient, {})[roi_class] = pool_patient(recs).vector
    return out
