import math

import numpy as np
import pytest

from tissuevo.embeddings import aggregate_dense, aggregate_slice, downsample_mask, gap_patch, pool_patient
from tissuevo.errors import EmptyGroup, GeometryError
from tissuevo.roi import ROI_CLASSES, ROI_CODES
from tissuevo.volume_io import EmbeddingMap, FeatureRecord


def test_gap_all_ones():
    assert gap_patch(np.ones((4, 4, 1, 3))).tolist() == [1.0, 1.0, 1.0]


def test_gap_arithmetic_mean():
    a = np.zeros((4, 4, 1, 3))
    a[..., 0] = np.arange(1, 17).reshape(4, 4, 1)
    assert gap_patch(a).tolist() == [8.5, 0.0, 0.0]


def test_gap_matches_summation(rng):
    a = rng.normal(size=(4, 4, 1, 7))
    ref = [math.fsum(a[..., c].ravel()) / 16 for c in range(7)]
    np.testing.assert_allclose(gap_patch(a), ref, rtol=1e-9)


def test_singleton_vector_verbatim(rng):
    vec = rng.random((3, 3, 4), dtype=np.float32)
    labels = np.zeros((3, 3), np.uint8)
    labels[1, 2] = ROI_CODES["c_to_fi"]
    recs = aggregate_dense(EmbeddingMap(vec), labels, "pt", 0)
    assert len(recs) == 1 and recs[0].values == tuple(float(v) for v in vec[1, 2])


def test_elementwise_max():
    vec = np.zeros((1, 2, 2), np.float32)
    vec[0, 0] = (1, 0)
    vec[0, 1] = (0, 1)
    labels = np.full((1, 2), ROI_CODES["p_to_b"], np.uint8)
    assert aggregate_dense(EmbeddingMap(vec), labels, "pt", 0)[0].values == (1.0, 1.0)


def test_grid_matches_per_class_scan(rng):
    vec = rng.normal(size=(10, 10, 6)).astype(np.float32)
    labels = rng.integers(0, 7, (10, 10)).astype(np.uint8)
    recs = aggregate_dense(EmbeddingMap(vec), labels, "pt", 2)
    for r in recs:
        code = ROI_CODES[r.roi_class]
        expected = [max(float(vec[i, j, k]) for i in range(10) for j in range(10) if labels[i, j] == code)
                    for k in range(6)]
        assert list(r.values) == expected
    assert [r.roi_class for r in recs] == [c for c in ROI_CLASSES if (labels == ROI_CODES[c]).any()]


def test_stride_and_offset_geometry(rng):
    vec = rng.random((3, 3, 2), dtype=np.float32)
    labels = np.zeros((8, 8), np.uint8)
    labels[5, 3] = ROI_CODES["p_to_fi"]  # grid cell (2, 1) with stride 2, offset (1, 1)
    recs = aggregate_dense(EmbeddingMap(vec, stride=2, offset=(1, 1)), labels, "pt", 0)
    assert recs[0].values == tuple(float(v) for v in vec[2, 1])
    with pytest.raises(GeometryError):
        aggregate_dense(EmbeddingMap(rng.random((5, 5, 2)), stride=2), labels, "pt", 0)


def test_downsample_uniform_and_identity(rng):
    assert np.all(downsample_mask(np.full((16, 16), 3), 4) == 3)
    m = rng.integers(0, 7, (9, 9))
    np.testing.assert_array_equal(downsample_mask(m, 1), m)
    with pytest.raises(GeometryError):
        downsample_mask(m, 2)


def test_block_pattern_512(rng):
    blocks = rng.integers(0, 7, (8, 8))
    full = np.kron(blocks, np.ones((64, 64), dtype=blocks.dtype))
    np.testing.assert_array_equal(downsample_mask(full, 64), blocks)


def test_grid_mode_dispatch(rng):
    labels = np.kron(rng.integers(0, 7, (4, 4)), np.ones((2, 2), int)).astype(np.uint8)
    vec = rng.random((4, 4, 3), dtype=np.float32)
    recs = aggregate_slice(EmbeddingMap(vec), labels, "pt", 0, "NNUNET", "grid")
    ref = aggregate_dense(EmbeddingMap(vec, stride=2), labels, "pt", 0, "NNUNET")
    assert recs == ref


def _recs(vectors):
    return [FeatureRecord("pt", z, "p_to_b", "MJNET", tuple(v)) for z, v in enumerate(vectors)]


def test_pool_single_and_pair():
    assert pool_patient(_recs([(1.0, 2.0)])).vector.tolist() == [1.0, 2.0]
    assert pool_patient(_recs([(1.0, 0.0), (0.0, 1.0)])).vector.tolist() == [1.0, 1.0]
    with pytest.raises(EmptyGroup):
        pool_patient([])


def test_pool_five_slices(rng):
    vs = rng.normal(size=(5, 8))
    got = pool_patient(_recs(vs)).vector
    assert got.tolist() == [max(vs[z, k] for z in range(5)) for k in range(8)]
