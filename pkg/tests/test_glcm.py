import numpy as np
import pytest

from oracles import direction_features_oracle, glcm_oracle, half_neighbourhood, pair_counts_oracle, quantize_oracle
from tissuevo.errors import DegenerateGlcm
from tissuevo.glcm import (
    DEGENERATE,
    accumulate_glcm,
    direction_features,
    directions,
    extract_glcm_slice,
    glcm_features,
    quantize,
    region_features,
)
from tissuevo.roi import ROI_CODES, BiTemporalRoiMap
from tissuevo.volume_io import Volume4D


def test_thirteen_directions():
    assert sorted(directions(1)) == sorted(half_neighbourhood(1))
    assert len(directions(2)) == 13 and (2, 0, 0) in directions(2)


def test_quantize_example():
    levels, ng = quantize(np.array([0.0, 7.9, 8.0]), np.ones(3, bool), 8.0)
    assert levels.tolist() == [1, 1, 2] and ng == 2


def test_quantize_constant():
    levels, ng = quantize(np.full((3, 3), 5.0), np.ones((3, 3), bool))
    assert ng == 1 and np.all(levels == 1)


def test_quantize_matches_oracle(rng):
    v = rng.uniform(-50, 200, (6, 5, 4))
    mask = rng.random(v.shape) < 0.7
    levels, _ = quantize(v, mask, 8.0)
    np.testing.assert_array_equal(levels, quantize_oracle(v, mask, 8.0))


def test_single_pair_counts():
    levels = np.array([1, 2]).reshape(2, 1, 1)
    acc = accumulate_glcm(levels, np.ones((2, 1, 1), bool))
    k = acc.offsets.index((1, 0, 0))
    assert acc.counts[k].tolist() == [[0, 1], [1, 0]]
    others = np.delete(acc.counts, k, axis=0)
    assert not others.any()


def test_isolated_voxels_are_degenerate():
    mask = np.zeros((5, 5, 5), bool)
    mask[0, 0, 0] = mask[4, 4, 4] = True
    levels = np.where(mask, 1, 0)
    levels[4, 4, 4] = 2
    acc = accumulate_glcm(levels, mask, n_levels=2)
    assert not acc.counts.any()
    with pytest.raises(DegenerateGlcm):
        glcm_features(acc)


def test_counts_match_pair_enumeration(rng):
    levels = rng.integers(1, 5, (4, 4, 3))
    mask = rng.random(levels.shape) < 0.8
    acc = accumulate_glcm(levels, mask, n_levels=4)
    for k, off in enumerate(acc.offsets):
        assert acc.counts[k].tolist() == pair_counts_oracle(levels, mask, off, 4)


def test_checkerboard_correlation():
    x, y = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
    levels = ((x + y) % 2 + 1)[:, :, None]
    acc = accumulate_glcm(levels, np.ones(levels.shape, bool), n_levels=2)
    for off in [(1, 0, 0), (0, 1, 0)]:
        c = acc.counts[acc.offsets.index(off)].astype(float)
        assert c[0, 0] == c[1, 1] == 0
        assert direction_features(c / c.sum())[3] == pytest.approx(-1.0, abs=1e-15)


def test_constant_region_single_level():
    feats, acc = region_features(np.full((4, 4, 3), 9.0), np.ones((4, 4, 3), bool))
    assert acc.n_levels == 1 and feats == DEGENERATE


def test_seeded_region_matches_formula_oracle(rng):
    values = rng.uniform(0, 24, (6, 6, 4))  # three levels, so the oracle uses the characteristic polynomial
    mask = np.ones(values.shape, bool)
    feats, acc = region_features(values, mask)
    assert acc.n_levels == 3
    np.testing.assert_allclose(feats, glcm_oracle(values, mask), rtol=1e-9)


def test_merged_mode(rng):
    values = rng.uniform(0, 40, (5, 5, 3))
    mask = np.ones(values.shape, bool)
    levels, ng = quantize(values, mask)
    acc = accumulate_glcm(levels, mask, 1, ng)
    merged = acc.counts.sum(axis=0)
    np.testing.assert_allclose(glcm_features(acc, "merged"), direction_features_oracle(merged.tolist()),
                               rtol=1e-9)


def _roi(labels):
    return BiTemporalRoiMap(labels[:, :, None].astype(np.uint8))


def test_constant_column_skipped_and_logged(caplog):
    values = np.zeros((4, 4, 1, 30), np.float32)
    values[1, 1, 0, :] = 50
    labels = np.zeros((4, 4), np.uint8)
    labels[1, 1] = ROI_CODES["c_to_fi"]
    audit = []
    with caplog.at_level("INFO"):
        recs = extract_glcm_slice(Volume4D(values), 0, _roi(labels), "pt", audit=audit)
    assert recs == []
    assert audit == ["SKIP glcm pt 0 c_to_fi SingleLevel"]
    assert "SKIP glcm pt 0 c_to_fi SingleLevel" in caplog.text


def test_at_most_one_record_per_class(rng):
    values = rng.uniform(0, 60, (6, 6, 1, 8)).astype(np.float32)
    labels = np.zeros((6, 6), np.uint8)
    labels[:3] = ROI_CODES["p_to_b"]
    labels[3:] = ROI_CODES["p_to_fi"]
    recs = extract_glcm_slice(Volume4D(values), 0, _roi(labels), "pt")
    assert [r.roi_class for r in recs] == ["p_to_b", "p_to_fi"]


def test_textured_class_has_lower_imc2(rng):
    t = np.arange(20)
    smooth_tac = 30 + 40 * np.exp(-((t - 10) ** 2) / 18.0)
    values = np.empty((12, 12, 1, 20), np.float32)
    values[:6] = smooth_tac + rng.normal(0, 0.5, (6, 12, 1, 20))
    values[6:] = smooth_tac + rng.normal(0, 15, (6, 12, 1, 20))
    labels = np.zeros((12, 12), np.uint8)
    labels[:6] = ROI_CODES["p_to_b"]
    labels[6:] = ROI_CODES["p_to_fi"]
    recs = {r.roi_class: r.values for r in extract_glcm_slice(Volume4D(values), 0, _roi(labels), "pt")}
    assert recs["p_to_fi"][1] < recs["p_to_b"][1]
    plane = values[:, :, 0, :].astype(np.float64)
    for name, rows in (("p_to_b", slice(0, 6)), ("p_to_fi", slice(6, 12))):
        mask = np.zeros(plane.shape, bool)
        mask[rows] = True
        np.testing.assert_allclose(recs[name], glcm_oracle(plane, mask), rtol=1e-9)
