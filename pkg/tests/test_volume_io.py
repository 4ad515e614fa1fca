import gzip
import json

import numpy as np
import pytest

from tissuevo.errors import CorruptFile, InvalidData, UnsupportedFormat
from tissuevo.volume_io import (
    EmbeddingMap,
    FeatureRecord,
    FeatureTable,
    LabelMask,
    Volume4D,
    build_nifti_header,
    read_embedding_blob,
    read_feature_table,
    read_nifti,
    write_embedding_blob,
    write_feature_table,
    write_nifti,
)


def _raw_nifti(path, data, code, slope=1.0, inter=0.0, pad=0):
    hdr = build_nifti_header(data.shape, code, (1.0, 1.0, 1.0), slope, inter)
    body = np.asarray(data).tobytes(order="F")
    path.write_bytes(hdr.tobytes() + b"\x00" * 4 + body[: len(body) - pad])


def test_float_volume_identity_scaling(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 1, 3, order="F")
    _raw_nifti(tmp_path / "v.nii", data, 16)
    vol = read_nifti(tmp_path / "v.nii")
    assert vol.dims == (2, 2, 1, 3)
    # declared (Fortran) order: x fastest, t slowest
    assert vol.values.ravel(order="F").tolist() == list(range(12))


def test_slope_intercept_applied(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 1, 3)
    _raw_nifti(tmp_path / "v.nii", data, 16, slope=2.0, inter=1.0)
    vol = read_nifti(tmp_path / "v.nii")
    np.testing.assert_array_equal(vol.values, 2 * data + 1)


def test_int16_scaled_volume(tmp_path):
    data = np.arange(-4, 4, dtype=np.int16).reshape(2, 2, 2, 1)
    _raw_nifti(tmp_path / "v.nii", data, 4, slope=0.5, inter=-3.0)
    vol = read_nifti(tmp_path / "v.nii")
    np.testing.assert_array_equal(vol.values, data * 0.5 - 3.0)


def test_short_payload_is_corrupt(tmp_path):
    data = np.zeros((2, 2, 2, 2), dtype=np.float32)
    _raw_nifti(tmp_path / "v.nii", data, 16, pad=8 * 4)
    with pytest.raises(CorruptFile):
        read_nifti(tmp_path / "v.nii")


def test_unsupported_datatype(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.float32)
    hdr = build_nifti_header(data.shape, 16, (1, 1, 1))
    hdr["datatype"] = 64
    (tmp_path / "v.nii").write_bytes(hdr.tobytes() + b"\x00" * 4 + data.tobytes())
    with pytest.raises(UnsupportedFormat):
        read_nifti(tmp_path / "v.nii")


def test_bad_magic(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.float32)
    hdr = build_nifti_header(data.shape, 16, (1, 1, 1))
    hdr["magic"] = b"xyz"
    (tmp_path / "v.nii").write_bytes(hdr.tobytes() + b"\x00" * 4 + data.tobytes())
    with pytest.raises((CorruptFile, UnsupportedFormat)):
        read_nifti(tmp_path / "v.nii")


def test_volume_and_mask_round_trip_gz(tmp_path, rng):
    vol = Volume4D(rng.normal(40, 10, (5, 4, 3, 6)).astype(np.float32), (0.5, 0.5, 2.0))
    mask = LabelMask(rng.integers(0, 3, (5, 4, 3)).astype(np.uint8), {0: "background", 1: "a", 2: "b"})
    write_nifti(vol, tmp_path / "v.nii.gz")
    write_nifti(mask, tmp_path / "m.nii.gz")
    back = read_nifti(tmp_path / "v.nii.gz")
    np.testing.assert_array_equal(back.values, vol.values)
    assert back.spacing_mm == (0.5, 0.5, 2.0)
    m = read_nifti(tmp_path / "m.nii.gz", legend=mask.legend)
    assert isinstance(m, LabelMask)
    np.testing.assert_array_equal(m.labels, mask.labels)
    assert m.legend == mask.legend
    # gzip header carries no timestamp
    first = (tmp_path / "v.nii.gz").read_bytes()
    write_nifti(vol, tmp_path / "v.nii.gz")
    assert (tmp_path / "v.nii.gz").read_bytes() == first
    with gzip.open(tmp_path / "v.nii.gz") as fh:
        assert len(fh.read()) == 352 + vol.values.size * 4


def test_volume_rejects_nan():
    with pytest.raises(InvalidData):
        Volume4D(np.full((2, 2, 2, 2), np.nan))


# --------------------------------------------------------------------------- .emb


def _emb_file(path, header, payload):
    path.write_bytes(json.dumps(header).encode() + b"\n" + np.asarray(payload, dtype="<f4").tobytes())


def test_single_vector_blob(tmp_path):
    _emb_file(tmp_path / "a.emb", {"H": 1, "W": 1, "D": 3, "stride": 1, "offset": [0, 0]}, [1, 2, 3])
    emb = read_embedding_blob(tmp_path / "a.emb")
    assert emb.grid_dims == (1, 1)
    assert emb.vectors[0, 0].tolist() == [1.0, 2.0, 3.0]


def test_full_size_blob(tmp_path, rng):
    payload = rng.random((256, 64, 64), dtype=np.float32)
    _emb_file(tmp_path / "a.emb", {"D": 256, "H": 64, "W": 64, "stride": 8, "offset": [0, 0]}, payload)
    assert (tmp_path / "a.emb").stat().st_size - len(json.dumps({"D": 256, "H": 64, "W": 64, "stride": 8,
                                                                  "offset": [0, 0]})) - 1 == 4_194_304
    emb = read_embedding_blob(tmp_path / "a.emb")
    assert emb.grid_dims == (64, 64) and emb.dim == 256
    # channel-major payload: vector (i, j) is payload[:, i, j]
    np.testing.assert_array_equal(emb.vectors[5, 9], payload[:, 5, 9])


def test_truncated_blob(tmp_path):
    _emb_file(tmp_path / "a.emb", {"H": 2, "W": 2, "D": 3}, np.zeros(11))
    with pytest.raises(CorruptFile):
        read_embedding_blob(tmp_path / "a.emb")


def test_blob_round_trip(tmp_path, rng):
    emb = EmbeddingMap(rng.random((4, 6, 5), dtype=np.float32), stride=2, offset=(1, 0))
    write_embedding_blob(emb, tmp_path / "b.emb")
    back = read_embedding_blob(tmp_path / "b.emb")
    np.testing.assert_array_equal(back.vectors, emb.vectors)
    assert (back.stride, back.offset) == (2, (1, 0))


# --------------------------------------------------------------------------- CSV


def test_empty_table_is_header_only(tmp_path):
    write_feature_table(FeatureTable("BL", ["mean", "std", "skewness", "kurtosis", "min", "max"], []),
                        tmp_path / "features_BL.csv")
    text = (tmp_path / "features_BL.csv").read_text()
    assert text == "patient,slice,roi_class,family,f0,f1,f2,f3,f4,f5\n"
    assert read_feature_table(tmp_path / "features_BL.csv").family == "BL"


def test_one_record_has_ten_columns(tmp_path):
    rec = FeatureRecord("pt01", 3, "p_to_fi", "BL", (1.0, 2.0, 0.5, -1.0, 0.0, 3.25))
    write_feature_table(FeatureTable("BL", [f"f{k}" for k in range(6)], [rec]), tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].split(",") == ["pt01", "3", "p_to_fi", "BL", "1", "2", "0.5", "-1", "0", "3.25"]


def test_round_trip_100_records(tmp_path, rng):
    classes = ["CLB_to_b", "NHB_to_fi", "p_to_b", "p_to_fi", "c_to_b", "c_to_fi"]
    keys = set()
    while len(keys) < 100:
        keys.add((f"pt{rng.integers(0, 9):02d}", int(rng.integers(0, 40)), classes[rng.integers(0, 6)]))
    rows = [FeatureRecord(p, z, c, "GLCM", tuple(rng.normal(0, 10, 4) * 10.0 ** rng.integers(-5, 5)))
            for p, z, c in sorted(keys)]
    table = FeatureTable("GLCM", ["imc1", "imc2", "mcc", "correlation"], rows)
    write_feature_table(table, tmp_path / "t.csv")
    back = read_feature_table(tmp_path / "t.csv")
    assert back.feature_names == ["imc1", "imc2", "mcc", "correlation"]
    got = {r.key: r.values for r in back.rows}
    assert set(got) == {r.key for r in rows}
    for r in rows:
        np.testing.assert_allclose(got[r.key], r.values, rtol=1e-6)
