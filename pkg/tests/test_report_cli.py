import csv
import json
import os

import numpy as np
import pytest

from oracles import quantile_oracle
from tissuevo.cli import main
from tissuevo.errors import EmptyGroup
from tissuevo.report import boxplot_summary, quantile_linear
from tissuevo.volume_io import FeatureRecord, FeatureTable, read_feature_table, read_nifti


def _table(values_by_class):
    rows = [FeatureRecord("pt", z, c, "X", (float(v),)) for c, vals in values_by_class.items()
            for z, v in enumerate(vals)]
    return FeatureTable("X", ["f"], rows)


def test_single_value_box():
    (s,) = boxplot_summary(_table({"p_to_b": [3.5]}))
    assert s.min == s.q1 == s.median == s.q3 == s.max == 3.5 and s.n == 1


def test_quartiles_one_to_four():
    (s,) = boxplot_summary(_table({"p_to_fi": [4, 2, 1, 3]}))
    assert (s.q1, s.median, s.q3) == (1.75, 2.5, 3.25)
    assert s.n_outliers == 0


def test_outlier_fences():
    (s,) = boxplot_summary(_table({"c_to_b": [1, 2, 3, 4, 5, 100]}))
    assert s.n_outliers == 1


def test_quantiles_match_sort_oracle(rng):
    v = rng.normal(size=1000)
    sv = np.sort(v)
    for q in (0.0, 0.1, 0.25, 0.5, 0.75, 0.99, 1.0):
        assert quantile_linear(sv, q) == pytest.approx(quantile_oracle(list(v), q), abs=1e-9)
        assert quantile_linear(sv, q) == pytest.approx(np.quantile(v, q), abs=1e-9)


def test_box_empty():
    with pytest.raises(EmptyGroup):
        boxplot_summary(_table({}))


# --------------------------------------------------------------------------- CLI


def test_phantom_default_writes_three_files(tmp_path):
    assert main(["phantom", "--out", str(tmp_path)]) == 0
    assert sorted(os.listdir(tmp_path)) == ["t1.nii.gz", "t2.nii.gz", "volume.nii.gz"]
    assert read_nifti(tmp_path / "volume.nii.gz").dims == (32, 32, 8, 20)


def test_phantom_seed_changes_volume_only(tmp_path):
    main(["phantom", "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["phantom", "--out", str(tmp_path / "b"), "--seed", "2"])
    va, vb = (read_nifti(tmp_path / d / "volume.nii.gz").values for d in "ab")
    assert not np.array_equal(va, vb)
    for name in ("t1.nii.gz", "t2.nii.gz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_phantom_bad_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["phantom", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    conflict = {"dims": [8, 8, 2, 5], "regions": [
        {"class": "p", "center": [4, 4, 1], "radius": 2, "tac": {"peak": 50}},
        {"class": "p", "center": [4, 4, 1], "radius": 3, "tac": {"peak": 60}}]}
    (tmp_path / "c.json").write_text(json.dumps(conflict))
    assert main(["phantom", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    assert "ConfigConflict" in capsys.readouterr().err


@pytest.fixture(scope="module")
def phantom_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert main(["phantom", "--out", str(root / "in"), "--embeddings"]) == 0
    assert main(["run", "--config", str(root / "in" / "run_config.json"), "--out", str(root / "out")]) == 0
    return root


EXPECTED = [
    "boxplots.csv", "features_BL.csv", "features_GLCM.csv", "features_MJNET.csv", "features_NNUNET.csv",
    "manifest.json", "normality.csv", "separation_MJNET.csv", "separation_NNUNET.csv",
    "separation_tests_MJNET.csv", "separation_tests_NNUNET.csv", "similarity_counts_MJNET.csv",
    "similarity_counts_NNUNET.csv", "similarity_matrix_MJNET.csv", "similarity_matrix_NNUNET.csv",
    "stats.csv", "tsne.csv",
]


def test_run_outputs_exist_and_parse(phantom_run):
    out = phantom_run / "out"
    assert sorted(f for f in os.listdir(out) if os.path.isfile(out / f)) == EXPECTED
    for name in EXPECTED:
        if name.endswith(".csv"):
            with open(out / name, newline="") as fh:
                rows = list(csv.reader(fh))
            assert rows and all(len(r) == len(rows[0]) for r in rows), name
    for fam in ("BL", "GLCM", "MJNET", "NNUNET"):
        assert len(read_feature_table(out / f"features_{fam}.csv")) > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert set(manifest["outputs"]) >= set(EXPECTED) - {"manifest.json"}
    for fam in ("BL", "GLCM"):
        a = manifest["audit"]["features"][fam]
        assert a["records"] + a["skipped"] == a["classes_present"]


def test_rerun_is_byte_identical(phantom_run, tmp_path):
    cfg = phantom_run / "in" / "run_config.json"
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--workers", "3"]) == 0
    for name in EXPECTED:
        assert (tmp_path / name).read_bytes() == (phantom_run / "out" / name).read_bytes(), name


def test_stage_subcommands(phantom_run, tmp_path):
    cfg = str(phantom_run / "in" / "run_config.json")
    assert main(["features", "--config", cfg, "--out", str(tmp_path)]) == 0
    for stage in ("stats", "similarity", "report"):
        assert main([stage, "--config", cfg, "--out", str(tmp_path)]) == 0
    for name in ("stats.csv", "similarity_matrix_MJNET.csv", "boxplots.csv"):
        assert (tmp_path / name).read_bytes() == (phantom_run / "out" / name).read_bytes()


def test_stage_without_features_is_data_error(phantom_run, tmp_path):
    cfg = str(phantom_run / "in" / "run_config.json")
    assert main(["stats", "--config", cfg, "--out", str(tmp_path)]) == 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "error" and manifest["error"]["name"] == "DataError"


def test_missing_t2_is_validation_error(phantom_run, tmp_path, capsys):
    cfg = json.loads((phantom_run / "in" / "run_config.json").read_text())
    del cfg["patients"][0]["t2"]
    path = phantom_run / "in" / "no_t2.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "patients[0].t2" in capsys.readouterr().err


def test_corrupt_input_is_data_error(phantom_run, tmp_path):
    src = phantom_run / "in"
    cfg = json.loads((src / "run_config.json").read_text())
    bad = tmp_path / "broken.nii"
    bad.write_bytes(b"\x00" * 100)
    cfg["patients"][0] = {k: (str(src / v) if isinstance(v, str) and k != "id" else v)
                          for k, v in cfg["patients"][0].items()}
    cfg["patients"][0]["volume"] = str(bad)
    cfg["patients"][0].pop("embeddings")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["error"]["name"] == "CorruptFile"
