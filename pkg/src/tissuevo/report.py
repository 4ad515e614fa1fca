"""Pipeline orchestration, tabular outputs and the run manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .embeddings import pool_patients
from .errors import ConfigError, DataError, DegenerateSample, EmptyGroup, TissuevoError, ValidationError
from .features import BaselineFeatureExtractor, Case, EmbeddingAggregator, GlcmFeatureExtractor
from .phantom import RNG_ALGORITHM
from .roi import ROI_CLASSES, T1_LEGEND, T2_LEGEND, roi_from_t1_t2
from .similarity import SEPARATION_TESTS, group_similarity_matrix, patient_separation, separation_test
from .stats import STATS_HEADER, compare_groups, shapiro_wilk
from .tsne import TSNE, TsneConfig
from .volume_io import (
    read_embedding_blob,
    read_feature_table,
    read_nifti,
    write_csv,
    write_feature_table,
    write_nifti,
)

log = logging.getLogger(__name__)

# Region pairs compared for the hand-crafted feature families.
DEFAULT_TESTS = {
    "test1": ("p_to_b", "p_to_fi"),
    "test2": ("c_to_b", "c_to_fi"),
    "test3": ("NHB_to_fi", "p_to_fi"),
}
STAT_FAMILIES = ("BL", "GLCM")
EMBEDDING_MODES = {"MJNET": "dense", "NNUNET": "grid"}


# --------------------------------------------------------------------------- box plots


@dataclass
class BoxplotSummary:
    family: str
    roi_class: str
    feature: str
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n_outliers: int

    def as_row(self):
        return [self.family, self.roi_class, self.feature, self.n,
                self.min, self.q1, self.median, self.q3, self.max, self.n_outliers]


BOXPLOT_HEADER = ["family", "roi_class", "feature", "n", "min", "q1", "median", "q3", "max", "n_outliers"]


def quantile_linear(sorted_values, q):
    """Linear interpolation between order statistics (type 7)."""
    n = len(sorted_values)
    h = (n - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    return float(sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo]))


def boxplot_summary(table):
    """Five-number summaries and 1.5 IQR outlier counts per (ROI class, feature)."""
    if not len(table):
        raise EmptyGroup("box plots need a non-empty table")
    classes = [c for c in ROI_CLASSES if any(r.roi_class == c for r in table.rows)]
    out = []
    for roi_class in classes:
        for name in table.feature_names:
            v = np.sort(table.column(name, roi_class))
            q1, med, q3 = (quantile_linear(v, q) for q in (0.25, 0.5, 0.75))
            iqr = q3 - q1
            outliers = int(np.count_nonzero((v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)))
            out.append(BoxplotSummary(table.family, roi_class, name, v.size,
                                      float(v[0]), q1, med, q3, float(v[-1]), outliers))
    return out


# --------------------------------------------------------------------------- config


@dataclass
class PatientInputs:
    patient: str
    volume: str
    t1: str
    t2: str
    embeddings: dict = field(default_factory=dict)  # family -> {z: path}


@dataclass
class RunConfig:
    patients: list
    output_dir: str
    core_dilation_radius: int = 1
    bin_width: float = 8.0
    delta: int = 1
    direction_mode: str = "average"
    tests: dict = field(default_factory=lambda: dict(DEFAULT_TESTS))
    family_sizes: dict = field(default_factory=dict)
    include_self_pairs: bool = True
    embedding_modes: dict = field(default_factory=lambda: dict(EMBEDDING_MODES))
    tsne: TsneConfig = field(default_factory=TsneConfig)
    tsne_enabled: bool = True
    workers: int = 1
    raw: dict = field(default_factory=dict)


def _require(data, key, where):
    if key not in data or data[key] in (None, ""):
        raise ValidationError(f"{where}{key}: required field missing")
    return data[key]


def _resolve(base, path, where):
    full = path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))
    if not os.path.exists(full):
        raise ValidationError(f"{where}: file not found: {path}")
    return full


def load_run_config(path, out_dir=None, seed=None, workers=None):
    """Parse and validate a run config; relative paths resolve against its directory."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    return run_config_from_dict(data, os.path.dirname(os.path.abspath(path)), out_dir, seed, workers)


def run_config_from_dict(data, base=".", out_dir=None, seed=None, workers=None):
    patients = _require(data, "patients", "")
    if not isinstance(patients, list) or not patients:
        raise ValidationError("patients: must be a non-empty list")
    parsed, seen = [], set()
    for k, p in enumerate(patients):
        where = f"patients[{k}]."
        pid = str(_require(p, "id", where))
        if pid in seen:
            raise ValidationError(f"{where}id: duplicate patient id {pid!r}")
        seen.add(pid)
        files = {key: _resolve(base, _require(p, key, where), where + key) for key in ("volume", "t1", "t2")}
        embs = {}
        for family, blobs in (p.get("embeddings") or {}).items():
            embs[family] = {
                int(z): _resolve(base, blob, f"{where}embeddings.{family}[{z}]") for z, blob in blobs.items()
            }
        parsed.append(PatientInputs(pid, files["volume"], files["t1"], files["t2"], embs))

    out = out_dir or data.get("output_dir")
    if not out:
        raise ValidationError("output_dir: required field missing (or pass --out)")
    out = out if os.path.isabs(out) or out_dir else os.path.join(base, out)

    glcm_cfg = data.get("glcm", {})
    stats_cfg = data.get("stats", {})
    sim_cfg = data.get("similarity", {})
    tsne_cfg = dict(data.get("tsne", {}))
    tsne_enabled = bool(tsne_cfg.pop("enabled", True))
    if seed is not None:
        tsne_cfg["seed"] = int(seed)
    try:
        tsne = TsneConfig(**tsne_cfg)
    except TypeError as exc:
        raise ValidationError(f"tsne: {exc}") from exc
    except ConfigError as exc:
        raise ValidationError(f"tsne: {exc}") from exc

    radius = int(data.get("core_dilation_radius", 1))
    bin_width = float(glcm_cfg.get("bin_width", 8.0))
    delta = int(glcm_cfg.get("delta", 1))
    mode = glcm_cfg.get("direction_mode", "average")
    if radius < 0:
        raise ValidationError("core_dilation_radius: must be >= 0")
    if bin_width <= 0:
        raise ValidationError("glcm.bin_width: must be positive")
    if delta < 1:
        raise ValidationError("glcm.delta: must be >= 1")
    if mode not in ("average", "merged"):
        raise ValidationError("glcm.direction_mode: must be 'average' or 'merged'")
    tests = {k: tuple(v) for k, v in stats_cfg.get("tests", DEFAULT_TESTS).items()}
    for k, pair in tests.items():
        if len(pair) != 2 or any(c not in ROI_CLASSES for c in pair):
            raise ValidationError(f"stats.tests.{k}: must name two ROI classes from {ROI_CLASSES}")
    modes = dict(EMBEDDING_MODES)
    modes.update(sim_cfg.get("modes", {}))

    return RunConfig(
        patients=parsed,
        output_dir=out,
        core_dilation_radius=radius,
        bin_width=bin_width,
        delta=delta,
        direction_mode=mode,
        tests=tests,
        family_sizes={k: int(v) for k, v in stats_cfg.get("family_sizes", {}).items()},
        include_self_pairs=bool(sim_cfg.get("include_self_pairs", True)),
        embedding_modes=modes,
        tsne=tsne,
        tsne_enabled=tsne_enabled,
        workers=int(workers if workers is not None else data.get("workers", 1)),
        raw=data,
    )


def config_hash(config):
    """SHA-256 over the analysis settings.

    File locations and the worker count are left out so that relocated
    inputs or a different thread count hash the same; input contents are
    hashed separately in the manifest.
    """
    payload = {
        "patients": [
            {"id": p.patient, "embeddings": sorted((f, sorted(z)) for f, z in p.embeddings.items())}
            for p in config.patients
        ],
        "core_dilation_radius": config.core_dilation_radius,
        "glcm": [config.bin_width, config.delta, config.direction_mode],
        "tests": config.tests,
        "family_sizes": config.family_sizes,
        "include_self_pairs": config.include_self_pairs,
        "embedding_modes": config.embedding_modes,
        "tsne": vars(config.tsne),
        "tsne_enabled": config.tsne_enabled,
    }
    blob = json.dumps(payload, sort_keys=True, default=list).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------- stages


@dataclass
class RunState:
    config: RunConfig
    audit: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)

    def path(self, name):
        return os.path.join(self.config.output_dir, name)

    def record(self, name):
        self.outputs.append(name)


def load_cases(state):
    cfg = state.config
    cases = []
    roi_audit = {}
    os.makedirs(state.path("roi"), exist_ok=True)
    for p in cfg.patients:
        volume = read_nifti(p.volume)
        t1 = read_nifti(p.t1, legend=T1_LEGEND)
        t2 = read_nifti(p.t2, legend=T2_LEGEND)
        for name, mask in (("t1", t1), ("t2", t2)):
            if not hasattr(mask, "labels"):
                raise DataError(f"patient {p.patient}: {name} is not a uint8 label volume")
            if mask.dims != volume.spatial_dims:
                raise DataError(f"patient {p.patient}: {name} dims {mask.dims} != volume {volume.spatial_dims}")
        roi = roi_from_t1_t2(t1, t2, cfg.core_dilation_radius)
        roi_audit[p.patient] = roi.audit
        name = os.path.join("roi", f"{p.patient}.nii.gz")
        write_nifti(roi.to_label_mask(), state.path(name))
        state.record(name)
        embs = {family: {z: read_embedding_blob(path) for z, path in blobs.items()}
                for family, blobs in p.embeddings.items()}
        cases.append(Case(p.patient, volume, roi, embs))
        state.inputs[p.patient] = {
            "volume": _sha256(p.volume),
            "t1": _sha256(p.t1),
            "t2": _sha256(p.t2),
            "embeddings": {f: {str(z): _sha256(path) for z, path in sorted(blobs.items())}
                           for f, blobs in sorted(p.embeddings.items())},
        }
    state.audit["roi"] = roi_audit
    return cases


def _presence(cases):
    """Number of (slice, class) pairs present at window centres / anywhere on the slice."""
    centre, full = 0, 0
    for case in cases:
        labels = case.roi.labels
        for z in range(labels.shape[2]):
            full += len(set(np.unique(labels[:, :, z]).tolist()) - {0})
            centre += len(set(np.unique(labels[1:-1, 1:-1, z]).tolist()) - {0})
    return centre, full


def extract_features(state, cases):
    cfg = state.config
    tables = {}
    tables["BL"] = BaselineFeatureExtractor(n_jobs=cfg.workers).transform(cases)
    glcm_ext = GlcmFeatureExtractor(cfg.bin_width, cfg.delta, cfg.direction_mode, n_jobs=cfg.workers)
    tables["GLCM"] = glcm_ext.transform(cases)
    centre, full = _presence(cases)
    state.audit["features"] = {
        "BL": {"classes_present": centre, "records": len(tables["BL"]), "skipped": centre - len(tables["BL"])},
        "GLCM": {"classes_present": full, "records": len(tables["GLCM"]), "skipped": len(glcm_ext.audit_)},
    }
    state.audit["glcm_skips"] = glcm_ext.audit_
    families = sorted({f for c in cases for f in c.embeddings})
    for family in families:
        mode = cfg.embedding_modes.get(family, "dense")
        tables[family] = EmbeddingAggregator(family, mode).transform(cases)
        state.audit["features"][family] = {"records": len(tables[family]), "mode": mode}
    for family, table in tables.items():
        name = f"features_{family}.csv"
        write_feature_table(table, state.path(name))
        state.record(name)
    return tables


def load_feature_tables(state, families=None):
    tables = {}
    for fname in sorted(os.listdir(state.config.output_dir)):
        if not (fname.startswith("features_") and fname.endswith(".csv")):
            continue
        family = fname[len("features_") : -len(".csv")]
        if families is None or family in families:
            tables[family] = read_feature_table(state.path(fname))
    if families is not None:
        missing = [f for f in families if f not in tables]
        if missing:
            raise DataError(f"feature tables missing for {missing}; run the 'features' stage first")
    return tables


def run_stats(state, tables):
    cfg = state.config
    rows, skipped, normality = [], [], []
    for family in STAT_FAMILIES:
        table = tables.get(family)
        if table is None:
            continue
        size = cfg.family_sizes.get(family, len(table.feature_names))
        for test_id in sorted(cfg.tests):
            roi_a, roi_b = cfg.tests[test_id]
            a = {n: table.column(n, roi_a) for n in table.feature_names}
            b = {n: table.column(n, roi_b) for n in table.feature_names}
            if not len(a[table.feature_names[0]]) or not len(b[table.feature_names[0]]):
                skipped.append(f"SKIP stats {family} {test_id} EmptySample")
                continue
            for res in compare_groups(test_id, roi_a, roi_b, table.feature_names, a, b, size):
                rows.append([family] + res.as_row())
        for name in table.feature_names:
            x = table.column(name)
            try:
                w, p = shapiro_wilk(x)
                normality.append([family, name, x.size, w, p, "reject" if p < 0.05 else "accept"])
            except DataError as exc:
                normality.append([family, name, x.size, "", "", type(exc).__name__])
    write_csv(state.path("stats.csv"), ["family"] + STATS_HEADER, rows)
    write_csv(state.path("normality.csv"), ["family", "feature", "n", "W", "p", "normality"], normality)
    state.record("stats.csv")
    state.record("normality.csv")
    state.audit["stats_skips"] = skipped


def run_similarity(state, tables):
    cfg = state.config
    skips = []
    for family in sorted(tables):
        if family in STAT_FAMILIES:
            continue
        table = tables[family]
        patients = sorted({r.patient for r in table.rows})
        sep_rows, test_rows = [], []
        for test_id in sorted(SEPARATION_TESTS):
            results = []
            for pt in patients:
                res = patient_separation(table, pt, test_id, cfg.include_self_pairs, skips)
                if res is None:
                    skips.append(f"SKIP separation {family} {pt} {test_id} EmptyGroup")
                    continue
                results.append(res)
                sep_rows.append([res.patient, test_id, res.delta_cos, res.n_slices_group1, res.n_slices_group2])
            if not results:
                continue
            try:
                median, p = separation_test(results)
                test_rows.append([test_id, len(results), median, p, ""])
            except DegenerateSample:
                test_rows.append([test_id, len(results), float(np.median([r.delta_cos for r in results])),
                                  "", "DegenerateSample"])
        sep_rows.sort(key=lambda r: (r[0], r[1]))
        write_csv(state.path(f"separation_{family}.csv"), ["patient", "test_id", "delta_cos", "n1", "n2"], sep_rows)
        write_csv(state.path(f"separation_tests_{family}.csv"),
                  ["test_id", "n_patients", "median_delta_cos", "p", "note"], test_rows)

        matrix = group_similarity_matrix(pool_patients(table))
        header = ["roi"] + matrix.classes
        mrows = [[a] + [("" if np.isnan(v) else float(v)) for v in matrix.values[k]]
                 for k, a in enumerate(matrix.classes)]
        crows = [[a] + [int(v) for v in matrix.counts[k]] for k, a in enumerate(matrix.classes)]
        write_csv(state.path(f"similarity_matrix_{family}.csv"), header, mrows)
        write_csv(state.path(f"similarity_counts_{family}.csv"), header, crows)
        for name in (f"separation_{family}.csv", f"separation_tests_{family}.csv",
                     f"similarity_matrix_{family}.csv", f"similarity_counts_{family}.csv"):
            state.record(name)
    state.audit["similarity_skips"] = skips


def run_tsne_stage(state, tables):
    cfg = state.config
    rows, notes = [], {}
    for family in sorted(tables):
        table = tables[family]
        recs = table.sorted_rows()
        n = len(recs)
        if n < 10:
            notes[family] = f"skipped: {n} records (< 10)"
            continue
        perplexity = cfg.tsne.perplexity
        if 3 * perplexity >= n:
            perplexity = max(2.0, float((n - 1) // 3))
            if 3 * perplexity >= n:
                notes[family] = f"skipped: {n} records too few for perplexity >= 2"
                continue
            notes[family] = f"perplexity capped to {perplexity} for {n} records"
        model = TSNE.from_config(cfg.tsne)
        model.set_params(perplexity=perplexity)
        coords = model.fit_transform(np.array([r.values for r in recs]))
        notes.setdefault(family, "ok")
        notes[family + "_kl"] = [model.kl_history_[0], model.kl_history_[1]]
        for r, (x, y) in zip(recs, coords):
            rows.append([r.patient, r.slice, r.roi_class, family, float(x), float(y)])
    write_csv(state.path("tsne.csv"), ["patient", "slice", "roi_class", "family", "x", "y"], rows)
    state.record("tsne.csv")
    state.notes["tsne"] = notes


def run_boxplots(state, tables):
    rows = []
    for family in STAT_FAMILIES:
        table = tables.get(family)
        if table is not None and len(table):
            rows.extend(s.as_row() for s in boxplot_summary(table))
    write_csv(state.path("boxplots.csv"), BOXPLOT_HEADER, rows)
    state.record("boxplots.csv")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(state, stage, error=None):
    import scipy
    import sklearn

    cfg = state.config
    manifest = {
        "tool": "tissuevo",
        "version": __version__,
        "stage": stage,
        "status": "ok" if error is None else "error",
        "config_sha256": config_hash(cfg),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "rng": {"phantom": RNG_ALGORITHM, "tsne_init": "numpy PCG64 default_rng(seed)", "tsne_seed": cfg.tsne.seed},
        "settings": {
            "core_dilation_radius": cfg.core_dilation_radius,
            "glcm": {"bin_width": cfg.bin_width, "delta": cfg.delta, "direction_mode": cfg.direction_mode},
            "tests": {k: list(v) for k, v in sorted(cfg.tests.items())},
            "family_sizes": {f: cfg.family_sizes.get(f) for f in STAT_FAMILIES},
            "include_self_pairs": cfg.include_self_pairs,
            "quantiles": "linear interpolation (type 7)",
        },
        "inputs": state.inputs,
        "audit": state.audit,
        "notes": state.notes,
        "outputs": {name: _sha256(state.path(name)) for name in sorted(set(state.outputs))},
    }
    if error is not None:
        manifest["error"] = {"name": type(error).__name__, "message": str(error)}
    with open(state.path("manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


STAGES = ("features", "stats", "similarity", "tsne", "report", "run")


def run_pipeline(config, stage="run"):
    """Execute ``stage`` (or everything for ``run``); returns the manifest dict.

    Errors are recorded in the manifest and re-raised.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    os.makedirs(config.output_dir, exist_ok=True)
    state = RunState(config)
    try:
        if stage in ("features", "run"):
            extracted = extract_features(state, load_cases(state))
            # downstream stages always read the written tables, so a full run
            # and a staged run see identical (CSV-rounded) values
            tables = load_feature_tables(state, sorted(extracted))
        else:
            tables = load_feature_tables(state, STAT_FAMILIES if stage in ("stats", "report") else None)
        if stage in ("stats", "run"):
            run_stats(state, tables)
        if stage in ("similarity", "run"):
            run_similarity(state, tables)
        if stage in ("tsne", "run") and config.tsne_enabled:
            run_tsne_stage(state, tables)
        if stage in ("report", "run"):
            run_boxplots(state, tables)
    except TissuevoError as exc:
        write_manifest(state, stage, exc)
        raise
    return write_manifest(state, stage)

