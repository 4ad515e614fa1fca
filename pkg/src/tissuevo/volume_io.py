"""Volume, mask, embedding and feature-table containers plus their file formats.

NIfTI-1 support is a strict subset: single-file ``.nii`` / ``.nii.gz``,
datatypes uint8 / int16 / float32, 3D or 4D. Orientation fields are parsed
and sanity-checked but never applied; all inputs are assumed to live on
one pre-aligned voxel grid.

Arrays are indexed ``[x, y, z, t]`` in memory. On disk the NIfTI
convention applies (x varies fastest).
"""
from __future__ import annotations

import csv
import gzip
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import CorruptFile, InvalidData, IoError, UnsupportedFormat

HEADER_SIZE = 348
VOX_OFFSET = 352

# NIfTI datatype code -> numpy dtype
_DTYPES = {2: np.dtype(np.uint8), 4: np.dtype(np.int16), 16: np.dtype(np.float32)}

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]
HEADER_DTYPE = np.dtype(_HEADER_FIELDS)
assert HEADER_DTYPE.itemsize == HEADER_SIZE


@dataclass
class Volume4D:
    """Preprocessed perfusion slab, ``values[x, y, z, t]`` as float32."""

    values: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 3:
            values = values[..., np.newaxis]
        if values.ndim != 4 or min(values.shape) < 1:
            raise InvalidData(f"volume must be 4D with non-empty axes, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidData("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise InvalidData(f"spacing must be three positive reals, got {self.spacing_mm}")
        self.values = values
        self.spacing_mm = spacing

    @property
    def dims(self):
        return tuple(int(n) for n in self.values.shape)

    @property
    def spatial_dims(self):
        return self.dims[:3]


@dataclass
class LabelMask:
    """Categorical voxel map ``labels[x, y, z]`` with a code -> name legend."""

    labels: np.ndarray
    legend: dict = field(default_factory=dict)
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise InvalidData(f"label mask must be 3D, got shape {labels.shape}")
        if labels.dtype == bool:
            labels = labels.astype(np.uint8)
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise InvalidData("label codes must fit in uint8")
        self.labels = labels.astype(np.uint8, copy=False)
        self.legend = {int(k): str(v) for k, v in dict(self.legend).items()}
        if not self.legend:
            self.legend = {int(c): str(int(c)) for c in np.unique(self.labels)}
        missing = set(np.unique(self.labels).tolist()) - set(self.legend)
        if missing:
            raise InvalidData(f"label codes {sorted(missing)} missing from legend")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)

    @property
    def dims(self):
        return tuple(int(n) for n in self.labels.shape)

    def code_of(self, name):
        for code, label in self.legend.items():
            if label == name:
                return code
        raise KeyError(name)

    def binary(self, *names):
        """Boolean mask of voxels carrying any of the named classes."""
        codes = [self.code_of(n) for n in names]
        return np.isin(self.labels, codes)


@dataclass
class EmbeddingMap:
    """Grid of D-dimensional activations; ``vectors[i, j, :]``.

    Grid cell ``(i, j)`` sits on full-resolution pixel
    ``(oy + i * stride, ox + j * stride)``.
    """

    vectors: np.ndarray
    stride: int = 1
    offset: tuple = (0, 0)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 3 or vectors.shape[2] < 1:
            raise InvalidData(f"embedding vectors must be (H, W, D) with D >= 1, got {vectors.shape}")
        if np.isnan(vectors).any() or not np.all(np.isfinite(vectors)):
            raise InvalidData("embedding map contains non-finite values")
        if int(self.stride) < 1:
            raise InvalidData("stride must be >= 1")
        self.vectors = vectors
        self.stride = int(self.stride)
        self.offset = tuple(int(o) for o in self.offset)
        if len(self.offset) != 2:
            raise InvalidData("offset must be (oy, ox)")

    @property
    def grid_dims(self):
        return tuple(int(n) for n in self.vectors.shape[:2])

    @property
    def dim(self):
        return int(self.vectors.shape[2])

    def pixel_coords(self):
        """Full-resolution (row, col) index arrays for every grid cell."""
        h, w = self.grid_dims
        rows = self.offset[0] + self.stride * np.arange(h)
        cols = self.offset[1] + self.stride * np.arange(w)
        return rows, cols


@dataclass(frozen=True)
class FeatureRecord:
    patient: str
    slice: int
    roi_class: str
    family: str
    values: tuple

    @property
    def key(self):
        return (self.patient, self.slice, self.roi_class)


@dataclass
class FeatureTable:
    """Rows of one feature family; ``feature_names`` fixes the column order."""

    family: str
    feature_names: list
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.feature_names = list(self.feature_names)
        self.rows = list(self.rows)
        self.validate()

    def validate(self):
        seen = set()
        width = len(self.feature_names)
        for row in self.rows:
            if row.family != self.family:
                raise InvalidData(f"record family {row.family!r} in {self.family!r} table")
            if len(row.values) != width:
                raise InvalidData(f"record {row.key} has {len(row.values)} values, expected {width}")
            if row.key in seen:
                raise InvalidData(f"duplicate record key {row.key}")
            seen.add(row.key)

    def __len__(self):
        return len(self.rows)

    def matrix(self):
        if not self.rows:
            return np.zeros((0, len(self.feature_names)))
        return np.array([r.values for r in self.rows], dtype=np.float64)

    def column(self, name, roi_class=None):
        k = self.feature_names.index(name)
        return np.array(
            [r.values[k] for r in self.rows if roi_class is None or r.roi_class == roi_class],
            dtype=np.float64,
        )

    def sorted_rows(self):
        return sorted(self.rows, key=record_sort_key)


def record_sort_key(record):
    from .roi import ROI_CLASSES

    try:
        rank = (0, ROI_CLASSES.index(record.roi_class), "")
    except ValueError:
        rank = (1, 0, record.roi_class)
    return (record.patient, record.slice, rank)


# --------------------------------------------------------------------------- NIfTI


def _open_read(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise CorruptFile(f"{path}: bad gzip stream: {exc}") from exc
    return raw


def read_nifti_header(raw):
    if len(raw) < HEADER_SIZE:
        raise CorruptFile(f"file shorter than the {HEADER_SIZE}-byte NIfTI-1 header")
    for order in ("<", ">"):
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(order))[0]
        if int(hdr["sizeof_hdr"]) == HEADER_SIZE:
            break
    else:
        raise UnsupportedFormat("sizeof_hdr is not 348; not a NIfTI-1 file")
    if hdr["magic"] not in (b"n+1", b"n+1\x00"):
        raise UnsupportedFormat(f"magic {hdr['magic']!r}: only single-file NIfTI-1 (n+1) is supported")
    return hdr, order


def _check_orientation(hdr):
    for name in ("qform_code", "sform_code"):
        if not 0 <= int(hdr[name]) <= 4:
            raise CorruptFile(f"{name}={int(hdr[name])} outside 0..4")
    if int(hdr["sform_code"]) > 0:
        affine = np.stack([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]]).astype(np.float64)
        if not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:, :3])) == 0:
            raise CorruptFile("sform matrix is singular or non-finite")
    if int(hdr["qform_code"]) > 0:
        quat = np.array([hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]], dtype=np.float64)
        if not np.all(np.isfinite(quat)) or float(quat @ quat) > 1.0 + 1e-4:
            raise CorruptFile("qform quaternion is not a unit rotation")


def read_nifti(path, legend=None):
    """Read a NIfTI-1 file into a :class:`Volume4D` or :class:`LabelMask`.

    A 3D uint8 image becomes a ``LabelMask`` (with ``legend`` if given);
    anything else becomes a ``Volume4D`` with float32 values after
    ``scl_slope`` / ``scl_inter`` scaling.
    """
    raw = _open_read(path)
    hdr, order = read_nifti_header(raw)
    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise UnsupportedFormat(f"dim[0]={ndim}; only 3D and 4D images are supported")
    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedFormat(f"datatype {code} not in {{uint8, int16, float32}}")
    shape = tuple(int(n) for n in hdr["dim"][1 : ndim + 1])
    if min(shape) < 1:
        raise CorruptFile(f"non-positive image dimension in {shape}")
    _check_orientation(hdr)

    dtype = _DTYPES[code].newbyteorder(order)
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise CorruptFile(f"vox_offset {offset} overlaps the header")
    n_values = int(np.prod(shape))
    expected = n_values * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise CorruptFile(f"header declares {shape} ({expected} bytes) but file carries {len(payload)} bytes")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    scaled = math.isfinite(slope) and slope != 0.0 and not (slope == 1.0 and inter == 0.0)
    spacing = tuple(float(abs(s)) if s else 1.0 for s in hdr["pixdim"][1:4])

    if ndim == 3 and code == 2 and not scaled:
        return LabelMask(np.array(data, dtype=np.uint8), legend or {}, spacing)

    values = data.astype(np.float64)
    if scaled:
        values = values * slope + (inter if math.isfinite(inter) else 0.0)
    values = values.astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise InvalidData(f"{path}: non-finite voxel values")
    return Volume4D(values, spacing)


def build_nifti_header(shape, datatype, spacing, slope=1.0, inter=0.0):
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = len(shape)
    dim[1 : len(shape) + 1] = shape
    hdr["dim"] = dim
    hdr["datatype"] = datatype
    hdr["bitpix"] = _DTYPES[datatype].itemsize * 8
    pixdim = np.ones(8, dtype=np.float32)
    pixdim[1:4] = spacing
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = slope
    hdr["scl_inter"] = inter
    hdr["xyzt_units"] = 2 | 8  # mm, seconds
    hdr["sform_code"] = 1
    hdr["srow_x"] = [spacing[0], 0, 0, 0]
    hdr["srow_y"] = [0, spacing[1], 0, 0]
    hdr["srow_z"] = [0, 0, spacing[2], 0]
    hdr["magic"] = b"n+1"
    return hdr


def write_nifti(obj, path, slope=1.0, inter=0.0):
    """Write a Volume4D (float32) or LabelMask (uint8); gzip when path ends in ``.gz``.

    ``slope``/``inter`` are stored verbatim in the header; the data are
    written unscaled.
    """
    if isinstance(obj, LabelMask):
        data, code = obj.labels.astype(np.uint8), 2
    elif isinstance(obj, Volume4D):
        data, code = obj.values.astype(np.float32), 16
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as NIfTI")
    hdr = build_nifti_header(data.shape, code, obj.spacing_mm, slope, inter)
    buf = hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE)
    buf += np.asarray(data, dtype=data.dtype.newbyteorder("<")).tobytes(order="F")
    _write_bytes(path, buf, compress=str(path).endswith(".gz"))


def _write_bytes(path, buf, compress=False):
    if compress:
        # mtime=0 keeps gzip output byte-reproducible
        out = io.BytesIO()
        with gzip.GzipFile(fileobj=out, mode="wb", mtime=0, filename="") as gz:
            gz.write(buf)
        buf = out.getvalue()
    try:
        with open(path, "wb") as fh:
            fh.write(buf)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------- .emb


def _header_int(header, *names):
    for name in names:
        if name in header:
            return int(header[name])
    raise CorruptFile(f"embedding header lacks {names[0]!r}")


def read_embedding_blob(path):
    """Parse a ``.emb`` file: one JSON header line, then little-endian float32.

    The payload is channel-major, i.e. a C-ordered ``(D, H, W)`` array
    (column index fastest, then row, channel slowest).
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    newline = raw.find(b"\n")
    if newline < 0:
        raise CorruptFile(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad JSON header: {exc}") from exc
    if "grid_dims" in header:
        h, w = (int(n) for n in header["grid_dims"])
    else:
        h, w = _header_int(header, "H", "h"), _header_int(header, "W", "w")
    d = _header_int(header, "dim", "D", "d")
    stride = int(header.get("stride", 1))
    offset = tuple(header.get("offset", (0, 0)))
    if min(h, w, d) < 1:
        raise CorruptFile(f"{path}: non-positive grid dimensions")
    payload = raw[newline + 1 :]
    if len(payload) != h * w * d * 4:
        raise CorruptFile(f"{path}: payload has {len(payload)} bytes, expected {h * w * d * 4}")
    data = np.frombuffer(payload, dtype="<f4").reshape(d, h, w)
    if np.isnan(data).any():
        raise InvalidData(f"{path}: NaN in embedding payload")
    return EmbeddingMap(np.ascontiguousarray(data.transpose(1, 2, 0)), stride, offset)


def write_embedding_blob(emb, path):
    h, w = emb.grid_dims
    header = {"grid_dims": [h, w], "dim": emb.dim, "stride": emb.stride, "offset": list(emb.offset)}
    payload = np.ascontiguousarray(emb.vectors.transpose(2, 0, 1), dtype="<f4").tobytes()
    _write_bytes(path, json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload)


# --------------------------------------------------------------------------- CSV

KEY_COLUMNS = ["patient", "slice", "roi_class", "family"]


def format_real(value):
    """Nine significant digits: exact round trip for float32."""
    value = float(value)
    if value == 0.0:
        return "0"
    return format(value, ".9g")


def write_csv(path, header, rows):
    """Deterministic UTF-8 CSV with LF line endings."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_real(v) if isinstance(v, (float, np.floating)) else v for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_feature_table(table, path):
    table.validate()
    header = KEY_COLUMNS + [f"f{k}" for k in range(len(table.feature_names))]
    rows = (
        [r.patient, r.slice, r.roi_class, r.family] + [float(v) for v in r.values]
        for r in table.sorted_rows()
    )
    write_csv(path, header, rows)


def read_feature_table(path, feature_names=None):
    from .features import feature_names_for

    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = list(reader)
    except (OSError, StopIteration) as exc:
        raise IoError(f"cannot read feature table {path}: {exc}") from exc
    if header[: len(KEY_COLUMNS)] != KEY_COLUMNS:
        raise CorruptFile(f"{path}: unexpected header {header}")
    width = len(header) - len(KEY_COLUMNS)
    rows = []
    for line in body:
        if len(line) != len(header):
            raise CorruptFile(f"{path}: row has {len(line)} columns, expected {len(header)}")
        rows.append(
            FeatureRecord(line[0], int(line[1]), line[2], line[3], tuple(float(v) for v in line[4:]))
        )
    stem = os.path.basename(path).split(".")[0]
    family = rows[0].family if rows else stem[len("features_"):] if stem.startswith("features_") else stem
    if feature_names is None:
        feature_names = feature_names_for(family, width)
    return FeatureTable(family, feature_names, rows)


def concat_tables(tables: Iterable[FeatureTable]):
    tables = list(tables)
    if not tables:
        raise ValueError("nothing to concatenate")
    rows = [r for t in tables for r in t.rows]
    return FeatureTable(tables[0].family, tables[0].feature_names, rows)

