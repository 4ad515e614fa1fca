"""Deterministic synthetic perfusion phantoms with known tissue classes.

Each voxel's time-attenuation curve is
``baseline + (peak - baseline) * exp(-(t - ttp)^2 / (2 width^2))``, i.e. a
Gaussian bump reaching ``peak`` HU at ``ttp``, taken from the
innermost region containing it (smallest radius; later entries win ties),
plus Gaussian noise. Noise for slice ``z`` comes from a Philox generator
keyed by ``SeedSequence([seed, z])``, so slices can be produced in any
order or in parallel with identical results.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigConflict, ConfigError
from .roi import T1_LEGEND, T2_LEGEND
from .volume_io import EmbeddingMap, LabelMask, Volume4D

RNG_ALGORITHM = "numpy Philox4x64-10, key = SeedSequence([seed, z])"
T1_CLASSES = ("CLB", "NHB", "p", "c")
REGION_CLASSES = T1_CLASSES + ("fi-overlay",)


@dataclass(frozen=True)
class TacParams:
    baseline: float = 30.0
    peak: float = 70.0
    ttp: float = 12.0
    width: float = 4.0
    noise_sd: float = 0.0

    def curve(self, t):
        t = np.asarray(t, dtype=np.float64)
        bump = np.exp(-((t - self.ttp) ** 2) / (2.0 * self.width**2))
        return self.baseline + (self.peak - self.baseline) * bump


@dataclass
class Region:
    cls: str
    center: tuple
    radius: float
    tac: TacParams = field(default_factory=TacParams)

    def voxels(self, shape):
        """Boolean ball of voxels within ``radius`` (Euclidean, voxel units) of ``center``."""
        grids = np.ogrid[tuple(slice(0, n) for n in shape)]
        dist2 = sum((g - c) ** 2 for g, c in zip(grids, self.center))
        return dist2 <= self.radius**2


@dataclass
class PhantomConfig:
    dims: tuple
    seed: int = 0
    regions: list = field(default_factory=list)
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        if len(self.dims) != 4 or min(self.dims) < 1:
            raise ConfigError(f"dims must be four positive ints, got {self.dims}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self.regions = [r if isinstance(r, Region) else _region_from_dict(r) for r in self.regions]
        for r in self.regions:
            if r.cls not in REGION_CLASSES:
                raise ConfigError(f"unknown region class {r.cls!r}")
            if r.radius <= 0:
                raise ConfigError("region radii must be positive")
            if r.tac.noise_sd < 0:
                raise ConfigError("noise_sd must be >= 0")
            if len(r.center) != 3:
                raise ConfigError("region centers are (x, y, z)")
            for c, n in zip(r.center, self.dims[:3]):
                if not 0 <= c < n:
                    raise ConfigError(f"region center {r.center} outside dims {self.dims[:3]}")

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                dims=data["dims"],
                seed=data.get("seed", 0),
                regions=data.get("regions", []),
                spacing_mm=tuple(data.get("spacing_mm", (1.0, 1.0, 1.0))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad phantom config: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read phantom config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return {
            "dims": list(self.dims),
            "seed": self.seed,
            "spacing_mm": list(self.spacing_mm),
            "regions": [
                {"class": r.cls, "center": list(r.center), "radius": r.radius, "tac": asdict(r.tac)}
                for r in self.regions
            ],
        }


def _region_from_dict(data):
    tac = data.get("tac", data.get("tac_params", {}))
    return Region(
        cls=data.get("class", data.get("cls")),
        center=tuple(float(c) for c in data["center"]),
        radius=float(data["radius"]),
        tac=TacParams(**tac),
    )


@dataclass
class PhantomOutput:
    volume: Volume4D
    t1_mask: LabelMask
    t2_mask: LabelMask
    metadata: dict = field(default_factory=dict)


def _check_conflicts(regions, balls):
    for a in range(len(regions)):
        for b in range(a + 1, len(regions)):
            ra, rb = regions[a], regions[b]
            if ra.cls == rb.cls and ra.tac != rb.tac and (balls[a] & balls[b]).any():
                raise ConfigConflict(
                    f"overlapping {ra.cls} regions {a} and {b} disagree on TAC parameters"
                )


def _innermost(regions, balls, shape):
    """Index of the innermost containing region per voxel, -1 where none."""
    owner = np.full(shape, -1, dtype=np.int64)
    radius = np.full(shape, np.inf)
    for k, (r, ball) in enumerate(zip(regions, balls)):
        take = ball & (r.radius <= radius)
        owner[take] = k
        radius[take] = r.radius
    return owner


def slice_noise(seed, z, shape):
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, z])))
    return gen.standard_normal(shape)


def generate_phantom(config):
    """Render the volume plus T1 (CLB/NHB/p/c) and T2 (b/fi) label masks."""
    nx, ny, nz, nt = config.dims
    shape = (nx, ny, nz)
    regions = config.regions
    balls = [r.voxels(shape) for r in regions]
    _check_conflicts(regions, balls)

    owner = _innermost(regions, balls, shape)
    t1_idx = [k for k, r in enumerate(regions) if r.cls in T1_CLASSES]
    t1_owner = _innermost([regions[k] for k in t1_idx], [balls[k] for k in t1_idx], shape)

    t1_codes = {name: code for code, name in T1_LEGEND.items()}
    t1 = np.zeros(shape, dtype=np.uint8)
    for local, k in enumerate(t1_idx):
        t1[t1_owner == local] = t1_codes[regions[k].cls]
    brain = t1 > 0

    fi = np.zeros(shape, dtype=bool)
    for r, ball in zip(regions, balls):
        if r.cls == "fi-overlay":
            fi |= ball
    t2 = np.where(fi, 2, np.where(brain, 1, 0)).astype(np.uint8)

    t = np.arange(nt, dtype=np.float64)
    curves = np.array([r.tac.curve(t) for r in regions]) if regions else np.zeros((0, nt))
    sds = np.array([r.tac.noise_sd for r in regions])
    values = np.zeros((nx, ny, nz, nt), dtype=np.float64)
    for z in range(nz):
        own = owner[:, :, z]
        inside = own >= 0
        if not inside.any():
            continue
        plane = np.zeros((nx, ny, nt))
        plane[inside] = curves[own[inside]]
        noise = slice_noise(config.seed, z, (nx, ny, nt))
        plane[inside] += sds[own[inside]][:, None] * noise[inside]
        values[:, :, z, :] = plane

    meta = {"rng": RNG_ALGORITHM, "seed": config.seed, "config": config.to_dict()}
    return PhantomOutput(
        Volume4D(values.astype(np.float32), config.spacing_mm),
        LabelMask(t1, T1_LEGEND, config.spacing_mm),
        LabelMask(t2, T2_LEGEND, config.spacing_mm),
        meta,
    )


def default_config(seed=0):
    """A small single-patient phantom covering all six bi-temporal classes."""
    return PhantomConfig.from_dict(
        {
            "dims": [32, 32, 8, 20],
            "seed": seed,
            "regions": [
                {"class": "NHB", "center": [16, 16, 3.5], "radius": 15,
                 "tac": {"baseline": 30, "peak": 70, "ttp": 8, "width": 3, "noise_sd": 2}},
                {"class": "CLB", "center": [8, 16, 3.5], "radius": 5,
                 "tac": {"baseline": 30, "peak": 75, "ttp": 7, "width": 3, "noise_sd": 2}},
                {"class": "p", "center": [22, 16, 3.5], "radius": 7,
                 "tac": {"baseline": 30, "peak": 60, "ttp": 11, "width": 4, "noise_sd": 3}},
                {"class": "c", "center": [24, 16, 3.5], "radius": 3,
                 "tac": {"baseline": 30, "peak": 42, "ttp": 13, "width": 4, "noise_sd": 3}},
                {"class": "fi-overlay", "center": [25, 18, 3.5], "radius": 5.5,
                 "tac": {"baseline": 30, "peak": 55, "ttp": 12, "width": 4, "noise_sd": 12}},
                {"class": "fi-overlay", "center": [16, 26, 3.5], "radius": 2.5,
                 "tac": {"baseline": 30, "peak": 68, "ttp": 9, "width": 3, "noise_sd": 6}},
            ],
        }
    )


def synthetic_embedding(volume, z, dim=16, stride=1, offset=(0, 0), grid=None, seed=0):
    """Stand-in CNN activations: a fixed random projection of each pixel's TAC.

    ``grid=(H, W)`` samples pixels ``offset + k * stride``; by default the
    grid covers the whole slice. ReLU keeps the maps non-negative like
    post-activation features.
    """
    plane = volume.values[:, :, z, :].astype(np.float64)
    nx, ny, nt = plane.shape
    if grid is None:
        grid = ((nx - offset[0] - 1) // stride + 1, (ny - offset[1] - 1) // stride + 1)
    rows = offset[0] + stride * np.arange(grid[0])
    cols = offset[1] + stride * np.arange(grid[1])
    sampled = plane[np.ix_(rows, cols)]
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xE3B])))
    proj = gen.standard_normal((nt, dim))
    feats = np.maximum(sampled @ proj / np.sqrt(nt), 0.0) + 1e-3
    return EmbeddingMap(feats.astype(np.float32), stride, offset)
