"""Symmetric 3D gray-level co-occurrence matrices and four dependence features.

The block is ``(x, y, t)`` for one slice; the ROI mask is the 2D class mask
repeated over time. Neighbours are the 26-connected offsets at distance 1,
folded to 13 directions and symmetrized.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGlcm, EmptyRoi
from .volume_io import FeatureRecord

log = logging.getLogger(__name__)

GLCM_FEATURES = ["imc1", "imc2", "mcc", "correlation"]
FAMILY = "GLCM"
EPS = 2.0**-52
DEGENERATE = (0.0, 0.0, 1.0, 1.0)


def directions(delta=1):
    """The 13 offsets of the half 26-neighbourhood whose first nonzero component is positive."""
    steps = (-delta, 0, delta)
    half = []
    for d in itertools.product(steps, repeat=3):
        nonzero = [c for c in d if c != 0]
        if nonzero and nonzero[0] > 0:
            half.append(d)
    return half


DIRECTIONS = directions(1)


@dataclass
class GlcmAccumulator:
    n_levels: int
    counts: np.ndarray  # (n_directions, Ng, Ng), symmetrized
    offsets: list


def quantize(values, mask, bin_width=8.0):
    """Fixed-width binning anchored at the in-mask minimum.

    Returns ``(levels, n_levels)``; ``levels`` is 0 outside the mask and
    ``floor((v - min) / bin_width) + 1`` inside.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyRoi("quantization mask is empty")
    lo = values[mask].min()
    levels = np.zeros(values.shape, dtype=np.int64)
    levels[mask] = np.floor((values[mask] - lo) / bin_width).astype(np.int64) + 1
    return levels, int(levels.max())


def _shifted_pairs(levels, mask, offset):
    """Level pairs (v, v + offset) with both ends inside the mask."""
    src, dst = [], []
    for axis, d in enumerate(offset):
        n = levels.shape[axis]
        if d >= 0:
            src.append(slice(0, n - d))
            dst.append(slice(d, n))
        else:
            src.append(slice(-d, n))
            dst.append(slice(0, n + d))
    src, dst = tuple(src), tuple(dst)
    both = mask[src] & mask[dst]
    return levels[src][both], levels[dst][both]


def accumulate_glcm(levels, mask, delta=1, n_levels=None):
    """Per-direction co-occurrence counts, symmetrized as ``P + P.T``."""
    levels = np.asarray(levels)
    mask = np.asarray(mask, dtype=bool)
    if n_levels is None:
        n_levels = int(levels[mask].max()) if mask.any() else 0
    offsets = directions(delta)
    ng = max(n_levels, 1)
    counts = np.zeros((len(offsets), ng, ng), dtype=np.int64)
    for k, offset in enumerate(offsets):
        a, b = _shifted_pairs(levels, mask, offset)
        if a.size:
            flat = np.bincount((a - 1) * ng + (b - 1), minlength=ng * ng).reshape(ng, ng)
            counts[k] = flat + flat.T
    return GlcmAccumulator(n_levels, counts, offsets)


def _mcc(p, px, py):
    """Square root of the second largest eigenvalue of ``Q = Dx^-1 P Dy^-1 P^T``."""
    keep = px > 0
    p = p[np.ix_(keep, keep)]
    px, py = px[keep], py[keep]
    if p.shape[0] < 2:
        return 1.0
    if np.allclose(p, p.T, rtol=0, atol=1e-15) and np.allclose(px, py, rtol=0, atol=1e-15):
        # With v = sqrt(px), Dx^-1/2 P Dx^-1/2 = v v^T + E where
        # E = Dx^-1/2 (P - px px^T) Dx^-1/2 and E v = 0, so Q's spectrum
        # below the top eigenvalue 1 is that of E^2 and MCC is E's spectral
        # radius. No square root of a tiny, cancellation-prone eigenvalue.
        r = 1.0 / np.sqrt(px)
        e = (p - np.outer(px, px)) * r[:, None] * r[None, :]
        return float(np.abs(np.linalg.eigvalsh(e)).max())
    q = (p / px[:, None] / py[None, :]) @ p.T
    eig = np.linalg.eigvals(q)
    if np.any(np.abs(eig.imag) >= 1e-9):
        log.warning("Q has complex eigenvalues; ranking by real part")
    eig = np.sort(np.real(eig))[::-1]
    return float(np.sqrt(max(eig[1], 0.0)))


def direction_features(p):
    """Imc1, Imc2, MCC and Correlation of one normalized matrix ``p``."""
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    if np.count_nonzero(px) < 2:
        return DEGENERATE
    ng = p.shape[0]
    idx = np.arange(1, ng + 1, dtype=np.float64)
    pxy = px[:, None] * py[None, :]

    hx = -np.sum(px * np.log2(px + EPS))
    hy = -np.sum(py * np.log2(py + EPS))
    hxy = -np.sum(p * np.log2(p + EPS))
    hxy1 = -np.sum(p * np.log2(pxy + EPS))
    hxy2 = -np.sum(pxy * np.log2(pxy + EPS))

    imc1 = (hxy - hxy1) / max(hx, hy)
    imc2 = np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - hxy))))

    mux = np.sum(idx * px)
    muy = np.sum(idx * py)
    sx = np.sqrt(np.sum((idx - mux) ** 2 * px))
    sy = np.sqrt(np.sum((idx - muy) ** 2 * py))
    # centred form; E[ij] - mux*muy cancels badly for near-zero correlation
    num = np.sum(np.outer(idx - mux, idx - muy) * p)
    if sx * sy == 0:
        corr = 1.0 if num == 0 else float("nan")
    else:
        corr = num / (sx * sy)

    return float(imc1), float(imc2), _mcc(p, px, py), float(corr)


def glcm_features(acc, mode="average"):
    """Features of an accumulator, averaged over non-empty directions.

    ``mode="merged"`` sums the direction matrices first and evaluates once.
    A single-level accumulator yields the fixed values ``(0, 0, 1, 1)``.
    """
    totals = acc.counts.sum(axis=(1, 2))
    if not totals.any():
        raise DegenerateGlcm("no co-occurring voxel pairs in any direction")
    if acc.n_levels == 1:
        log.info("single gray level; reporting degenerate GLCM features")
        return DEGENERATE
    if mode == "merged":
        merged = acc.counts.sum(axis=0).astype(np.float64)
        return direction_features(merged / merged.sum())
    if mode != "average":
        raise ValueError(f"unknown direction mode {mode!r}")
    feats = [direction_features(c / t) for c, t in zip(acc.counts.astype(np.float64), totals) if t > 0]
    return tuple(float(v) for v in np.mean(np.array(feats), axis=0))


def region_features(block, mask3d, bin_width=8.0, delta=1, mode="average"):
    levels, ng = quantize(block, mask3d, bin_width)
    acc = accumulate_glcm(levels, mask3d, delta, ng)
    return glcm_features(acc, mode), acc


def extract_glcm_slice(volume, z, roi, patient, bin_width=8.0, delta=1, mode="average", audit=None):
    """One GLCM record per ROI class on slice ``z``; degenerate classes are skipped.

    Each skip is logged as ``SKIP glcm <patient> <slice> <class> <reason>``
    and appended to ``audit`` when a list is given.
    """
    from .roi import ROI_CODES

    if roi.dims != volume.spatial_dims:
        raise ValueError(f"ROI dims {roi.dims} differ from volume {volume.spatial_dims}")
    block = volume.values[:, :, z, :].astype(np.float64)
    nt = block.shape[2]
    labels = roi.labels[:, :, z]
    records = []
    for name, code in ROI_CODES.items():
        if name == "background":
            continue
        plane = labels == code
        if not plane.any():
            continue
        mask3d = np.repeat(plane[:, :, None], nt, axis=2)
        reason = None
        try:
            levels, ng = quantize(block, mask3d, bin_width)
            acc = accumulate_glcm(levels, mask3d, delta, ng)
            if not acc.counts.any():
                raise DegenerateGlcm("no co-occurring pairs")
            if ng == 1:
                reason = "SingleLevel"
            else:
                feats = glcm_features(acc, mode)
        except EmptyRoi:
            reason = "EmptyRoi"
        except DegenerateGlcm:
            reason = "DegenerateGlcm"
        if reason:
            line = f"SKIP glcm {patient} {z} {name} {reason}"
            log.info(line)
            if audit is not None:
                audit.append(line)
            continue
        records.append(FeatureRecord(str(patient), int(z), name, FAMILY, feats))
    return records
