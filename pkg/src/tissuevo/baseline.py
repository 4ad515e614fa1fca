"""First-order statistics over 3x3xT sliding windows, max-pooled per ROI class."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .volume_io import FeatureRecord

BASELINE_FEATURES = ["mean", "std", "skewness", "kurtosis", "min", "max"]
FAMILY = "BL"

# rows of windows processed per chunk; bounds memory at ~rows*Y*9*T doubles
_CHUNK_ROWS = 32


def _moments(windows):
    """Statistics along the last axis of ``windows`` (population formulas)."""
    n = windows.shape[-1]
    mean = windows.mean(axis=-1)
    dev = windows - mean[..., None]
    var = np.einsum("...i,...i->...", dev, dev) / n
    std = np.sqrt(var)
    flat = std == 0
    safe = np.where(flat, 1.0, std)
    z = dev / safe[..., None]
    z2 = z * z
    skew = np.where(flat, 0.0, (z2 * z).mean(axis=-1))
    kurt = np.where(flat, 0.0, (z2 * z2).mean(axis=-1) - 3.0)
    return np.stack([mean, std, skew, kurt, windows.min(axis=-1), windows.max(axis=-1)], axis=-1)


def window_stats(window):
    """Six statistics of one spatio-temporal window.

    Returns ``(mean, std, skewness, excess kurtosis, min, max)``; skewness
    and kurtosis are 0 when the window is constant.
    """
    values = np.asarray(window, dtype=np.float64).ravel()
    return _moments(values[None, :])[0]


def location_stats(plane):
    """Per-location statistics for every fully interior 3x3 window.

    ``plane`` is the ``(X, Y, T)`` block of one slice. Output has shape
    ``(X-2, Y-2, 6)``; entry ``[i, j]`` belongs to centre pixel ``(i+1, j+1)``.
    """
    plane = np.asarray(plane, dtype=np.float64)
    nx, ny, nt = plane.shape
    if nx < 3 or ny < 3:
        return np.zeros((max(nx - 2, 0), max(ny - 2, 0), 6))
    out = np.empty((nx - 2, ny - 2, 6))
    for start in range(0, nx - 2, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, nx - 2)
        block = plane[start : stop + 2]
        win = sliding_window_view(block, (3, 3), axis=(0, 1))  # (rows, Y-2, T, 3, 3)
        win = win.reshape(win.shape[0], win.shape[1], nt * 9)
        out[start:stop] = _moments(win)
    return out


def pool_max(stats, labels, classes):
    """Element-wise max of ``stats`` over locations whose centre label is each class code."""
    pooled = {}
    for name, code in classes.items():
        sel = labels == code
        if sel.any():
            pooled[name] = stats[sel].max(axis=0)
    return pooled


def extract_baseline_slice(volume, z, roi, patient):
    """One BL record per ROI class present at the window centres of slice ``z``."""
    from .roi import ROI_CODES

    if roi.dims != volume.spatial_dims:
        raise ValueError(f"ROI dims {roi.dims} differ from volume {volume.spatial_dims}")
    labels = roi.labels[1:-1, 1:-1, z]
    present = {n: c for n, c in ROI_CODES.items() if n != "background" and (labels == c).any()}
    if not present:
        return []
    stats = location_stats(volume.values[:, :, z, :])
    pooled = pool_max(stats, labels, present)
    return [
        FeatureRecord(str(patient), int(z), name, FAMILY, tuple(float(v) for v in vec))
        for name, vec in pooled.items()
    ]
