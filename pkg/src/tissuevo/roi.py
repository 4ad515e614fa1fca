"""Bi-temporal tissue-evolution map from admission and follow-up annotations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import AnnotationConflict, InvalidData
from .volume_io import LabelMask

log = logging.getLogger(__name__)

# Admission (T1) codes.
T1_LEGEND = {0: "background", 1: "CLB", 2: "NHB", 3: "p", 4: "c"}
# Follow-up (T2) codes.
T2_LEGEND = {0: "background", 1: "b", 2: "fi"}

ROI_CLASSES = ["CLB_to_b", "NHB_to_fi", "p_to_b", "p_to_fi", "c_to_b", "c_to_fi"]
ROI_LEGEND = {0: "background", **{k + 1: name for k, name in enumerate(ROI_CLASSES)}}
ROI_CODES = {name: code for code, name in ROI_LEGEND.items()}

# (T1 class, infarcted at T2) -> output code; pairs not listed go to background.
_PAIR_CODES = {
    ("CLB", False): ROI_CODES["CLB_to_b"],
    ("NHB", True): ROI_CODES["NHB_to_fi"],
    ("p", False): ROI_CODES["p_to_b"],
    ("p", True): ROI_CODES["p_to_fi"],
    ("c", False): ROI_CODES["c_to_b"],
    ("c", True): ROI_CODES["c_to_fi"],
}


@dataclass
class BiTemporalRoiMap:
    """Six-class label volume plus counts of brain voxels that fell in no class."""

    labels: np.ndarray
    audit: dict = field(default_factory=dict)
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    @property
    def dims(self):
        return tuple(int(n) for n in self.labels.shape)

    def class_mask(self, name, z=None):
        plane = self.labels if z is None else self.labels[:, :, z]
        return plane == ROI_CODES[name]

    def classes_on_slice(self, z):
        codes = np.unique(self.labels[:, :, z])
        return [ROI_LEGEND[int(c)] for c in codes if c != 0]

    def to_label_mask(self):
        return LabelMask(self.labels, ROI_LEGEND, self.spacing_mm)

    @classmethod
    def from_label_mask(cls, mask):
        unknown = set(np.unique(mask.labels).tolist()) - set(ROI_LEGEND)
        if unknown:
            raise InvalidData(f"codes {sorted(unknown)} are not bi-temporal ROI codes")
        return cls(mask.labels.astype(np.uint8), {}, mask.spacing_mm)


def _as_bool(mask):
    if isinstance(mask, LabelMask):
        mask = mask.labels
    return np.asarray(mask).astype(bool)


def dilate_mask(mask, radius=1):
    """Binary dilation with a (2r+1)^3 box, i.e. Chebyshev distance <= radius."""
    mask = _as_bool(mask)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or not mask.any():
        return mask.copy()
    size = 2 * int(radius) + 1
    # box dilation is separable: a 1D max filter per axis
    return ndimage.maximum_filter(mask.astype(np.uint8), size=size, mode="constant", cval=0).astype(bool)


def build_t1_labels(clb, penumbra_raw, core_raw, brain, core_dilation_radius=1):
    """Admission labels with precedence c > p > CLB > NHB.

    The core is dilated first; penumbra is what remains of the marked
    penumbra outside the dilated core.
    """
    clb, penumbra_raw, core_raw, brain = (_as_bool(m) for m in (clb, penumbra_raw, core_raw, brain))
    shapes = {m.shape for m in (clb, penumbra_raw, core_raw, brain)}
    if len(shapes) != 1:
        raise InvalidData(f"mask shapes differ: {sorted(shapes)}")
    overlap = int(np.count_nonzero(clb & (penumbra_raw | core_raw)))
    if overlap:
        raise AnnotationConflict(f"CLB overlaps core/penumbra in {overlap} voxels")

    core = dilate_mask(core_raw, core_dilation_radius)
    penumbra = penumbra_raw & ~core
    healthy = clb & ~(core | penumbra)
    nhb = brain & ~(core | penumbra | healthy)

    labels = np.zeros(brain.shape, dtype=np.uint8)
    labels[nhb] = 2
    labels[healthy] = 1
    labels[penumbra] = 3
    labels[core] = 4
    return LabelMask(labels, T1_LEGEND)


def build_bitemporal(t1, infarct, brain):
    """Intersect admission classes with the follow-up infarct mask.

    ``t1`` is a LabelMask using :data:`T1_LEGEND` names. Brain voxels whose
    (T1, T2) pair is not one of the six classes become background and are
    counted in ``audit``.
    """
    infarct, brain = _as_bool(infarct), _as_bool(brain)
    if t1.dims != infarct.shape or infarct.shape != brain.shape:
        raise InvalidData("t1, infarct and brain masks must share dims")
    outside = int(np.count_nonzero(infarct & ~brain))
    if outside:
        raise InvalidData(f"infarct extends {outside} voxels outside the brain mask")

    names = {code: name for code, name in t1.legend.items()}
    labels = np.zeros(brain.shape, dtype=np.uint8)
    for code, name in names.items():
        if name not in ("CLB", "NHB", "p", "c"):
            continue
        in_class = brain & (t1.labels == code)
        for infarcted in (False, True):
            out = _PAIR_CODES.get((name, infarcted), 0)
            if out:
                labels[in_class & (infarct == infarcted)] = out

    audit = {
        "NHB_to_b": int(np.count_nonzero(brain & (t1.labels == _code(names, "NHB")) & ~infarct)),
        "CLB_to_fi": int(np.count_nonzero(brain & (t1.labels == _code(names, "CLB")) & infarct)),
        "unlabeled_brain": int(np.count_nonzero(brain & ~np.isin(t1.labels, _codes(names)))),
    }
    if audit["CLB_to_fi"]:
        log.warning("%d CLB voxels infarcted at follow-up; mapped to background", audit["CLB_to_fi"])
    return BiTemporalRoiMap(labels, audit, t1.spacing_mm)


def _code(names, wanted):
    for code, name in names.items():
        if name == wanted:
            return code
    return -1


def _codes(names):
    return [c for c, n in names.items() if n in ("CLB", "NHB", "p", "c")]


def roi_from_t1_t2(t1_mask, t2_mask, core_dilation_radius=1):
    """Convenience path from stored T1/T2 label files to the bi-temporal map."""
    t1 = t1_mask.labels
    clb = t1 == t1_mask.code_of("CLB")
    penumbra = t1 == t1_mask.code_of("p")
    core = t1 == t1_mask.code_of("c")
    brain = t1 != 0
    labels = build_t1_labels(clb, penumbra, core, brain, core_dilation_radius)
    labels.spacing_mm = t1_mask.spacing_mm
    infarct = (t2_mask.labels == t2_mask.code_of("fi")) & brain
    return build_bitemporal(labels, infarct, brain)
