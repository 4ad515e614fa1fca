"""Absolute-cosine similarity between ROI embeddings and the separation index."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, ZeroVector
from .stats import wilcoxon_signed_rank

log = logging.getLogger(__name__)

# test id -> (T1 class label, group 1 ROI, group 2 ROI)
SEPARATION_TESTS = {
    "test1": ("p", "p_to_b", "p_to_fi"),
    "test2": ("c", "c_to_b", "c_to_fi"),
    "test3": ("NHB-pair", "NHB_to_fi", "p_to_fi"),
}


@dataclass
class SeparationResult:
    patient: str
    test_id: str
    t1_class: str
    delta_cos: float
    n_slices_group1: int
    n_slices_group2: int


@dataclass
class SimilarityMatrix:
    classes: list
    values: np.ndarray  # NaN where no patient has the pair
    counts: np.ndarray


def _unit_rows(vectors):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("zero vector has no direction")
    return vectors / norms[:, None]


def cos_sim(a, b):
    """``|a.b| / (|a| |b|)``, clipped to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na2, nb2 = float(np.dot(a, a)), float(np.dot(b, b))
    if na2 == 0 or nb2 == 0:
        raise ZeroVector("zero vector has no direction")
    # one square root of the product rounds less than two separate norms
    return float(min(1.0, abs(float(np.dot(a, b))) / np.sqrt(na2 * nb2)))


def mean_group_sim(r1, r2, include_self=True):
    """Mean absolute cosine over ``r1 x r2``.

    When ``r2 is r1`` and ``include_self`` is False, the diagonal
    (self-pairs) is left out.
    """
    same = r2 is r1
    if len(r1) == 0 or len(r2) == 0:
        raise EmptyGroup("similarity needs two non-empty groups")
    u1 = _unit_rows(r1)
    u2 = u1 if same else _unit_rows(r2)
    sims = np.minimum(np.abs(u1 @ u2.T), 1.0)
    if same and not include_self:
        if len(u1) < 2:
            raise EmptyGroup("need two vectors to exclude self-pairs")
        sims = sims[~np.eye(len(u1), dtype=bool)]
    return _mean(sims.ravel())


def _mean(values):
    # anchored at the first value so a constant input averages to itself exactly
    values = np.asarray(values, dtype=np.float64)
    anchor = float(values[0])
    return anchor + math.fsum(values - anchor) / values.size


def delta_cos(group1, group2, include_self=True):
    """Mean within-group similarity minus between-group similarity."""
    within = 0.5 * (
        mean_group_sim(group1, group1, include_self) + mean_group_sim(group2, group2, include_self)
    )
    return within - mean_group_sim(group1, group2)


def patient_separation(table, patient, test_id, include_self=True, audit=None):
    """Separation index for one patient and one test, or None when a group is empty."""
    t1_class, roi1, roi2 = SEPARATION_TESTS[test_id]
    groups = []
    for roi in (roi1, roi2):
        vecs = []
        for r in table.rows:
            if r.patient != patient or r.roi_class != roi:
                continue
            if not np.any(r.values):
                line = f"SKIP similarity {patient} {r.slice} {roi} ZeroVector"
                log.info(line)
                if audit is not None:
                    audit.append(line)
                continue
            vecs.append(r.values)
        groups.append(vecs)
    if not groups[0] or not groups[1]:
        return None
    value = delta_cos(groups[0], groups[1], include_self)
    return SeparationResult(patient, test_id, t1_class, value, len(groups[0]), len(groups[1]))


def group_similarity_matrix(patients, classes=None):
    """Mean per-patient similarity for each ROI pair over patients having both.

    ``patients`` maps patient -> {roi_class: pooled vector}.
    """
    from .roi import ROI_CLASSES

    classes = list(classes or ROI_CLASSES)
    k = len(classes)
    sums = [[[] for _ in range(k)] for _ in range(k)]
    for patient in sorted(patients):
        vecs = patients[patient]
        for a in range(k):
            for b in range(a, k):
                va, vb = vecs.get(classes[a]), vecs.get(classes[b])
                if va is None or vb is None:
                    continue
                try:
                    s = 1.0 if a == b else cos_sim(va, vb)
                except ZeroVector:
                    continue
                sums[a][b].append(s)
    values = np.full((k, k), np.nan)
    counts = np.zeros((k, k), dtype=int)
    for a in range(k):
        for b in range(a, k):
            if sums[a][b]:
                values[a, b] = values[b, a] = _mean(sums[a][b])
                counts[a, b] = counts[b, a] = len(sums[a][b])
    return SimilarityMatrix(classes, values, counts)


def separation_test(results):
    """Median separation index and the signed-rank p-value against zero."""
    deltas = np.array([r.delta_cos for r in results], dtype=np.float64)
    if deltas.size == 0:
        raise EmptyGroup("no separation results")
    _, p = wilcoxon_signed_rank(deltas, 0.0)
    return float(np.median(deltas)), p
