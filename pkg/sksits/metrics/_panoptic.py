"""
Panoptic metrics: segmentation, recognition and panoptic quality

Only parcels ("things") are evaluated, background is not. Predictions
overlapping a void parcel with an IoU above 0.5 are ignored, and
void pixels are removed from the union when computing IoUs.
"""
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..core import N_LABELS, nomenclature
from ..exceptions import EmptyEvaluation

MATCH_IOU = 0.5


@dataclass
class PanopticStats:
    """
    Per-class matching counts, mergeable with ``+``

    Attributes
    ----------
    tp, fp, fn: np.ndarray of int of shape (n_labels,)
    iou_sum: np.ndarray of float of shape (n_labels,)
        sum of the IoUs of true positives
    """

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    iou_sum: np.ndarray

    @classmethod
    def zeros(cls, n_labels=N_LABELS):
        z = np.zeros(n_labels, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), np.zeros(n_labels))

    @property
    def n_labels(self):
        return len(self.tp)

    def __add__(self, other):
        return PanopticStats(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.iou_sum + other.iou_sum,
        )

    def __radd__(self, other):
        if isinstance(other, int) and other == 0:
            return self
        return self.__add__(other)


def _areas(ids):
    values, counts = np.unique(ids, return_counts=True)
    return dict(zip(values.tolist(), counts.tolist()))


def panoptic_match(pmap, sample, n_labels=N_LABELS, ignore_void=True, class_agnostic=False):
    """
    Match predicted instances with the parcels of a sample

    A predicted and a true instance match if they have the same class
    and an IoU above 0.5, so that each of them matches at most once.

    Parameters
    ----------
    pmap: PanopticMap
    sample: SITSSample
        ground truth, its void parcels are ignored
    n_labels: int, default=20
    ignore_void: bool, default=True
        if False, void pixels count in unions and predictions on void parcels
        are false positives
    class_agnostic: bool, default=False
        match regardless of classes, used to score detection

    Returns
    -------
    PanopticStats
    """
    stats = PanopticStats.zeros(n_labels)
    truth = np.asarray(sample.instances, dtype=np.int64)
    pred = np.asarray(pmap.instance, dtype=np.int64)
    truth_class = {p.id: p.crop_class for p in sample.parcels if not p.is_void}
    void_ids = {p.id for p in sample.parcels if p.is_void}
    pred_class = {int(k): int(c) for k, c in pmap.instances["class"].items()}

    truth_area = _areas(truth)
    pred_area = _areas(pred)
    offset = int(pred.max(initial=0)) + 1
    intersections = _areas(truth * offset + pred)

    void_overlap = dict()
    for key, area in intersections.items():
        g, p = divmod(key, offset)
        if g in void_ids and p > 0:
            void_overlap[p] = void_overlap.get(p, 0) + area

    matched_truth, matched_pred, on_void = set(), set(), set()
    for key, inter in sorted(intersections.items()):
        g, p = divmod(key, offset)
        if p == 0 or g == 0:
            continue
        if g in void_ids:
            if inter / (truth_area[g] + pred_area[p] - inter) > MATCH_IOU:
                on_void.add(p)
            continue
        if not class_agnostic and truth_class[g] != pred_class[p]:
            continue
        union = truth_area[g] + pred_area[p] - inter
        if ignore_void:
            union -= void_overlap.get(p, 0)
        iou = inter / union
        if iou > MATCH_IOU:
            stats.tp[truth_class[g]] += 1
            stats.iou_sum[truth_class[g]] += iou
            matched_truth.add(g)
            matched_pred.add(p)

    for g, c in truth_class.items():
        if g not in matched_truth:
            stats.fn[c] += 1
    for p, c in pred_class.items():
        if p in matched_pred or (ignore_void and p in on_void):
            continue
        stats.fp[c] += 1
    return stats


def evaluate_panoptic(maps, samples, n_labels=N_LABELS, ignore_void=True, n_jobs=None):
    """
    Accumulate matching statistics over a set of images

    Parameters
    ----------
    maps: list of PanopticMap
    samples: list of SITSSample
        ground truth, in the same order
    n_labels: int, default=20
    ignore_void: bool, default=True
    n_jobs: int, default=None
        number of joblib workers

    Returns
    -------
    PanopticStats

    Raises
    ------
    EmptyEvaluation
        if there is no image
    """
    if not len(samples) or len(maps) != len(samples):
        raise EmptyEvaluation(f"{len(maps)} panoptic maps for {len(samples)} annotated images")
    per_image = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(panoptic_match)(pmap, sample, n_labels, ignore_void) for pmap, sample in zip(maps, samples)
    )
    return sum(per_image, PanopticStats.zeros(n_labels))


def panoptic_quality(stats, class_names=None):
    """
    Per-class SQ, RQ and PQ

    Background and void label are not reported. Classes without any
    true positive, false positive or false negative are left out with
    a warning. SQ is undefined without true positives.

    Parameters
    ----------
    stats: PanopticStats
    class_names: sequence of str, default=None

    Returns
    -------
    pd.DataFrame
        one row per class, with columns SQ, RQ, PQ, TP, FP and FN

    Examples
    --------
    >>> stats = PanopticStats.zeros(4)
    >>> stats.tp[1], stats.iou_sum[1] = 1, 0.6
    >>> panoptic_quality(stats, class_names=["bg", "a", "b", "void"])[["SQ", "RQ", "PQ"]]  # doctest: +SKIP
        SQ   RQ   PQ
    a  0.6  1.0  0.6
    """
    names = list(class_names) if class_names is not None else list(nomenclature(stats.n_labels - 2))
    things = np.arange(1, stats.n_labels - 1)
    tp, fp, fn, iou_sum = (np.asarray(a, dtype=np.float64)[things] for a in (stats.tp, stats.fp, stats.fn, stats.iou_sum))
    seen = (tp + fp + fn) > 0
    if not seen.all():
        absent = [names[k] for k in things[~seen]]
        warnings.warn(f"classes without any instance are excluded: {absent}")
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.where(tp > 0, iou_sum / tp, np.nan)
        rq = tp / (tp + fp / 2 + fn / 2)
        pq = iou_sum / (tp + fp / 2 + fn / 2)
    frame = pd.DataFrame(
        dict(SQ=sq, RQ=rq, PQ=pq, TP=tp.astype(int), FP=fp.astype(int), FN=fn.astype(int)),
        index=[names[k] for k in things],
    )
    return frame[seen]


def class_average(frame):
    """class-averaged SQ, RQ and PQ, undefined SQ values skipped"""
    return frame[["SQ", "RQ", "PQ"]].mean(skipna=True)
