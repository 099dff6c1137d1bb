"""
Semantic segmentation metrics: overall accuracy, per-class IoU, mIoU
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..core import N_LABELS, VOID_LABEL, nomenclature
from ..exceptions import EmptyEvaluation, ShapeError


class ConfusionMatrix:
    """
    Pixel confusion matrix, rows are ground truth labels and columns predictions

    Matrices computed on different images can be merged with ``+``.

    Parameters
    ----------
    counts: np.ndarray of shape (K, K)
    void_label: int, default=None
        label excluded from the scores. Its row is expected to be empty.
    class_names: sequence of str, default=None

    Examples
    --------
    >>> cm = ConfusionMatrix(np.array([[3, 1], [2, 4]]))
    >>> cm.overall_accuracy
    0.7
    >>> round(cm.miou, 4)
    0.5357
    """

    def __init__(self, counts, void_label=None, class_names=None):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"a confusion matrix should be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts should be non-negative")
        self.counts = counts
        self.void_label = void_label
        self.class_names = list(class_names) if class_names is not None else list(range(len(counts)))

    @classmethod
    def from_predictions(cls, pred, truth, n_labels=N_LABELS, void_label=VOID_LABEL, class_names=None):
        """
        Parameters
        ----------
        pred, truth: array-like of int, same shape
        n_labels: int, default=20
        void_label: int, default=19
            pixels labelled void in ``truth`` are skipped
        class_names: sequence of str, default=None
            PASTIS-like names if None
        """
        pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
        if pred.shape != truth.shape:
            raise ShapeError(f"{pred.shape} predictions for {truth.shape} labels")
        keep = truth != void_label if void_label is not None else np.ones(truth.shape, dtype=bool)
        pred, truth = pred[keep].astype(np.int64), truth[keep].astype(np.int64)
        if pred.size and (min(pred.min(), truth.min()) < 0 or max(pred.max(), truth.max()) >= n_labels):
            raise ValueError(f"labels should lie in [0, {n_labels})")
        counts = np.bincount(truth * n_labels + pred, minlength=n_labels ** 2)
        if class_names is None:
            class_names = nomenclature(n_labels - 2)
        return cls(counts.reshape(n_labels, n_labels), void_label, class_names)

    def __add__(self, other):
        if self.counts.shape != other.counts.shape:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts, self.void_label, self.class_names)

    def __radd__(self, other):
        # sum() starts from 0
        if other == 0:
            return self
        return self.__add__(other)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def _check(self):
        if self.total == 0:
            raise EmptyEvaluation("no labelled pixel to evaluate")

    @property
    def overall_accuracy(self):
        self._check()
        return float(np.trace(self.counts) / self.total)

    @property
    def iou(self):
        """per-class IoU, for classes present in ground truth or predictions"""
        self._check()
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        present = union > 0
        if self.void_label is not None and self.void_label < len(present):
            present[self.void_label] = False
        index = [self.class_names[k] for k in np.flatnonzero(present)]
        return pd.Series(tp[present] / union[present], index=index, name="IoU")

    @property
    def miou(self):
        return float(self.iou.mean())

    def to_frame(self):
        return pd.DataFrame(self.counts, index=self.class_names, columns=self.class_names)


@dataclass
class SemanticScores:
    """overall accuracy, per-class IoU and their mean"""

    oa: float
    miou: float
    iou: pd.Series
    matrix: ConfusionMatrix

    def to_dict(self):
        return dict(OA=self.oa, mIoU=self.miou, IoU=self.iou.to_dict())


def semantic_metrics(pred, truth, n_labels=N_LABELS, void_label=VOID_LABEL, class_names=None):
    """
    Semantic metrics of a prediction, void pixels excluded

    Parameters
    ----------
    pred, truth: array-like of int, or lists of such arrays
    n_labels: int, default=20
    void_label: int, default=19

    Returns
    -------
    SemanticScores

    Raises
    ------
    EmptyEvaluation
        if all pixels are void
    """
    if isinstance(pred, (list, tuple)):
        matrix = sum(
            ConfusionMatrix.from_predictions(p, t, n_labels, void_label, class_names)
            for p, t in zip(pred, truth)
        )
        if not isinstance(matrix, ConfusionMatrix):
            raise EmptyEvaluation("no image to evaluate")
    else:
        matrix = ConfusionMatrix.from_predictions(pred, truth, n_labels, void_label, class_names)
    return scores_from_matrix(matrix)


def scores_from_matrix(matrix):
    """``SemanticScores`` of an accumulated confusion matrix"""
    return SemanticScores(oa=matrix.overall_accuracy, miou=matrix.miou, iou=matrix.iou, matrix=matrix)
