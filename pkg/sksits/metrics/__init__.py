"""
The :mod:`sksits.metrics` module gathers semantic and panoptic
segmentation metrics.
"""
from ._panoptic import (
    PanopticStats,
    class_average,
    evaluate_panoptic,
    panoptic_match,
    panoptic_quality,
)
from ._report import plot_confusion_matrix, plot_iou, write_report
from ._semantic import ConfusionMatrix, SemanticScores, scores_from_matrix, semantic_metrics
