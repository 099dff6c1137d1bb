"""
Metric reports: JSON summary, per-class CSV tables and figures
"""
import json
import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ._panoptic import class_average  # noqa: E402

logger = logging.getLogger(__name__)


def plot_confusion_matrix(matrix, ax=None):
    """row-normalised confusion matrix, void row and column left out"""
    counts = matrix.counts.astype(np.float64)
    names = list(matrix.class_names)
    if matrix.void_label is not None:
        keep = [k for k in range(len(names)) if k != matrix.void_label]
        counts = counts[np.ix_(keep, keep)]
        names = [names[k] for k in keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        normalised = np.nan_to_num(counts / counts.sum(axis=1, keepdims=True))
    if ax is None:
        _, ax = plt.subplots(figsize=(8, 7))
    image = ax.imshow(normalised, vmin=0, vmax=1, cmap="Blues")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xlabel("prediction")
    ax.set_ylabel("ground truth")
    ax.figure.colorbar(image, ax=ax, fraction=0.046)
    return ax


def plot_iou(iou, ax=None):
    """horizontal bar chart of per-class IoU"""
    if ax is None:
        _, ax = plt.subplots(figsize=(6, 0.3 * len(iou) + 1))
    ax.barh(range(len(iou)), iou.values, color="tab:green")
    ax.set_yticks(range(len(iou)))
    ax.set_yticklabels(list(iou.index), fontsize=7)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("IoU")
    return ax


def write_report(directory, semantic=None, panoptic=None, extra=None, name="metrics"):
    """
    Write evaluation results to ``directory``

    Parameters
    ----------
    directory: str
    semantic: SemanticScores, default=None
    panoptic: pd.DataFrame, default=None
        as returned by ``panoptic_quality``
    extra: dict, default=None
        additional entries of the JSON summary, e.g. the quality threshold
    name: str, default="metrics"
        prefix of the written files

    Returns
    -------
    dict
        paths of the written files
    """
    os.makedirs(directory, exist_ok=True)
    summary = dict(extra or {})
    paths = dict()
    if semantic is not None:
        summary["semantic"] = semantic.to_dict()
        paths["semantic_csv"] = os.path.join(directory, f"{name}_semantic.csv")
        semantic.iou.rename_axis("class").to_frame().to_csv(paths["semantic_csv"])

        fig, ax = plt.subplots(figsize=(8, 7))
        plot_confusion_matrix(semantic.matrix, ax=ax)
        paths["confusion_matrix"] = os.path.join(directory, f"{name}_confusion.png")
        fig.savefig(paths["confusion_matrix"], bbox_inches="tight", dpi=120)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(6, 0.3 * len(semantic.iou) + 1))
        plot_iou(semantic.iou, ax=ax)
        paths["iou"] = os.path.join(directory, f"{name}_iou.png")
        fig.savefig(paths["iou"], bbox_inches="tight", dpi=120)
        plt.close(fig)
    if panoptic is not None:
        means = class_average(panoptic)
        summary["panoptic"] = dict(
            {k: (None if pd.isna(v) else float(v)) for k, v in means.items()},
            per_class=json.loads(panoptic.to_json(orient="index")),
        )
        paths["panoptic_csv"] = os.path.join(directory, f"{name}_panoptic.csv")
        panoptic.rename_axis("class").to_csv(paths["panoptic_csv"])

    paths["json"] = os.path.join(directory, f"{name}.json")
    with open(paths["json"], "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    logger.info("report written to %s", directory)
    return paths
