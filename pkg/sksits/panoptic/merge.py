"""
Conversion of PaPs proposals into panoptic maps
"""
import json
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from PIL import Image
from sortedcontainers import SortedKeyList

from ..core import BACKGROUND
from ..exceptions import FormatError, ThresholdError
from ..metrics import panoptic_match

logger = logging.getLogger(__name__)

BINARY_THRESHOLD = 0.4
QUALITY_GRID = tuple(np.round(np.arange(0, 0.9 + 1e-9, 0.05), 2))
PANOPTIC_FORMAT = "sksits-panoptic-1"


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """
    Semantic and instance labels of an image

    Attributes
    ----------
    semantic: np.ndarray of shape (H, W)
    instance: np.ndarray of shape (H, W)
        0 on background, instance ids contiguous from 1
    instances: pd.DataFrame
        one row per instance, indexed by id, with columns
        ``class``, ``quality`` and ``area``
    """

    semantic: np.ndarray
    instance: np.ndarray
    instances: pd.DataFrame

    def __post_init__(self):
        semantic = np.asarray(self.semantic, dtype=np.int64)
        instance = np.asarray(self.instance, dtype=np.int64)
        if semantic.shape != instance.shape or semantic.ndim != 2:
            raise ValueError("semantic and instance maps should be 2D arrays of the same shape")
        if np.any((instance > 0) != (semantic != BACKGROUND)):
            raise ValueError("instance ids should be set exactly on non-background pixels")
        n = len(self.instances)
        if set(np.unique(instance[instance > 0]).tolist()) != set(range(1, n + 1)):
            raise ValueError("instance ids should be contiguous from 1")
        object.__setattr__(self, "semantic", semantic)
        object.__setattr__(self, "instance", instance)

    @property
    def shape(self):
        return self.semantic.shape

    @classmethod
    def empty(cls, shape):
        return cls(
            np.zeros(shape, dtype=np.int64),
            np.zeros(shape, dtype=np.int64),
            _instance_table([]),
        )


def _instance_table(rows):
    table = pd.DataFrame(rows, columns=["id", "class", "quality", "area"])
    table = table.astype({"id": np.int64, "class": np.int64, "quality": np.float64, "area": np.int64})
    return table.set_index("id")


def _order_key(proposal):
    i, j = proposal.center
    return (-proposal.quality, i, j)


def binarize(proposal, shape, threshold=BINARY_THRESHOLD):
    """
    Binary mask of a proposal, in the frame of the image

    Parameters
    ----------
    proposal: Proposal
    shape: tuple of int
    threshold: float, default=0.4
        mask values greater or equal are kept

    Returns
    -------
    np.ndarray of bool of shape ``shape``
    """
    out = np.zeros(shape, dtype=bool)
    t0, l0, b0, r0 = proposal.window
    out[t0:b0, l0:r0] = np.asarray(proposal.mask) >= threshold
    return out


def resolve_overlaps(proposals, shape, threshold=BINARY_THRESHOLD):
    """
    Give each pixel to the best proposal covering it, then drop
    proposals that lost more than half of their pixels

    Pixels of dropped proposals go to the background.
    Proposals with an empty mask are dropped.

    Parameters
    ----------
    proposals: iterable of Proposal
    shape: tuple of int
    threshold: float, default=0.4
        binarisation threshold of the masks

    Returns
    -------
    list of tuple (Proposal, np.ndarray)
        surviving proposals and their final masks, by decreasing quality,
        ties broken by center coordinates
    """
    queue = SortedKeyList(proposals, key=_order_key)
    owner = np.full(shape, -1, dtype=np.int64)
    masks = list()
    for rank, proposal in enumerate(queue):
        mask = binarize(proposal, shape, threshold)
        owner[mask & (owner < 0)] = rank
        masks.append(mask)

    survivors = list()
    for rank, (proposal, mask) in enumerate(zip(queue, masks)):
        original = int(mask.sum())
        kept = owner == rank
        if original == 0 or 2 * (original - int(kept.sum())) > original:
            continue
        survivors.append((proposal, kept))
    logger.debug("%d of %d proposals survive overlap resolution", len(survivors), len(queue))
    return survivors


def to_panoptic(survivors, shape):
    """
    Panoptic map of disjoint masks

    Parameters
    ----------
    survivors: list of tuple (Proposal, np.ndarray)
        by decreasing quality, as returned by ``resolve_overlaps``
    shape: tuple of int

    Returns
    -------
    PanopticMap
        instance ids follow the order of ``survivors``
    """
    semantic = np.full(shape, BACKGROUND, dtype=np.int64)
    instance = np.zeros(shape, dtype=np.int64)
    rows = list()
    for k, (proposal, mask) in enumerate(survivors, start=1):
        semantic[mask] = proposal.crop_class
        instance[mask] = k
        rows.append((k, proposal.crop_class, proposal.quality, int(mask.sum())))
    return PanopticMap(semantic, instance, _instance_table(rows))


def panoptic_from_proposals(proposal_set, threshold=0.0, binary_threshold=BINARY_THRESHOLD):
    """
    Panoptic map of the proposals of one image

    Parameters
    ----------
    proposal_set: ProposalSet
    threshold: float, default=0
        proposals of lower quality are dropped first
    binary_threshold: float, default=0.4

    Returns
    -------
    PanopticMap
    """
    kept = [p for p in proposal_set if p.quality >= threshold]
    survivors = resolve_overlaps(kept, proposal_set.shape, binary_threshold)
    return to_panoptic(survivors, proposal_set.shape)


def detection_f1(proposal_sets, samples, threshold, binary_threshold=BINARY_THRESHOLD):
    """
    F-score of the class-agnostic parcel detection at a quality threshold

    A predicted instance is a detection if its IoU with a parcel exceeds 0.5.
    Predictions matching a void parcel are ignored.
    """
    tp = fp = fn = 0
    for proposal_set, sample in zip(proposal_sets, samples):
        pmap = panoptic_from_proposals(proposal_set, threshold, binary_threshold)
        stats = panoptic_match(pmap, sample, class_agnostic=True)
        tp, fp, fn = tp + stats.tp.sum(), fp + stats.fp.sum(), fn + stats.fn.sum()
    denominator = 2 * tp + fp + fn
    return 2 * tp / denominator if denominator else 0.0


def tune_quality_threshold(proposal_sets, samples, grid=QUALITY_GRID, binary_threshold=BINARY_THRESHOLD):
    """
    Quality threshold maximising the detection F-score on annotated images

    Parameters
    ----------
    proposal_sets: list of ProposalSet
    samples: list of SITSSample
        annotations, in the same order
    grid: sequence of float, default=0, 0.05, ..., 0.9

    Returns
    -------
    float
        best grid value, the lowest one on ties

    Raises
    ------
    ThresholdError
        if there is no annotated image or the grid is empty
    """
    if not len(proposal_sets) or len(proposal_sets) != len(samples):
        raise ThresholdError(
            f"{len(proposal_sets)} proposal sets for {len(samples)} annotated images"
        )
    if not len(grid):
        raise ThresholdError("empty threshold grid")
    grid = sorted(float(t) for t in grid)
    scores = pd.Series([detection_f1(proposal_sets, samples, t, binary_threshold) for t in grid], index=grid)
    best = float(scores.index[int(np.argmax(scores.values))])
    logger.info("quality threshold %.2f, detection F1 %.4f", best, scores.max())
    return best


def save_panoptic(pmap, directory, name):
    """
    Write a panoptic map as two 16-bit PNG images and a JSON instance table

    Files are ``<name>_semantic.png``, ``<name>_instance.png`` and ``<name>.json``.
    """
    if max(pmap.semantic.max(initial=0), pmap.instance.max(initial=0)) > np.iinfo(np.uint16).max:
        raise ValueError("labels do not fit in 16 bits")
    os.makedirs(directory, exist_ok=True)
    paths = dict(
        semantic=os.path.join(directory, f"{name}_semantic.png"),
        instance=os.path.join(directory, f"{name}_instance.png"),
        table=os.path.join(directory, f"{name}.json"),
    )
    Image.fromarray(pmap.semantic.astype(np.uint16)).save(paths["semantic"])
    Image.fromarray(pmap.instance.astype(np.uint16)).save(paths["instance"])
    table = dict(
        format=PANOPTIC_FORMAT,
        shape=list(pmap.shape),
        instances=[
            {"id": int(i), "class": int(row["class"]), "quality": float(row["quality"]), "area": int(row["area"])}
            for i, row in pmap.instances.iterrows()
        ],
    )
    with open(paths["table"], "w") as f:
        json.dump(table, f, indent=2)
    return paths


def load_panoptic(directory, name):
    """inverse of ``save_panoptic``"""
    with open(os.path.join(directory, f"{name}.json")) as f:
        table = json.load(f)
    if table.get("format") != PANOPTIC_FORMAT:
        raise FormatError(f"unknown panoptic format {table.get('format')!r}")
    semantic = np.array(Image.open(os.path.join(directory, f"{name}_semantic.png")), dtype=np.int64)
    instance = np.array(Image.open(os.path.join(directory, f"{name}_instance.png")), dtype=np.int64)
    rows = [(r["id"], r["class"], r["quality"], r["area"]) for r in table["instances"]]
    return PanopticMap(semantic, instance, _instance_table(rows))
