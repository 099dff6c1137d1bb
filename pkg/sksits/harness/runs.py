"""
Operations behind the command line: train, evaluate, predict, ablate, gen-data

Each operation reads a :class:`RunConfig` and writes its outputs
under ``config.out``::

    <out>/config.yaml                 resolved configuration
    <out>/checkpoints/{best,last}/    per-epoch checkpoints, see ``UTAESegmenter``
    <out>/checkpoints/history.json    per-epoch training log
    <out>/model/                      selected model
    <out>/eval_<split>/               metric reports
    <out>/predictions/<sample id>/    maps and figures
    <out>/ablation.csv                comparison of ablation variants
"""
import logging
import os
import warnings
from dataclasses import dataclass, replace

import pandas as pd

from ..core import nomenclature, truncate_sample, void_label
from ..datasets import fold_split, generate_dataset, get_pastis_root, load_index, write_dataset
from ..encoders import ABLATIONS, count_parameters
from ..exceptions import DatasetIndexError, EmptyEvaluation, UnknownAblation
from ..metrics import class_average, evaluate_panoptic, panoptic_quality, semantic_metrics, write_report
from ..panoptic import dump_proposals, panoptic_from_proposals, save_panoptic, tune_quality_threshold
from .config import config_hash, dump_config
from .estimator import UTAESegmenter
from .figures import attention_montage, save_heatmap, save_panoptic_figure, save_saliency, save_semantic

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Splits:
    """samples of the three splits of a fold"""

    train: list
    val: list
    test: list
    n_classes: int

    def __getitem__(self, split):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
        return getattr(self, split)

    @property
    def n_channels(self):
        for split in SPLITS:
            if self[split]:
                return self[split][0].n_channels
        raise EmptyEvaluation("no sample in any split")


def load_splits(config):
    """
    Training, validation and test samples of the fold of ``config``

    Synthetic data is generated from ``config.data.generator``, PASTIS-layout
    data is read from ``config.data.root`` or ``PASTIS_ROOT``.
    """
    data = config.data
    if data.source == "synthetic":
        samples = generate_dataset(data.generator, data.n_samples, n_jobs=data.n_jobs)
        train, val, test = fold_split(samples, data.fold)
        n_classes = data.generator.n_classes
    else:
        index = load_index(get_pastis_root(data.root))
        train, val, test = (index.load_samples(e, n_jobs=data.n_jobs) for e in fold_split(index, data.fold))
        n_classes = index.n_classes
    logger.info("fold %d: %d train, %d val, %d test samples", data.fold, len(train), len(val), len(test))
    return Splits(list(train), list(val), list(test), n_classes)


def make_estimator(config, n_classes, checkpoint_dir=None, resume=False, verbose=False):
    """``UTAESegmenter`` configured by ``config``"""
    optim = config.optim
    return UTAESegmenter(
        task=config.task,
        utae_config=config.model,
        paps_config=config.paps,
        n_classes=n_classes,
        lr=optim.lr,
        n_epochs=optim.epochs,
        milestones=optim.milestones,
        gamma=optim.gamma,
        batch_size=optim.batch_size,
        weight_decay=optim.weight_decay,
        augment=config.data.augment,
        quality_threshold=config.quality_threshold if config.task == "panoptic" else "tune",
        max_proposals=config.max_proposals,
        device=config.device,
        random_state=config.seed,
        checkpoint_dir=checkpoint_dir,
        resume=resume,
        verbose=verbose,
    )


def expected_hash(config, splits):
    """architecture hash a checkpoint of ``config`` should carry"""
    return config_hash(make_estimator(config, splits.n_classes).architecture(splits.n_channels))


def model_dir(config):
    return os.path.join(config.out, "model")


def train(config, splits=None, resume=False, verbose=False):
    """
    Train a model, keeping the best epoch on validation samples

    Returns
    -------
    UTAESegmenter
        fitted, also saved to ``<out>/model``
    """
    splits = splits or load_splits(config)
    os.makedirs(config.out, exist_ok=True)
    dump_config(config, os.path.join(config.out, "config.yaml"))
    estimator = make_estimator(
        config,
        splits.n_classes,
        checkpoint_dir=os.path.join(config.out, "checkpoints"),
        resume=resume,
        verbose=verbose,
    )
    estimator.fit(splits.train, splits.val)
    estimator.save(model_dir(config))
    logger.info("best epoch %d, model saved to %s", estimator.best_epoch_ + 1, model_dir(config))
    return estimator


def _report_name(split, max_dates):
    return f"eval_{split}" if max_dates is None else f"eval_{split}_{max_dates}dates"


def evaluate(config, checkpoint=None, split="test", max_dates=None, splits=None):
    """
    Metrics of a trained model on a split

    For panoptic segmentation, the quality threshold is tuned on the
    validation samples first, unless ``config.quality_threshold`` is a number.

    Parameters
    ----------
    config: RunConfig
    checkpoint: str, default=None
        ``<out>/model`` if None
    split: str, default="test"
    max_dates: int, default=None
        evaluated sequences are truncated to their first ``max_dates`` acquisitions
    splits: Splits, default=None
        loaded from ``config`` if None

    Returns
    -------
    dict
        summary scores, also written with per-class tables to ``<out>/eval_<split>``

    Raises
    ------
    IncompatibleCheckpoint
        if the checkpoint was not trained with the architecture of ``config``
    EmptyEvaluation
        if the split holds no sample
    """
    splits = splits or load_splits(config)
    samples = [truncate_sample(s, max_dates) for s in splits[split]]
    if not samples:
        raise EmptyEvaluation(f"no sample in the {split} split of fold {config.data.fold}")
    estimator = UTAESegmenter.load(
        checkpoint or model_dir(config), expected_hash(config, splits), device=config.device
    )
    n_labels, void = splits.n_classes + 2, void_label(splits.n_classes)
    names = nomenclature(splits.n_classes)
    summary = dict(split=split, fold=config.data.fold, max_dates=max_dates, n_samples=len(samples))

    panoptic = None
    if config.task == "semantic":
        predictions = estimator.predict(samples)
    else:
        threshold = estimator.threshold_
        if config.quality_threshold == "tune":
            if splits.val:
                threshold = tune_quality_threshold(estimator.propose(splits.val), splits.val)
            else:
                warnings.warn("no validation sample to tune the quality threshold, the stored one is used")
        maps = [panoptic_from_proposals(p, threshold) for p in estimator.propose(samples)]
        predictions = [pmap.semantic for pmap in maps]
        stats = evaluate_panoptic(maps, samples, n_labels, n_jobs=config.data.n_jobs)
        panoptic = panoptic_quality(stats, class_names=names)
        summary.update(threshold=float(threshold), **{k: float(v) for k, v in class_average(panoptic).items()})

    semantic = semantic_metrics(predictions, [s.semantic for s in samples], n_labels, void, names)
    summary.update(OA=semantic.oa, mIoU=semantic.miou)
    write_report(
        os.path.join(config.out, _report_name(split, max_dates)),
        semantic=semantic,
        panoptic=panoptic,
        extra=summary,
    )
    logger.info("%s: %s", split, ", ".join(f"{k} {v:.4f}" for k, v in summary.items() if isinstance(v, float)))
    return summary


def predict(config, checkpoint=None, split="test", sample_ids=None, limit=None, n_dates=6, splits=None):
    """
    Write maps and figures of the samples of a split

    For every sample, ``<out>/predictions/<sample id>/`` receives the semantic
    map and the attention masks of the first level, and for panoptic
    segmentation the heatmap, the saliency map, the panoptic map and
    the proposals.

    Parameters
    ----------
    sample_ids: list of str, default=None
        restrict to these samples
    limit: int, default=None
        at most this many samples
    n_dates: int, default=6
        number of acquisitions shown in attention montages

    Returns
    -------
    list of str
        one directory per sample
    """
    splits = splits or load_splits(config)
    samples = list(splits[split])
    if sample_ids is not None:
        known = {s.sample_id for s in samples}
        missing = sorted(set(sample_ids) - known)
        if missing:
            raise DatasetIndexError(f"unknown samples in the {split} split: {missing}")
        samples = [s for s in samples if s.sample_id in set(sample_ids)]
    samples = samples[:limit]
    estimator = UTAESegmenter.load(
        checkpoint or model_dir(config), expected_hash(config, splits), device=config.device
    )
    n_labels = splits.n_classes + 2

    proposal_sets = estimator.propose(samples) if config.task == "panoptic" else [None] * len(samples)
    semantic_maps = estimator.predict(samples) if config.task == "semantic" else None
    directories = list()
    for k, (sample, proposals) in enumerate(zip(samples, proposal_sets)):
        directory = os.path.join(config.out, "predictions", sample.sample_id or f"{k:05d}")
        os.makedirs(directory, exist_ok=True)
        maps = estimator.inspect(sample)
        if maps["attention"] is not None:
            attention_montage(maps["attention"], maps["dates"], n_dates, os.path.join(directory, "attention.png"))
        if proposals is None:
            save_semantic(os.path.join(directory, "semantic.png"), semantic_maps[k], n_labels)
        else:
            pmap = panoptic_from_proposals(proposals, estimator.threshold_)
            save_semantic(os.path.join(directory, "semantic.png"), pmap.semantic, n_labels)
            save_panoptic(pmap, directory, "panoptic")
            save_panoptic_figure(os.path.join(directory, "panoptic_overlay.png"), pmap, n_labels)
            save_heatmap(os.path.join(directory, "heatmap.png"), maps["heatmap"])
            save_saliency(os.path.join(directory, "saliency.png"), maps["saliency"])
            dump_proposals([proposals], os.path.join(directory, "proposals.jsonl"))
        directories.append(directory)
    logger.info("predictions of %d samples written to %s", len(directories), os.path.join(config.out, "predictions"))
    return directories


def ablate(config, variants=ABLATIONS, splits=None, verbose=False):
    """
    Train and evaluate architecture variants with the same data, seed and schedule

    Parameters
    ----------
    variants: list of str, default=all supported variants
        from "full", "mean_attention", "skip_mean", "skip_mean_conv",
        "batchnorm_encoder" and "single_date"

    Returns
    -------
    pd.DataFrame
        one row per variant with its parameter count and test scores,
        also written to ``<out>/ablation.csv``

    Raises
    ------
    UnknownAblation
        before any training, if a variant is not supported
    """
    variants = list(variants)
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise UnknownAblation(f"unknown ablation variants {unknown}, expected some of {ABLATIONS}")
    splits = splits or load_splits(config)
    rows = list()
    for variant in variants:
        logger.info("ablation variant %s", variant)
        variant_config = replace(
            config, model=config.model.variant(variant), out=os.path.join(config.out, "ablation", variant)
        )
        estimator = train(variant_config, splits=splits, verbose=verbose)
        summary = evaluate(variant_config, splits=splits)
        scores = {k: v for k, v in summary.items() if k in ("OA", "mIoU", "SQ", "RQ", "PQ")}
        rows.append(
            dict(variant=variant, parameters=count_parameters(estimator.model_), best_epoch=estimator.best_epoch_, **scores)
        )
    table = pd.DataFrame(rows).set_index("variant")
    os.makedirs(config.out, exist_ok=True)
    table.to_csv(os.path.join(config.out, "ablation.csv"))
    return table


def generate(config, root=None, n_samples=None):
    """
    Write a synthetic dataset generated from ``config.data.generator``

    Returns
    -------
    str
        path to the metadata file of the dataset
    """
    data = config.data
    root = root or os.path.join(config.out, "data")
    samples = generate_dataset(data.generator, n_samples or data.n_samples, n_jobs=data.n_jobs)
    path = write_dataset(samples, root, n_classes=data.generator.n_classes)
    logger.info("%d synthetic samples written to %s", len(samples), root)
    return path
