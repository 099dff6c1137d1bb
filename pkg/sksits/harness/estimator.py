"""
U-TAE segmenter: training loop, model selection and inference
"""
import copy
import json
import logging
import os
import warnings
from dataclasses import replace

import numpy as np
import torch
from tqdm import tqdm

from ..base import BaseSegmenter, FitPredictMixin
from ..callbacks import training_logs
from ..core import N_CROP_CLASSES, ChannelStats, flip_sample, normalize_channels, pad_and_batch, void_label
from ..datasets import compute_norm_stats
from ..encoders import UTAE, UTAEConfig, count_parameters, semantic_loss
from ..exceptions import DivergenceError, EmptyTrainingSet, IncompatibleCheckpoint
from ..metrics import class_average, evaluate_panoptic, panoptic_quality, semantic_metrics
from ..panoptic import PanopticUTAE, PaPsConfig, panoptic_from_proposals, tune_quality_threshold
from ..utils import _check_device, _check_random_state, seed_everything
from .checkpoint import (
    load_checkpoint,
    load_training_state,
    restore_rng,
    save_checkpoint,
    save_training_state,
)
from .config import TASK_SCHEDULES, TASKS, config_hash

logger = logging.getLogger(__name__)

BEST, LAST = "best", "last"

# left out of checkpoints, they describe where and how a model runs
RUNTIME_PARAMS = ("utae_config", "paps_config", "device", "checkpoint_dir", "resume", "verbose")


def _batches(samples, batch_size, order=None):
    order = np.arange(len(samples)) if order is None else order
    for start in range(0, len(order), batch_size):
        yield [samples[k] for k in order[start : start + batch_size]]


class UTAESegmenter(BaseSegmenter, FitPredictMixin):
    """
    Semantic or panoptic segmentation of image sequences with a U-TAE network

    For panoptic segmentation, the semantic head of U-TAE is replaced
    by a PaPs head.

    Parameters
    ----------
    task: str, default="semantic"
        "semantic" or "panoptic"
    utae_config: UTAEConfig, default=None
        backbone architecture, the default one if None. Its number of input
        channels and of output classes are set from the data and ``n_classes``
    paps_config: PaPsConfig, default=None
        panoptic head, the default one if None
    n_classes: int, default=18
        number of crop classes, background and void label excluded
    lr: float, default=None
        initial learning rate, 1e-3 for semantic and 1e-2 for panoptic segmentation
    n_epochs: int, default=100
    milestones: tuple of int, default=None
        epochs after which the learning rate is multiplied by ``gamma``,
        none for semantic and (50,) for panoptic segmentation
    gamma: float, default=0.1
    batch_size: int, default=4
    weight_decay: float, default=0
    augment: bool, default=False
        random flips of the training sequences
    quality_threshold: float or str, default="tune"
        proposals of lower quality are discarded. If "tune", the threshold
        maximising the detection F-score on the validation samples is used
    max_proposals: int, default=None
    device: str, default=None
        torch device, cpu if None
    random_state: int, default=0
        seeds weight initialisation, data order and augmentation
    checkpoint_dir: str, default=None
        if set, the best and last models are written to its ``best`` and
        ``last`` subdirectories after every epoch, with a training state
        and a JSON training log
    resume: bool, default=False
        resume training from ``checkpoint_dir/last`` if it exists
    verbose: bool, default=False
        log losses and validation scores after every epoch

    Attributes
    ----------
    model_: torch.nn.Module
        best model on validation samples, last model without validation
    norm_stats_: ChannelStats
        computed on training samples
    history_: list of dict
        one record per epoch, with losses and validation scores
    best_epoch_: int
    threshold_: float
        quality threshold, panoptic segmentation only

    Examples
    --------
    >>> from sksits.datasets import GenConfig, generate_dataset
    >>> from sksits.encoders import UTAEConfig
    >>> samples = generate_dataset(GenConfig(H=16, W=16, T_range=(4, 5), channels=3, n_classes=2), 4)
    >>> cfg = UTAEConfig(encoder_widths=(8, 16), decoder_widths=(8, 16), out_conv=(8, 4),
    ...                  n_head=2, d_model=8, mlp=(8, 16))
    >>> segmenter = UTAESegmenter(utae_config=cfg, n_classes=2, n_epochs=1)
    >>> maps = segmenter.fit(samples).predict(samples)
    >>> maps[0].shape
    (16, 16)
    """

    def __init__(
        self,
        *,
        task="semantic",
        utae_config=None,
        paps_config=None,
        n_classes=N_CROP_CLASSES,
        lr=None,
        n_epochs=100,
        milestones=None,
        gamma=0.1,
        batch_size=4,
        weight_decay=0.0,
        augment=False,
        quality_threshold="tune",
        max_proposals=None,
        device=None,
        random_state=0,
        checkpoint_dir=None,
        resume=False,
        verbose=False,
    ):
        self.task = task
        self.utae_config = utae_config
        self.paps_config = paps_config
        self.n_classes = n_classes
        self.lr = lr
        self.n_epochs = n_epochs
        self.milestones = milestones
        self.gamma = gamma
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.augment = augment
        self.quality_threshold = quality_threshold
        self.max_proposals = max_proposals
        self.device = device
        self.random_state = random_state
        self.checkpoint_dir = checkpoint_dir
        self.resume = resume
        self.verbose = verbose
        if verbose:
            training_logs(self)

    @property
    def void_label(self):
        return void_label(self.n_classes)

    @property
    def n_labels(self):
        return self.n_classes + 2

    def architecture(self, input_dim):
        """JSON-serialisable description of the network, hashed into checkpoints"""
        utae = replace(self.utae_config or UTAEConfig(), input_dim=int(input_dim))
        arch = dict(task=self.task, n_classes=self.n_classes)
        if self.task == "semantic":
            utae = replace(utae, out_conv=utae.out_conv[:-1] + (self.n_labels,))
            arch.update(utae=utae.to_dict())
        else:
            paps = replace(
                self.paps_config or PaPsConfig(), n_classes=self.n_labels, decoder_widths=utae.decoder_widths
            )
            arch.update(utae=replace(utae, out_conv=()).to_dict(), paps=paps.to_dict())
        return arch

    def _build_model(self, arch):
        utae = UTAEConfig(**arch["utae"])
        if arch["task"] == "semantic":
            model = UTAE(utae)
        else:
            model = PanopticUTAE(utae, PaPsConfig(**arch["paps"]))
        return model.to(self.device_)

    def _check_params(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        self.device_ = _check_device(self.device)
        schedule = TASK_SCHEDULES[self.task]
        self.lr_ = schedule["lr"] if self.lr is None else float(self.lr)
        self.milestones_ = tuple(schedule["milestones"] if self.milestones is None else self.milestones)

    def _prepare(self, samples):
        batch = normalize_channels(pad_and_batch(samples), self.norm_stats_)
        return batch.to_torch(self.device_)

    def fit(self, samples, val_samples=None):
        """
        Train a network on annotated samples

        Parameters
        ----------
        samples: list of SITSSample
        val_samples: list of SITSSample, default=None
            used to select the best epoch and to tune the quality threshold

        Raises
        ------
        EmptyTrainingSet
            if ``samples`` is empty
        DivergenceError
            if the loss becomes NaN or infinite. A snapshot of the failing step
            is attached to the error, and written to ``checkpoint_dir`` if set
        """
        samples = list(samples)
        if not samples:
            raise EmptyTrainingSet("no training sample")
        self._check_params()
        seed_everything(self.random_state)

        self.norm_stats_ = compute_norm_stats(samples)
        self.architecture_ = self.architecture(samples[0].n_channels)
        self.model_ = self._build_model(self.architecture_)
        self.optimizer_ = torch.optim.Adam(
            self.model_.parameters(), lr=self.lr_, weight_decay=self.weight_decay
        )
        self.scheduler_ = torch.optim.lr_scheduler.MultiStepLR(
            self.optimizer_, milestones=list(self.milestones_), gamma=self.gamma
        )
        self.history_ = list()
        self.best_epoch_, best_score, best_state = None, -np.inf, None
        logger.info("training a %s model of %d parameters", self.task, count_parameters(self.model_))

        start = self._resume() if self.resume else 0
        if start and self.history_:
            best_record = max(self.history_, key=lambda r: r.get("selection", -np.inf))
            self.best_epoch_, best_score = best_record["epoch"], best_record.get("selection", -np.inf)

        for epoch in range(start, self.n_epochs):
            record = dict(self._train_epoch(epoch, samples))
            if val_samples:
                scores = self._validate(val_samples)
                record.update({f"val_{k}": v for k, v in scores.items()})
                record["selection"] = scores["PQ"] if self.task == "panoptic" else scores["mIoU"]
            else:
                record["selection"] = float(epoch)
            self.history_.append(record)

            improved = record["selection"] > best_score
            if improved:
                self.best_epoch_, best_score = epoch, record["selection"]
                best_state = copy.deepcopy(self.model_.state_dict())
            if self.checkpoint_dir is not None:
                self._save_progress(epoch, improved)

        if best_state is not None:
            self.model_.load_state_dict(best_state)
        elif self.checkpoint_dir is not None and os.path.isdir(os.path.join(self.checkpoint_dir, BEST)):
            # best epoch happened before resuming
            state_dict, _ = load_checkpoint(os.path.join(self.checkpoint_dir, BEST), config_hash(self.architecture_))
            self.model_.load_state_dict(state_dict)

        if self.task == "panoptic":
            self.threshold_ = self._select_threshold(val_samples)
        return self

    def _select_threshold(self, val_samples):
        if self.quality_threshold != "tune":
            return float(self.quality_threshold)
        if not val_samples:
            warnings.warn("no validation sample to tune the quality threshold, 0 is used")
            return 0.0
        return tune_quality_threshold(self.propose(val_samples), list(val_samples))

    def _augment(self, batch_samples, rng):
        out = list()
        for sample in batch_samples:
            for axis in (0, 1):
                if rng.uniform() < 0.5:
                    sample = flip_sample(sample, axis)
            out.append(sample)
        return out

    def _train_epoch(self, epoch, samples):
        """one pass over ``samples``, in an order drawn from ``random_state + epoch``"""
        rng = _check_random_state(self.random_state + epoch)
        order = rng.permutation(len(samples))
        self.model_.train()
        totals, n_batches = dict(), 0
        batches = _batches(samples, self.batch_size, order)
        n_total = -(-len(samples) // self.batch_size)
        for k, batch_samples in enumerate(tqdm(batches, total=n_total, disable=not self.verbose, leave=False)):
            if self.augment:
                batch_samples = self._augment(batch_samples, rng)
            images, dates, pad_mask = self._prepare(batch_samples)
            terms = self._loss(images, dates, pad_mask, batch_samples)
            loss = terms["loss"]
            if not torch.isfinite(loss):
                self._diverge(epoch, k, batch_samples, terms)
            self.optimizer_.zero_grad()
            loss.backward()
            self.optimizer_.step()
            for name, value in terms.items():
                totals[name] = totals.get(name, 0.0) + float(value)
            n_batches += 1
        lr = self.optimizer_.param_groups[0]["lr"]
        self.scheduler_.step()
        record = {name: value / n_batches for name, value in totals.items()}
        return dict(epoch=epoch, lr=lr, **record)

    def _loss(self, images, dates, pad_mask, batch_samples):
        if self.task == "semantic":
            logits = self.model_(images, dates, pad_mask)
            target = torch.as_tensor(np.stack([s.semantic for s in batch_samples]), device=self.device_)
            return dict(loss=semantic_loss(logits, target, self.void_label))
        d = self.model_(images, dates, pad_mask)
        losses = self.model_.head.loss(d, batch_samples)
        return dict(
            loss=losses.total,
            center=losses.center.detach(),
            classification=losses.classification.detach(),
            size=losses.size.detach(),
            shape=losses.shape.detach(),
        )

    def _diverge(self, epoch, batch_index, batch_samples, terms):
        snapshot = dict(
            epoch=epoch,
            batch=batch_index,
            sample_ids=[s.sample_id for s in batch_samples],
            terms={k: float(v) for k, v in terms.items()},
            lr=self.optimizer_.param_groups[0]["lr"],
            history=self.history_,
        )
        if self.checkpoint_dir is not None:
            os.makedirs(self.checkpoint_dir, exist_ok=True)
            with open(os.path.join(self.checkpoint_dir, "divergence.json"), "w") as f:
                json.dump(snapshot, f, indent=2)
            save_checkpoint(
                os.path.join(self.checkpoint_dir, "diverged"),
                self.model_.state_dict(),
                self.architecture_,
                self.norm_stats_,
                epoch=epoch,
            )
        raise DivergenceError(
            f"non-finite loss at epoch {epoch + 1}, batch {batch_index + 1} "
            f"(samples {snapshot['sample_ids']})",
            snapshot=snapshot,
        )

    def _validate(self, val_samples):
        """validation scores of the current model"""
        if self.task == "semantic":
            scores = semantic_metrics(self.predict(val_samples), [s.semantic for s in val_samples],
                                      self.n_labels, self.void_label)
            return dict(OA=scores.oa, mIoU=scores.miou)
        proposal_sets = self.propose(val_samples)
        threshold = self.quality_threshold
        if threshold == "tune":
            threshold = tune_quality_threshold(proposal_sets, list(val_samples))
        maps = [panoptic_from_proposals(p, float(threshold)) for p in proposal_sets]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            means = class_average(panoptic_quality(evaluate_panoptic(maps, val_samples, self.n_labels)))
        pq = 0.0 if np.isnan(means["PQ"]) else float(means["PQ"])
        return dict(SQ=float(np.nan_to_num(means["SQ"])), RQ=float(np.nan_to_num(means["RQ"])),
                    PQ=pq, threshold=float(threshold))

    def _save_progress(self, epoch, improved):
        extra = dict(epoch=epoch, record=self.history_[-1])
        if improved:
            save_checkpoint(os.path.join(self.checkpoint_dir, BEST), self.model_.state_dict(),
                            self.architecture_, self.norm_stats_, **extra)
        last = os.path.join(self.checkpoint_dir, LAST)
        save_checkpoint(last, self.model_.state_dict(), self.architecture_, self.norm_stats_, **extra)
        save_training_state(last, self.optimizer_, self.scheduler_, epoch, self.history_)
        with open(os.path.join(self.checkpoint_dir, "history.json"), "w") as f:
            json.dump(self.history_, f, indent=2)

    def _resume(self):
        """restore the last saved epoch, returns the next epoch to train"""
        if self.checkpoint_dir is None:
            return 0
        last = os.path.join(self.checkpoint_dir, LAST)
        state = load_training_state(last)
        if state is None:
            logger.info("nothing to resume in %s, training from scratch", self.checkpoint_dir)
            return 0
        state_dict, _ = load_checkpoint(last, config_hash(self.architecture_))
        self.model_.load_state_dict(state_dict)
        self.optimizer_.load_state_dict(state["optimizer"])
        self.scheduler_.load_state_dict(state["scheduler"])
        self.history_ = list(state["history"])
        restore_rng(state)
        logger.info("resuming after epoch %d", state["epoch"] + 1)
        return state["epoch"] + 1

    def _forward_batches(self, samples):
        """yields batches of samples with the network outputs, in evaluation mode"""
        self.model_.eval()
        with torch.no_grad():
            for batch_samples in _batches(list(samples), self.batch_size):
                images, dates, pad_mask = self._prepare(batch_samples)
                yield batch_samples, self.model_(images, dates, pad_mask)

    def predict(self, samples):
        """
        Semantic maps of samples

        For panoptic segmentation, the semantic channel of the panoptic maps.
        The void label is never predicted.

        Returns
        -------
        list of np.ndarray of shape (H, W)
        """
        if self.task == "panoptic":
            return [pmap.semantic for pmap in self.predict_panoptic(samples)]
        maps = list()
        for _, logits in self._forward_batches(samples):
            maps.extend(logits[:, : self.void_label].argmax(dim=1).cpu().numpy())
        return maps

    def propose(self, samples, threshold=0.0):
        """PaPs proposals of samples, see ``PaPs.propose``"""
        self._check_panoptic()
        out = list()
        for batch_samples, d in self._forward_batches(samples):
            out.extend(
                self.model_.head.propose(
                    d, threshold, self.max_proposals, [s.sample_id for s in batch_samples]
                )
            )
        return out

    def predict_panoptic(self, samples, threshold=None):
        """
        Panoptic maps of samples

        Parameters
        ----------
        samples: list of SITSSample
        threshold: float, default=None
            quality threshold, ``threshold_`` if None

        Returns
        -------
        list of PanopticMap
        """
        self._check_panoptic()
        threshold = self.threshold_ if threshold is None else threshold
        return [panoptic_from_proposals(p, threshold) for p in self.propose(samples)]

    def _check_panoptic(self):
        if self.task != "panoptic":
            raise ValueError("panoptic predictions require a segmenter trained with task='panoptic'")

    def inspect(self, sample):
        """
        Intermediate maps of a single sample

        Returns
        -------
        dict
            ``attention`` of shape (G, T, H, W) at full resolution, none for
            the single date ablation, ``dates``, and ``scores`` (class scores) for
            semantic segmentation or ``heatmap`` and ``saliency`` for panoptic
            segmentation, as numpy arrays
        """
        self.model_.eval()
        images, dates, pad_mask = self._prepare([sample])
        out = dict(dates=np.asarray(sample.dates))
        with torch.no_grad():
            backbone = self.model_ if self.task == "semantic" else self.model_.backbone
            logits, pyramid = backbone(images, dates, pad_mask, return_pyramid=True)
            out["attention"] = pyramid.a[0][0].cpu().numpy() if pyramid.a else None
            if self.task == "semantic":
                out["scores"] = torch.softmax(logits, dim=1)[0].cpu().numpy()
            else:
                out["heatmap"] = self.model_.head.heatmap(pyramid.d[0])[0].cpu().numpy()
                out["saliency"] = torch.sigmoid(self.model_.head.saliency(pyramid.d[0]))[0].cpu().numpy()
        return out

    def score(self, samples):
        """
        mIoU for semantic segmentation, class-averaged PQ for panoptic segmentation
        """
        samples = list(samples)
        if self.task == "semantic":
            return semantic_metrics(self.predict(samples), [s.semantic for s in samples],
                                    self.n_labels, self.void_label).miou
        stats = evaluate_panoptic(self.predict_panoptic(samples), samples, self.n_labels)
        return float(class_average(panoptic_quality(stats))["PQ"])

    def save(self, directory):
        """write the fitted model as a checkpoint"""
        return save_checkpoint(
            directory,
            self.model_.state_dict(),
            self.architecture_,
            self.norm_stats_,
            params={k: v for k, v in self.get_params().items() if k not in RUNTIME_PARAMS},
            threshold=getattr(self, "threshold_", None),
            best_epoch=self.best_epoch_,
        )

    @classmethod
    def load(cls, directory, expected_hash=None, **params):
        """
        Fitted segmenter from a checkpoint

        Parameters
        ----------
        directory: str
        expected_hash: str, default=None
            architecture hash the checkpoint should match
        **params
            override the stored estimator parameters, e.g. ``device``

        Raises
        ------
        IncompatibleCheckpoint
        """
        state_dict, manifest = load_checkpoint(directory, expected_hash)
        arch = manifest["architecture"]
        if manifest.get("norm_stats") is None:
            raise IncompatibleCheckpoint(f"checkpoint {directory} has no normalisation statistics")
        stored = dict(manifest.get("params", {}))
        stored.update(task=arch["task"], n_classes=arch["n_classes"])
        stored.update(params)
        stored.update(
            utae_config=UTAEConfig(**arch["utae"]),
            paps_config=PaPsConfig(**arch["paps"]) if "paps" in arch else None,
        )
        segmenter = cls(**stored)
        segmenter._check_params()
        segmenter.architecture_ = arch
        segmenter.norm_stats_ = ChannelStats(**manifest["norm_stats"])
        segmenter.model_ = segmenter._build_model(arch)
        segmenter.model_.load_state_dict(state_dict)
        segmenter.best_epoch_ = manifest.get("best_epoch", manifest.get("epoch"))
        segmenter.history_ = list()
        if arch["task"] == "panoptic":
            threshold = manifest.get("threshold")
            segmenter.threshold_ = 0.0 if threshold is None else float(threshold)
        return segmenter
