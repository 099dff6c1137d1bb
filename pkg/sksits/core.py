"""
Shared data model for satellite image time series (SITS)

Sequences, parcel annotations, padded batches, and the pixel to parcel
assignment used by the panoptic head during training.

Label convention: ``0`` is background, ``1..K`` are crop classes and ``K + 1``
is the void label. Void pixels are ignored by every loss and metric.
"""
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DegenerateStats, EmptyBatch, ShapeMismatch

BACKGROUND = 0
N_CROP_CLASSES = 18
VOID_LABEL = N_CROP_CLASSES + 1
N_LABELS = N_CROP_CLASSES + 2

PASTIS_NOMENCLATURE = (
    "Background",
    "Meadow",
    "Soft winter wheat",
    "Corn",
    "Winter barley",
    "Winter rapeseed",
    "Spring barley",
    "Sunflower",
    "Grapevine",
    "Beet",
    "Winter triticale",
    "Winter durum wheat",
    "Fruits, vegetables, flowers",
    "Potatoes",
    "Leguminous fodder",
    "Soybeans",
    "Orchard",
    "Mixed cereal",
    "Sorghum",
    "Void label",
)

SIGMA_FLOOR = 0.5


def void_label(n_classes=N_CROP_CLASSES):
    """label reserved for void pixels, given ``n_classes`` crop classes"""
    return n_classes + 1


def nomenclature(n_classes=N_CROP_CLASSES):
    """Class names for a label space with ``n_classes`` crop classes

    Returns the PASTIS names for the default 18 classes,
    generic names otherwise. Background comes first and void last.
    """
    if n_classes == N_CROP_CLASSES:
        return PASTIS_NOMENCLATURE
    crops = tuple(f"class {k}" for k in range(1, n_classes + 1))
    return ("Background",) + crops + ("Void label",)


def _readonly(array, dtype):
    array = np.array(array, dtype=dtype)
    array.flags.writeable = False
    return array


def _tight_box(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], cols[0], rows[-1] + 1, cols[-1] + 1


def _snap_center(mask):
    ii, jj = np.nonzero(mask)
    ci = int(np.floor(ii.mean() + 0.5))
    cj = int(np.floor(jj.mean() + 0.5))
    if mask[ci, cj]:
        return ci, cj
    # closest in-mask pixel, first in row-major order on ties
    k = np.argmin((ii - ci) ** 2 + (jj - cj) ** 2)
    return int(ii[k]), int(jj[k])


@dataclass(frozen=True, eq=False)
class ParcelRecord:
    """
    Ground truth annotation of a single agricultural parcel

    Parameters
    ----------
    id: int
        instance id, strictly positive
    center: tuple of int
        integer centerpoint ``(i, j)``
    bbox_size: tuple of float
        height and width of the tight bounding box, in pixels
    mask: np.ndarray of shape (H, W)
        binary instance mask, clipped to the patch
    crop_class: int
        crop type, in ``[1, K]``
    is_void: bool, default=False
        True for parcels out of the nomenclature, or mostly outside of the patch
    """

    id: int
    center: tuple
    bbox_size: tuple
    mask: np.ndarray
    crop_class: int
    is_void: bool = False

    def __post_init__(self):
        mask = _readonly(self.mask, bool)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        object.__setattr__(self, "bbox_size", tuple(float(s) for s in self.bbox_size))
        if mask.ndim != 2 or not mask.any():
            raise ValueError(f"parcel {self.id} has an empty mask")
        i, j = self.center
        if not (0 <= i < mask.shape[0] and 0 <= j < mask.shape[1]):
            raise ValueError(f"parcel {self.id} has its center outside of the image")
        if min(self.bbox_size) < 1:
            raise ValueError(f"parcel {self.id} has a bounding box smaller than 1 pixel")
        top, left, bottom, right = _tight_box(mask)
        if self.bbox_size != (bottom - top, right - left):
            raise ValueError(f"parcel {self.id} bounding box is not tight on its mask")

    @classmethod
    def from_mask(cls, id, mask, crop_class, is_void=False):
        """Build a record from a binary mask, deriving center and bounding box

        The center is the mask centroid, rounded, then snapped to the closest pixel
        of the mask when the rounded centroid falls outside of it.
        """
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError(f"parcel {id} has an empty mask")
        top, left, bottom, right = _tight_box(mask)
        return cls(
            id=int(id),
            center=_snap_center(mask),
            bbox_size=(bottom - top, right - left),
            mask=mask,
            crop_class=int(crop_class),
            is_void=bool(is_void),
        )

    @property
    def bbox(self):
        """tight box as ``(top, left, bottom, right)``, bottom and right excluded"""
        return tuple(int(v) for v in _tight_box(self.mask))

    @property
    def area(self):
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class SITSSample:
    """
    One geo-referenced image sequence with its panoptic annotations

    Parameters
    ----------
    images: np.ndarray of shape (T, C, H, W)
        reflectances
    dates: np.ndarray of shape (T,)
        acquisition dates, as day offsets from a reference date, strictly increasing
    semantic: np.ndarray of shape (H, W)
        semantic labels
    instances: np.ndarray of shape (H, W)
        instance ids, 0 for background
    parcels: tuple of ParcelRecord
        one record per instance id
    sample_id: str
    fold: int, default=1
    """

    images: np.ndarray
    dates: np.ndarray
    semantic: np.ndarray
    instances: np.ndarray
    parcels: tuple = ()
    sample_id: str = ""
    fold: int = 1

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)
        set_("images", _readonly(self.images, np.float32))
        set_("dates", _readonly(self.dates, np.int64))
        set_("semantic", _readonly(self.semantic, np.int64))
        set_("instances", _readonly(self.instances, np.int64))
        set_("parcels", tuple(sorted(self.parcels, key=lambda p: p.id)))
        set_("sample_id", str(self.sample_id))
        set_("fold", int(self.fold))
        self._check()

    def _check(self):
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"images should be of shape (T, C, H, W), got {self.images.shape}")
        if self.dates.shape != (self.T,):
            raise ValueError("expected one date per acquisition")
        if np.any(np.diff(self.dates) <= 0):
            raise ValueError(f"dates of sample {self.sample_id!r} are not strictly increasing")
        if self.semantic.shape != self.shape or self.instances.shape != self.shape:
            raise ValueError("annotation maps should have the spatial shape of the images")
        if not 1 <= self.fold <= 5:
            raise ValueError(f"fold should be in 1..5, got {self.fold}")

        ids = [p.id for p in self.parcels]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate parcel ids in sample {self.sample_id!r}")
        present = set(np.unique(self.instances).tolist()) - {0}
        if present != set(ids):
            raise ValueError(
                f"instance ids {sorted(present)} do not match parcel records {sorted(ids)}"
            )
        for parcel in self.parcels:
            if parcel.mask.shape != self.shape:
                raise ValueError(f"parcel {parcel.id} mask does not match the image")
            if len(np.unique(self.semantic[self.instances == parcel.id])) != 1:
                raise ValueError(f"parcel {parcel.id} spans several semantic classes")

    @property
    def T(self):
        return self.images.shape[0]

    @property
    def shape(self):
        """spatial shape ``(H, W)``"""
        return self.images.shape[2:]

    @property
    def n_channels(self):
        return self.images.shape[1]

    def valid_parcels(self):
        """parcels taking part in losses and metrics, i.e. non-void ones"""
        return [p for p in self.parcels if not p.is_void]


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """per-channel mean and standard deviation"""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean, np.float64))
        object.__setattr__(self, "std", _readonly(self.std, np.float64))

    def to_dict(self):
        return dict(mean=self.mean.tolist(), std=self.std.tolist())


@dataclass(frozen=True, eq=False)
class PaddedBatch:
    """
    Samples stacked along a batch axis, shorter sequences padded with zeros

    Parameters
    ----------
    images: np.ndarray of shape (B, T_max, C, H, W)
    pad_mask: np.ndarray of shape (B, T_max)
        True for real acquisitions, a prefix of ones for every sample
    dates: np.ndarray of shape (B, T_max)
        day offsets, 0 on padded frames
    targets: tuple of SITSSample
        the samples the batch was built from, in order
    """

    images: np.ndarray
    pad_mask: np.ndarray
    dates: np.ndarray
    targets: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "images", _readonly(self.images, np.float32))
        object.__setattr__(self, "pad_mask", _readonly(self.pad_mask, bool))
        object.__setattr__(self, "dates", _readonly(self.dates, np.int64))
        object.__setattr__(self, "targets", tuple(self.targets))
        lengths = self.lengths
        prefix = np.arange(self.pad_mask.shape[1])[None, :] < lengths[:, None]
        if not np.array_equal(prefix, self.pad_mask):
            raise ValueError("pad_mask should be a prefix of ones followed by zeros")
        if np.any(self.images[~self.pad_mask]):
            raise ValueError("padded frames should be all zeros")

    @property
    def lengths(self):
        """number of real acquisitions per sample"""
        return self.pad_mask.sum(axis=1)

    def __len__(self):
        return self.images.shape[0]

    def unpad(self):
        """list of per-sample image sequences, without padding"""
        return [self.images[b, :n] for b, n in enumerate(self.lengths)]

    def to_torch(self, device=None):
        """images, dates and pad mask as torch tensors"""
        import torch

        return (
            torch.tensor(self.images, device=device),
            torch.tensor(self.dates, device=device),
            torch.tensor(self.pad_mask, device=device),
        )


def pad_and_batch(samples):
    """
    Stack samples into a batch, appending all-zero frames to shorter sequences

    Parameters
    ----------
    samples: list of SITSSample
        all samples must share C, H and W

    Returns
    -------
    PaddedBatch

    Raises
    ------
    EmptyBatch
        if ``samples`` is empty
    ShapeMismatch
        if channel or spatial dimensions differ
    """
    samples = list(samples)
    if not samples:
        raise EmptyBatch("cannot build a batch from an empty list of samples")
    shapes = {s.images.shape[1:] for s in samples}
    if len(shapes) > 1:
        raise ShapeMismatch(f"samples have different (C, H, W) shapes: {sorted(shapes)}")

    t_max = max(s.T for s in samples)
    c, h, w = shapes.pop()
    images = np.zeros((len(samples), t_max, c, h, w), dtype=np.float32)
    pad_mask = np.zeros((len(samples), t_max), dtype=bool)
    dates = np.zeros((len(samples), t_max), dtype=np.int64)
    for b, sample in enumerate(samples):
        images[b, : sample.T] = sample.images
        pad_mask[b, : sample.T] = True
        dates[b, : sample.T] = sample.dates
    return PaddedBatch(images=images, pad_mask=pad_mask, dates=dates, targets=samples)


def kernel_sigmas(bbox_size, floor=SIGMA_FLOOR):
    """vertical and horizontal deviations of a parcel kernel, 1/20 of its box"""
    h, w = bbox_size
    return max(h / 20.0, floor), max(w / 20.0, floor)


def kernel_exponents(parcel, shape):
    """
    Exponent of the Gaussian kernel of ``parcel`` on the whole image,
    so that the kernel value is ``exp(-exponent)``
    """
    s_ver, s_hor = kernel_sigmas(parcel.bbox_size)
    ci, cj = parcel.center
    ii = np.arange(shape[0], dtype=np.float64)[:, None]
    jj = np.arange(shape[1], dtype=np.float64)[None, :]
    return (ii - ci) ** 2 / (2 * s_ver ** 2) + (jj - cj) ** 2 / (2 * s_hor ** 2)


def pixel_to_parcel_map(parcels, H, W):
    """
    Map every pixel to the parcel whose kernel is maximal on it

    The comparison is made on kernel exponents, so that pixels far away
    from every center, where all kernels underflow, still get assigned.
    Ties go to the lowest parcel id.

    Parameters
    ----------
    parcels: list of ParcelRecord
    H, W: int
        image shape

    Returns
    -------
    np.ndarray of shape (H, W)
        parcel ids, all zeros if ``parcels`` is empty
    """
    out = np.zeros((H, W), dtype=np.int64)
    best = np.full((H, W), np.inf)
    for parcel in sorted(parcels, key=lambda p: p.id):
        exponent = kernel_exponents(parcel, (H, W))
        closer = exponent < best
        out[closer] = parcel.id
        best[closer] = exponent[closer]
    return out


def normalize_channels(batch, stats):
    """
    Standardize real frames channel-wise, padded frames stay at zero

    Parameters
    ----------
    batch: PaddedBatch
    stats: ChannelStats

    Raises
    ------
    DegenerateStats
        if any standard deviation is not strictly positive
    """
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.asarray(stats.std, dtype=np.float64)
    if np.any(std <= 0) or not np.all(np.isfinite(std)):
        raise DegenerateStats(f"standard deviations should be strictly positive, got {std}")
    shape = (1, 1, -1, 1, 1)
    images = (batch.images - mean.reshape(shape)) / std.reshape(shape)
    images *= batch.pad_mask[:, :, None, None, None]
    return replace(batch, images=images.astype(np.float32))


def flip_sample(sample, axis):
    """mirror a sample along ``axis`` (0 for vertical, 1 for horizontal)"""
    flip = lambda a: np.flip(a, axis=a.ndim - 2 + axis)
    instances = flip(sample.instances)
    parcels = [
        ParcelRecord.from_mask(p.id, instances == p.id, p.crop_class, p.is_void)
        for p in sample.parcels
    ]
    return replace(
        sample,
        images=flip(sample.images),
        semantic=flip(sample.semantic),
        instances=instances,
        parcels=parcels,
    )


def truncate_sample(sample, max_dates):
    """keep only the first ``max_dates`` acquisitions of a sequence"""
    if max_dates is None or max_dates >= sample.T:
        return sample
    if max_dates < 1:
        raise ValueError("max_dates should be at least 1")
    return replace(sample, images=sample.images[:max_dates], dates=sample.dates[:max_dates])
