"""
Ingestion of PASTIS-layout datasets, real or synthetic

Two on-disk layouts are understood.

The native layout, written by :func:`write_dataset`::

    <root>/metadata.json
    <root>/DATA/<id>.npy          T x C x H x W, little-endian float32
    <root>/ANNOT/<id>_sem.npy     H x W, little-endian int64
    <root>/ANNOT/<id>_inst.npy    H x W, little-endian int64

All arrays are NPY version 1.0 files. ``metadata.json`` holds::

    {
      "format": "sksits-1",
      "n_classes": 18,
      "nomenclature": ["Background", ..., "Void label"],
      "patches": [
        {"id": "00000", "fold": 1, "dates": [3, 8, ...], "shape": [T, C, H, W],
         "parcels": [{"id": 1, "crop_class": 4, "is_void": false}, ...]},
        ...
      ]
    }

The layout of the public PASTIS release (``metadata.geojson``, ``DATA_S2``,
``ANNOTATIONS``, ``INSTANCE_ANNOTATIONS``), dates being converted to day offsets
from 2018-09-01.
"""
import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..core import (
    BACKGROUND,
    N_CROP_CLASSES,
    ChannelStats,
    ParcelRecord,
    SITSSample,
    nomenclature,
    void_label,
)
from ..exceptions import DatasetIndexError, EmptyTrainingSet, FormatError
from ..utils import _check_fold

FORMAT = "sksits-1"
PASTIS_REFERENCE_DATE = "2018-09-01"
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class FoldScheme:
    """
    Assignment of the 5 folds to training, validation and test

    Examples
    --------
    >>> FoldScheme.official(1)
    FoldScheme(train=(1, 2, 3), val=(4,), test=(5,))
    >>> FoldScheme.official(3)
    FoldScheme(train=(3, 4, 5), val=(1,), test=(2,))
    """

    train: tuple
    val: tuple
    test: tuple

    @classmethod
    def official(cls, fold):
        """cyclic 5-fold cross validation scheme, 3 train folds then 1 val then 1 test"""
        fold = _check_fold(fold)
        cycle = [(fold - 1 + k) % 5 + 1 for k in range(5)]
        return cls(train=tuple(cycle[:3]), val=(cycle[3],), test=(cycle[4],))


@dataclass(frozen=True)
class PatchEntry:
    """one patch of a dataset index, arrays are not loaded"""

    sample_id: str
    fold: int
    data_path: str
    semantic_path: str
    instance_path: str
    dates: tuple
    shape: tuple
    parcels: tuple = ()
    layout: str = "native"

    @property
    def T(self):
        return self.shape[0]

    @property
    def n_parcels(self):
        return len(self.parcels)


def _read_header(path):
    try:
        with open(path, "rb") as f:
            version = np.lib.format.read_magic(f)
            if version != (1, 0):
                raise FormatError(f"expected a NPY 1.0 file, got version {version}: {path}")
            return np.lib.format.read_array_header_1_0(f)
    except OSError as e:
        raise DatasetIndexError("cannot read patch file", path) from e
    except ValueError as e:
        raise FormatError(f"invalid NPY header ({e}): {path}") from e


def _check_file(path, shape, kinds):
    if not os.path.isfile(path):
        raise DatasetIndexError("missing patch file", path)
    found_shape, fortran_order, dtype = _read_header(path)
    if tuple(found_shape) != tuple(shape):
        raise FormatError(f"shape {tuple(found_shape)} does not match index {tuple(shape)}: {path}")
    if fortran_order:
        raise FormatError(f"fortran ordered arrays are not supported: {path}")
    if dtype.kind not in kinds:
        raise FormatError(f"unexpected dtype {dtype}: {path}")


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetIndexError("corrupt metadata", path) from e


class DatasetIndex:
    """
    Validated index of a dataset, patch arrays are loaded lazily

    Parameters
    ----------
    root: str
    entries: list of PatchEntry
    n_classes: int, default=18
    class_names: tuple of str, default=None
        nomenclature, background first and void last
    """

    def __init__(self, root, entries, n_classes=N_CROP_CLASSES, class_names=None):
        self.root = str(root)
        self.entries = tuple(sorted(entries, key=lambda e: e.sample_id))
        self.n_classes = int(n_classes)
        self.nomenclature = tuple(class_names or nomenclature(n_classes))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __repr__(self):
        return f"DatasetIndex(root={self.root!r}, n_patches={len(self)})"

    @property
    def void_label(self):
        return void_label(self.n_classes)

    def load_sample(self, entry):
        """read the arrays of ``entry`` into a SITSSample"""
        images = np.load(entry.data_path, mmap_mode="r")
        semantic = np.load(entry.semantic_path, mmap_mode="r")
        instances = np.array(np.load(entry.instance_path, mmap_mode="r"), dtype=np.int64)
        if entry.layout == "pastis":
            semantic, instances, parcels = _clean_pastis_annotations(
                np.asarray(semantic[0]), instances, self.void_label
            )
        else:
            semantic = np.asarray(semantic)
            parcels = [
                ParcelRecord.from_mask(
                    p["id"], instances == p["id"], p["crop_class"], p.get("is_void", False)
                )
                for p in entry.parcels
            ]
        return SITSSample(
            images=np.asarray(images, dtype=np.float32),
            dates=np.asarray(entry.dates),
            semantic=semantic,
            instances=instances,
            parcels=parcels,
            sample_id=entry.sample_id,
            fold=entry.fold,
        )

    def load_samples(self, entries=None, n_jobs=None):
        """load several patches, in index order if ``entries`` is None"""
        entries = self.entries if entries is None else entries
        return Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(self.load_sample)(entry) for entry in entries
        )


def _native_entries(root, metadata_path):
    metadata = _load_json(metadata_path)
    try:
        n_classes = int(metadata.get("n_classes", N_CROP_CLASSES))
        class_names = metadata.get("nomenclature")
        patches = metadata["patches"]
        entries = list()
        for patch in patches:
            sample_id = str(patch["id"])
            shape = tuple(int(s) for s in patch["shape"])
            entries.append(
                PatchEntry(
                    sample_id=sample_id,
                    fold=int(patch["fold"]),
                    data_path=os.path.join(root, "DATA", f"{sample_id}.npy"),
                    semantic_path=os.path.join(root, "ANNOT", f"{sample_id}_sem.npy"),
                    instance_path=os.path.join(root, "ANNOT", f"{sample_id}_inst.npy"),
                    dates=tuple(int(d) for d in patch["dates"]),
                    shape=shape,
                    parcels=tuple(patch.get("parcels", ())),
                )
            )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetIndexError(f"corrupt metadata ({e!r})", metadata_path) from e

    for entry in entries:
        _check_file(entry.data_path, entry.shape, "f")
        _check_file(entry.semantic_path, entry.shape[2:], "iu")
        _check_file(entry.instance_path, entry.shape[2:], "iu")
    return entries, n_classes, class_names


def _pastis_entries(root, metadata_path):
    metadata = _load_json(metadata_path)
    reference = pd.Timestamp(PASTIS_REFERENCE_DATE)
    entries = list()
    try:
        for feature in metadata["features"]:
            props = feature["properties"]
            sample_id = str(props["ID_PATCH"])
            raw_dates = props["dates-S2"]
            if isinstance(raw_dates, str):
                raw_dates = json.loads(raw_dates)
            days = pd.to_datetime([str(raw_dates[k]) for k in sorted(raw_dates, key=int)], format="%Y%m%d")
            data_path = os.path.join(root, "DATA_S2", f"S2_{sample_id}.npy")
            if not os.path.isfile(data_path):
                raise DatasetIndexError("missing patch file", data_path)
            shape, _, _ = _read_header(data_path)
            entries.append(
                PatchEntry(
                    sample_id=sample_id,
                    fold=int(props["Fold"]),
                    data_path=data_path,
                    semantic_path=os.path.join(root, "ANNOTATIONS", f"TARGET_{sample_id}.npy"),
                    instance_path=os.path.join(
                        root, "INSTANCE_ANNOTATIONS", f"INSTANCES_{sample_id}.npy"
                    ),
                    dates=tuple(int(d) for d in (days - reference).days),
                    shape=tuple(shape),
                    layout="pastis",
                )
            )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetIndexError(f"corrupt metadata ({e!r})", metadata_path) from e

    for entry in entries:
        if len(entry.dates) != entry.T:
            raise FormatError(f"{entry.T} acquisitions but {len(entry.dates)} dates: {entry.data_path}")
        _check_file(entry.data_path, entry.shape, "fiu")
        _check_file(entry.instance_path, entry.shape[2:], "fiu")
        if not os.path.isfile(entry.semantic_path):
            raise DatasetIndexError("missing patch file", entry.semantic_path)
    return entries, N_CROP_CLASSES, None


def _clean_pastis_annotations(semantic, instances, void):
    """
    make released annotations consistent: instance pixels on background are
    dropped, and each instance keeps only the pixels of its majority class
    """
    semantic = np.asarray(semantic, dtype=np.int64)
    instances = np.where(semantic == BACKGROUND, 0, instances)
    parcels = list()
    for parcel_id in np.unique(instances[instances > 0]):
        mask = instances == parcel_id
        labels, counts = np.unique(semantic[mask], return_counts=True)
        label = labels[np.argmax(counts)]
        instances[mask & (semantic != label)] = 0
        parcels.append(
            ParcelRecord.from_mask(parcel_id, instances == parcel_id, label, label == void)
        )
    return semantic, instances, parcels


def load_index(root):
    """
    Index a dataset root, validating every patch file header

    Parameters
    ----------
    root: str
        directory holding either ``metadata.json`` (native layout)
        or ``metadata.geojson`` (PASTIS release)

    Returns
    -------
    DatasetIndex
        entries sorted by sample id

    Raises
    ------
    DatasetIndexError
        if metadata is missing or corrupt, or if a patch file is missing,
        the error message names the offending path
    FormatError
        if a patch header does not match the index
    """
    root = os.fspath(root)
    native, pastis = (os.path.join(root, f) for f in ("metadata.json", "metadata.geojson"))
    if os.path.isfile(native):
        entries, n_classes, names = _native_entries(root, native)
    elif os.path.isfile(pastis):
        entries, n_classes, names = _pastis_entries(root, pastis)
    else:
        raise DatasetIndexError("no metadata file found", native)

    for entry in entries:
        if not 1 <= entry.fold <= 5:
            raise DatasetIndexError(f"fold {entry.fold} outside of 1..5 for patch {entry.sample_id}", root)
    ids = [e.sample_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DatasetIndexError("duplicate patch ids", root)
    return DatasetIndex(root, entries, n_classes=n_classes, class_names=names)


def fold_split(index, fold):
    """
    Split the entries of an index following the official cross validation scheme

    Parameters
    ----------
    index: DatasetIndex or list
        anything iterable whose items have a ``fold`` attribute,
        entries or loaded samples
    fold: int
        in 1..5

    Returns
    -------
    tuple (train, val, test) of lists

    Raises
    ------
    InvalidFold
    """
    scheme = FoldScheme.official(fold)
    items = list(index)
    return tuple(
        [item for item in items if item.fold in folds]
        for folds in (scheme.train, scheme.val, scheme.test)
    )


def compute_norm_stats(samples, fold_scheme=None):
    """
    Channel-wise mean and standard deviation over real acquisitions

    Computed in two passes, in double precision.

    Parameters
    ----------
    samples: list of SITSSample
    fold_scheme: FoldScheme, default=None
        if given, only samples from its training folds are used

    Returns
    -------
    ChannelStats
        standard deviations floored at 1e-6

    Raises
    ------
    EmptyTrainingSet
        if no sample is left to compute statistics from
    """
    samples = list(samples)
    if fold_scheme is not None:
        samples = [s for s in samples if s.fold in fold_scheme.train]
    if not samples:
        raise EmptyTrainingSet("no training sample to compute normalisation statistics from")

    total = sum(s.images.sum(axis=(0, 2, 3), dtype=np.float64) for s in samples)
    count = sum(s.T * s.shape[0] * s.shape[1] for s in samples)
    mean = total / count
    sq_dev = sum(
        ((s.images.astype(np.float64) - mean[None, :, None, None]) ** 2).sum(axis=(0, 2, 3))
        for s in samples
    )
    std = np.maximum(np.sqrt(sq_dev / count), STD_FLOOR)
    return ChannelStats(mean=mean, std=std)


def _write_npy(path, array, dtype):
    array = np.ascontiguousarray(array, dtype=np.dtype(dtype).newbyteorder("<"))
    with open(path, "wb") as f:
        np.lib.format.write_array(f, array, version=(1, 0), allow_pickle=False)


def write_dataset(samples, root, n_classes=N_CROP_CLASSES, class_names=None):
    """
    Write samples in the native on-disk layout, readable by ``load_index``

    Parameters
    ----------
    samples: list of SITSSample
    root: str
        created if needed
    n_classes: int, default=18
    class_names: tuple of str, default=None

    Returns
    -------
    str
        path to the metadata file
    """
    root = os.fspath(root)
    os.makedirs(os.path.join(root, "DATA"), exist_ok=True)
    os.makedirs(os.path.join(root, "ANNOT"), exist_ok=True)
    patches = list()
    for sample in samples:
        sid = sample.sample_id
        _write_npy(os.path.join(root, "DATA", f"{sid}.npy"), sample.images, np.float32)
        _write_npy(os.path.join(root, "ANNOT", f"{sid}_sem.npy"), sample.semantic, np.int64)
        _write_npy(os.path.join(root, "ANNOT", f"{sid}_inst.npy"), sample.instances, np.int64)
        patches.append(
            dict(
                id=sid,
                fold=sample.fold,
                dates=sample.dates.tolist(),
                shape=list(sample.images.shape),
                parcels=[
                    dict(id=p.id, crop_class=p.crop_class, is_void=p.is_void)
                    for p in sample.parcels
                ],
            )
        )

    metadata = dict(
        format=FORMAT,
        n_classes=n_classes,
        nomenclature=list(class_names or nomenclature(n_classes)),
        patches=patches,
    )
    path = os.path.join(root, "metadata.json")
    with open(path, "w") as f:
        json.dump(metadata, f, indent=1)
    return path
