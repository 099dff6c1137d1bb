"""
Generate samples of synthetic satellite image time series.
Mainly for tests, benchmarks and desk-scale experiments
"""
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import cKDTree

from ..core import BACKGROUND, ParcelRecord, SITSSample, void_label
from ..exceptions import EmptyLayout
from ..utils import _check_positive, _check_probability, _check_random_state

MAX_LAYOUT_TRIES = 8
CURVE_BOUNDS = (0.0, 1.5)


@dataclass(frozen=True)
class GenConfig:
    """
    Parameters of the synthetic generator

    Parameters
    ----------
    seed: int, default=0
        seeds both the class profiles and every sample
    H, W: int, default=64
        spatial shape of a patch, at least 16
    T_range: tuple of int, default=(10, 14)
        bounds on the number of acquisitions per sequence, both included
    n_classes: int, default=5
        number of crop classes, at least 2
    parcel_density: float, default=2.0
        expected number of parcels per 1000 pixels
    cloud_prob: float, default=0.1
        probability for an acquisition to be clouded
    noise_std: float, default=0.02
        standard deviation of the additive Gaussian noise
    channels: int, default=10
        number of spectral bands
    border_margin: int, default=8
        width of the band around the patch on which parcels are also drawn,
        so that some parcels get cut by the patch border
    background_fraction: float, default=0.1
        share of the partition cells left as background land
    void_prob: float, default=0.0
        probability for a parcel to be out of the nomenclature
    mean_gap: float, default=5.0
        expected number of days between two acquisitions of the longest sequences
    season_length: int, default=None
        number of days covered by a sequence, ``mean_gap * T_range[1]`` if None
    """

    seed: int = 0
    H: int = 64
    W: int = 64
    T_range: tuple = (10, 14)
    n_classes: int = 5
    parcel_density: float = 2.0
    cloud_prob: float = 0.1
    noise_std: float = 0.02
    channels: int = 10
    border_margin: int = 8
    background_fraction: float = 0.1
    void_prob: float = 0.0
    mean_gap: float = 5.0
    season_length: int = None

    def __post_init__(self):
        object.__setattr__(self, "T_range", tuple(int(t) for t in self.T_range))
        if self.H < 16 or self.W < 16:
            raise ValueError(f"patches should be at least 16x16, got {self.H}x{self.W}")
        if self.n_classes < 2:
            raise ValueError("n_classes should be at least 2")
        if len(self.T_range) != 2 or self.T_range[0] < 4 or self.T_range[0] > self.T_range[1]:
            raise ValueError(f"T_range should be (min, max) with 4 <= min <= max, got {self.T_range}")
        if not 0 <= self.seed < 2 ** 32:
            raise ValueError("seed should be in [0, 2**32)")
        _check_positive("parcel_density", self.parcel_density)
        _check_positive("channels", self.channels)
        _check_positive("mean_gap", self.mean_gap)
        _check_positive("noise_std", self.noise_std, strict=False)
        _check_positive("border_margin", self.border_margin, strict=False)
        _check_probability("cloud_prob", self.cloud_prob)
        _check_probability("background_fraction", self.background_fraction)
        _check_probability("void_prob", self.void_prob)

    @property
    def season(self):
        """number of days covered by the acquisitions"""
        if self.season_length is not None:
            return int(self.season_length)
        return int(round(self.mean_gap * self.T_range[1]))


@dataclass(frozen=True, eq=False)
class PhenologyProfile:
    """
    Double-logistic temporal profile of a class

    .. math:: v(t) = b + a \\cdot g_c \\cdot (\\sigma((t - t_o) / r) + \\sigma((t_s - t) / r) - 1)

    where :math:`\\sigma` is the logistic function. Since onset comes before senescence,
    values lie between the baseline and ``baseline + amplitude * max(gain)``.

    Parameters
    ----------
    class_id: int
    onset, senescence: float
        day offsets of green-up and senescence
    amplitude, baseline: float
    gain: np.ndarray of shape (C,)
        per-channel multiplier of the amplitude
    slope: float
        logistic scale, in days
    """

    class_id: int
    onset: float
    senescence: float
    amplitude: float
    baseline: float
    gain: np.ndarray = field(default_factory=lambda: np.ones(1))
    slope: float = 5.0

    @property
    def peak(self):
        """day offset of the maximum, halfway between onset and senescence"""
        return (self.onset + self.senescence) / 2

    def evaluate(self, days):
        """profile values at ``days``, as an array of shape (len(days), C)"""
        t = np.asarray(days, dtype=np.float64)[:, None]
        rise = 1.0 / (1.0 + np.exp(-(t - self.onset) / self.slope))
        fall = 1.0 / (1.0 + np.exp(-(self.senescence - t) / self.slope))
        curve = self.baseline + self.amplitude * np.asarray(self.gain)[None, :] * (rise + fall - 1.0)
        return np.clip(curve, *CURVE_BOUNDS)


def make_profiles(config):
    """
    Draw one phenology profile per class, plus a flat one for background

    Peaks are spread evenly over the season and jittered by at most a quarter
    of the spacing, so two classes always peak at least half a spacing apart.

    Returns
    -------
    tuple of PhenologyProfile
        indexed by class id, background first
    """
    rng = np.random.RandomState(config.seed)
    season, n = config.season, config.n_classes
    spacing = season / n
    background = PhenologyProfile(
        class_id=BACKGROUND,
        onset=0.0,
        senescence=float(season),
        amplitude=0.0,
        baseline=rng.uniform(0.05, 0.15),
        gain=np.ones(config.channels),
    )
    profiles = [background]
    for k in range(1, n + 1):
        peak = (k - 0.5) * spacing + rng.uniform(-0.25, 0.25) * spacing
        half_width = rng.uniform(0.15, 0.3) * season
        profiles.append(
            PhenologyProfile(
                class_id=k,
                onset=peak - half_width,
                senescence=peak + half_width,
                amplitude=rng.uniform(0.4, 0.8),
                baseline=rng.uniform(0.05, 0.15),
                gain=rng.uniform(0.3, 1.0, size=config.channels),
                slope=half_width / 4,
            )
        )
    return tuple(profiles)


def _draw_layout(config, rng, anchor_class):
    H, W, m = config.H, config.W, config.border_margin
    canvas = (H + 2 * m, W + 2 * m)
    n_sites = rng.poisson(config.parcel_density * canvas[0] * canvas[1] / 1000)
    sites = rng.uniform(0, canvas, size=(n_sites, 2))
    is_background = rng.uniform(size=n_sites) < config.background_fraction
    classes = rng.randint(1, config.n_classes + 1, size=n_sites)
    is_void = rng.uniform(size=n_sites) < config.void_prob
    if n_sites == 0:
        return None

    ii, jj = np.mgrid[0 : canvas[0], 0 : canvas[1]]
    _, owner = cKDTree(sites).query(np.column_stack([ii.ravel(), jj.ravel()]))
    labels = owner.reshape(canvas) + 1

    corridor = np.zeros(canvas, dtype=bool)
    corridor[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    corridor[:-1, :] |= labels[:-1, :] != labels[1:, :]
    corridor[:-1, :-1] |= labels[:-1, :-1] != labels[1:, 1:]
    corridor[:-1, 1:] |= labels[:-1, 1:] != labels[1:, :-1]
    labels[corridor] = 0
    labels[np.isin(labels, np.flatnonzero(is_background) + 1)] = 0

    patch = labels[m : m + H, m : m + W]
    full_area = np.bincount(labels.ravel(), minlength=n_sites + 1)
    patch_area = np.bincount(patch.ravel(), minlength=n_sites + 1)

    instances = np.zeros((H, W), dtype=np.int64)
    parcels = list()
    for site in np.flatnonzero(patch_area[1:]) + 1:
        mask = patch == site
        parcel_id = len(parcels) + 1
        cut = 2 * patch_area[site] < full_area[site]
        parcels.append(
            ParcelRecord.from_mask(parcel_id, mask, classes[site - 1], is_void[site - 1] or cut)
        )
        instances[mask] = parcel_id

    valid = [p for p in parcels if not p.is_void]
    if not valid:
        return None
    if anchor_class is not None:
        largest = max(valid, key=lambda p: (p.area, -p.id))
        parcels[largest.id - 1] = replace(largest, crop_class=int(anchor_class))
    return instances, parcels


def generate_layout(config, rng=None, anchor_class=None):
    """
    Partition a patch into parcels separated by background corridors

    Sites are drawn from a Poisson process over the patch and its margin,
    each pixel goes to its closest site, and pixels on cell borders
    become 1 pixel wide background corridors, so parcels never touch,
    not even diagonally.
    Parcels with more than half of their surface outside of the patch are void.

    Parameters
    ----------
    config: GenConfig
    rng: int or RandomState, default=None
    anchor_class: int, default=None
        if set, class given to the largest non-void parcel

    Returns
    -------
    tuple (np.ndarray of shape (H, W), list of ParcelRecord)
        instance map and parcel records, ids contiguous from 1

    Raises
    ------
    EmptyLayout
        if no valid parcel could be placed after 8 tries
    """
    rng = _check_random_state(rng)
    for _ in range(MAX_LAYOUT_TRIES):
        layout = _draw_layout(config, rng, anchor_class)
        if layout is not None:
            return layout
    raise EmptyLayout(
        f"no parcel placed after {MAX_LAYOUT_TRIES} tries, "
        f"parcel_density={config.parcel_density} is too low for {config.H}x{config.W} patches"
    )


def draw_dates(T, config, rng=None):
    """irregular acquisition dates, spread over the season"""
    rng = _check_random_state(rng)
    gap = config.season / T
    gaps = 1 + rng.poisson(max(gap - 1, 0), size=T - 1)
    start = rng.randint(0, max(int(gap), 1))
    return start + np.concatenate([[0], np.cumsum(gaps)]).astype(np.int64)


def _add_cloud(frame, rng):
    C, H, W = frame.shape
    ci, cj = rng.uniform(0, H), rng.uniform(0, W)
    ri, rj = rng.uniform(0.25, 0.6) * H, rng.uniform(0.25, 0.6) * W
    brightness = rng.uniform(0.6, 0.9)
    ii, jj = np.ogrid[0:H, 0:W]
    weight = np.exp(-((((ii - ci) / ri) ** 2 + ((jj - cj) / rj) ** 2) ** 2))
    cloudy = brightness + 0.2 * (frame - frame.mean(axis=(1, 2), keepdims=True))
    return (1 - weight) * frame + weight * cloudy


def render_sequence(layout, profiles, config, rng=None, sample_id="", fold=1):
    """
    Render the image sequence of a layout

    Each pixel follows the profile of its parcel class (void parcels included),
    background pixels the flat background profile. Gaussian noise is added,
    then clouded acquisitions get a bright, low contrast elliptical region.

    Parameters
    ----------
    layout: tuple (np.ndarray, list of ParcelRecord)
        as returned by ``generate_layout``
    profiles: tuple of PhenologyProfile
        as returned by ``make_profiles``
    config: GenConfig
    rng: int or RandomState, default=None
    sample_id: str, default=""
    fold: int, default=1

    Returns
    -------
    SITSSample
    """
    rng = _check_random_state(rng)
    instances, parcels = layout
    T = rng.randint(config.T_range[0], config.T_range[1] + 1)
    dates = draw_dates(T, config, rng)

    class_map = np.zeros(instances.shape, dtype=np.int64)
    semantic = np.zeros(instances.shape, dtype=np.int64)
    for parcel in parcels:
        class_map[parcel.mask] = parcel.crop_class
        semantic[parcel.mask] = void_label(config.n_classes) if parcel.is_void else parcel.crop_class

    curves = np.stack([profile.evaluate(dates) for profile in profiles])  # (K + 1, T, C)
    images = np.moveaxis(curves[class_map], (0, 1), (2, 3))
    if config.noise_std > 0:
        images = images + rng.normal(0, config.noise_std, size=images.shape)
    clouded = rng.uniform(size=T) < config.cloud_prob
    for t in np.flatnonzero(clouded):
        images[t] = _add_cloud(images[t], rng)

    return SITSSample(
        images=images.astype(np.float32),
        dates=dates,
        semantic=semantic,
        instances=instances,
        parcels=parcels,
        sample_id=sample_id,
        fold=fold,
    )


def _make_sample(config, profiles, idx):
    rng = np.random.RandomState([config.seed, idx])
    anchor = (idx // 5) % config.n_classes + 1
    layout = generate_layout(config, rng, anchor_class=anchor)
    return render_sequence(
        layout, profiles, config, rng, sample_id=f"{idx:05d}", fold=idx % 5 + 1
    )


def generate_dataset(config, n_samples, n_jobs=None):
    """
    Generate a synthetic dataset with PASTIS-like structure

    Every sample is drawn from its own generator, seeded with
    ``(config.seed, sample index)``, so datasets are identical whatever ``n_jobs``.
    Folds are assigned round-robin. The largest parcel of sample ``s`` is given
    class ``(s // 5) % n_classes + 1``, so every fold sees every class once
    it holds ``n_classes`` samples.

    Parameters
    ----------
    config: GenConfig
    n_samples: int
    n_jobs: int, default=None
        number of joblib workers

    Returns
    -------
    list of SITSSample
        with ``sample.fold`` in 1..5

    Example
    -------
    >>> from sksits.datasets import GenConfig, generate_dataset
    >>> samples = generate_dataset(GenConfig(seed=3, H=32, W=32), 5)
    >>> sorted(s.fold for s in samples)
    [1, 2, 3, 4, 5]
    """
    profiles = make_profiles(config)
    return Parallel(n_jobs=n_jobs)(
        delayed(_make_sample)(config, profiles, idx) for idx in range(n_samples)
    )
