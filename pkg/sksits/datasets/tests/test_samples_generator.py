import numpy as np
import pytest

from ...core import BACKGROUND, void_label
from ...exceptions import EmptyLayout
from .._samples_generator import (
    GenConfig,
    PhenologyProfile,
    generate_dataset,
    generate_layout,
    make_profiles,
    render_sequence,
)


@pytest.fixture
def config():
    return GenConfig(seed=7, H=32, W=32, T_range=(4, 6), n_classes=3, channels=2)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(H=8),
        dict(n_classes=1),
        dict(T_range=(3, 5)),
        dict(T_range=(6, 5)),
        dict(cloud_prob=1.5),
        dict(parcel_density=0),
    ],
)
def test_config_wrong_value(kwargs):
    with pytest.raises(ValueError):
        GenConfig(**kwargs)


def test_layout_deterministic(config):
    inst1, parcels1 = generate_layout(config, np.random.RandomState(3))
    inst2, parcels2 = generate_layout(config, np.random.RandomState(3))
    np.testing.assert_array_equal(inst1, inst2)
    assert [(p.id, p.crop_class, p.center) for p in parcels1] == [
        (p.id, p.crop_class, p.center) for p in parcels2
    ]


def test_layout_consistency(config):
    instances, parcels = generate_layout(config, 0)
    assert [p.id for p in parcels] == list(range(1, len(parcels) + 1))
    for p in parcels:
        np.testing.assert_array_equal(p.mask, instances == p.id)
        assert p.mask[p.center]
        assert 1 <= p.crop_class <= config.n_classes


def test_layout_corridors(config):
    """two different parcels never touch, background corridors separate them"""
    cfg = GenConfig(seed=1, H=32, W=32, background_fraction=0.0, border_margin=0)
    instances, _ = generate_layout(cfg, 5)
    right = instances[:, :-1], instances[:, 1:]
    down = instances[:-1, :], instances[1:, :]
    for a, b in (right, down):
        touching = (a > 0) & (b > 0)
        assert np.all(a[touching] == b[touching])


@pytest.mark.parametrize("seed", range(10))
def test_layout_no_diagonal_contact(seed):
    cfg = GenConfig(seed=seed, H=32, W=32, parcel_density=20.0, background_fraction=0.0)
    instances, _ = generate_layout(cfg, seed)
    diagonal = instances[:-1, :-1], instances[1:, 1:]
    anti_diagonal = instances[:-1, 1:], instances[1:, :-1]
    for a, b in (diagonal, anti_diagonal):
        touching = (a > 0) & (b > 0)
        assert np.all(a[touching] == b[touching])


def test_layout_single_parcel():
    cfg = GenConfig(H=32, W=32, parcel_density=1.0, border_margin=0, background_fraction=0.0)
    for seed in range(100):
        instances, parcels = generate_layout(cfg, seed)
        if len(parcels) == 1:
            break
    else:
        pytest.fail("no single-parcel layout found")
    np.testing.assert_array_equal(instances == 1, parcels[0].mask)
    assert set(np.unique(instances)) <= {0, 1}


def test_layout_parcel_count():
    """the number of parcels follows the Poisson law of the sites, given at least one"""
    cfg = GenConfig(H=64, W=64, parcel_density=0.8, border_margin=0, background_fraction=0.0)
    lam = cfg.parcel_density * cfg.H * cfg.W / 1000
    mean = lam / (1 - np.exp(-lam))
    var = mean * (1 + lam - mean)
    counts = np.array([len(generate_layout(cfg, seed)[1]) for seed in range(200)])
    assert abs(counts.mean() - mean) < 3 * np.sqrt(var / len(counts))


def test_layout_border_void():
    cfg = GenConfig(seed=2, H=32, W=32, border_margin=16)
    voids = [p.is_void for seed in range(10) for p in generate_layout(cfg, seed)[1]]
    assert any(voids) and not all(voids)


def test_empty_layout():
    cfg = GenConfig(H=16, W=16, parcel_density=1e-6)
    with pytest.raises(EmptyLayout):
        generate_layout(cfg, 0)


def test_profiles_bounded(config):
    profiles = make_profiles(config)
    assert len(profiles) == config.n_classes + 1
    days = np.arange(-50, config.season + 50)
    for profile in profiles:
        values = profile.evaluate(days)
        assert values.shape == (len(days), config.channels)
        assert values.min() >= 0 and values.max() <= 1.5
    peaks = sorted(p.peak for p in profiles[1:])
    assert np.min(np.diff(peaks)) >= 0.5 * config.season / config.n_classes


def test_profiles_peak_separation():
    """curves identical except for their peak date peak at different acquisitions"""
    common = dict(amplitude=0.6, baseline=0.1, gain=np.ones(1), slope=5.0)
    early = PhenologyProfile(1, onset=20, senescence=60, **common)
    late = PhenologyProfile(2, onset=60, senescence=100, **common)
    assert (early.peak, late.peak) == (40, 80)
    days = np.arange(0, 120, 5)
    assert days[early.evaluate(days)[:, 0].argmax()] == 40
    assert days[late.evaluate(days)[:, 0].argmax()] == 80


def test_render_noiseless(config):
    cfg = GenConfig(seed=4, H=32, W=32, noise_std=0.0, cloud_prob=0.0, channels=3)
    layout = generate_layout(cfg, 0)
    sample = render_sequence(layout, make_profiles(cfg), cfg, 0)
    assert cfg.T_range[0] <= sample.T <= cfg.T_range[1]
    for parcel in sample.parcels:
        pixels = sample.images[:, :, parcel.mask]
        np.testing.assert_array_equal(pixels, pixels[:, :, :1].repeat(pixels.shape[2], axis=2))


def test_render_dates():
    cfg = GenConfig(seed=0, T_range=(20, 20), mean_gap=5.0)
    sample = render_sequence(generate_layout(cfg, 0), make_profiles(cfg), cfg, 0)
    gaps = np.diff(sample.dates)
    assert np.all(gaps >= 1)
    assert 3 <= np.median(gaps) <= 7


def test_render_clouds(config):
    cfg = GenConfig(seed=4, H=32, W=32, noise_std=0.0, cloud_prob=1.0, channels=3)
    clear = GenConfig(seed=4, H=32, W=32, noise_std=0.0, cloud_prob=0.0, channels=3)
    layout = generate_layout(cfg, 0)
    profiles = make_profiles(cfg)
    cloudy = render_sequence(layout, profiles, cfg, 1)
    ref = render_sequence(layout, profiles, clear, 1)
    np.testing.assert_array_equal(cloudy.dates, ref.dates)
    assert all(not np.allclose(cloudy.images[t], ref.images[t]) for t in range(cloudy.T))
    assert cloudy.images.mean() > ref.images.mean()


def test_separability():
    """without noise or clouds, the closest class profile gives the label of every pixel"""
    cfg = GenConfig(seed=11, H=32, W=32, noise_std=0.0, cloud_prob=0.0, n_classes=4)
    profiles = make_profiles(cfg)
    sample = generate_dataset(cfg, 1)[0]
    curves = np.stack([p.evaluate(sample.dates) for p in profiles])  # K+1, T, C
    pixels = sample.images.reshape(sample.T, sample.n_channels, -1).transpose(2, 0, 1)
    dist = ((pixels[:, None] - curves[None]) ** 2).sum(axis=(2, 3))
    pred = dist.argmin(axis=1).reshape(sample.shape)
    keep = sample.semantic != void_label(cfg.n_classes)
    np.testing.assert_array_equal(pred[keep], sample.semantic[keep])


def test_generate_dataset_folds(config):
    samples = generate_dataset(config, 5)
    assert sorted(s.fold for s in samples) == [1, 2, 3, 4, 5]
    assert len({s.sample_id for s in samples}) == 5


def test_generate_dataset_deterministic(config):
    D1 = generate_dataset(config, 16)
    D2 = generate_dataset(config, 16, n_jobs=2)
    for s1, s2 in zip(D1, D2):
        assert s1.images.tobytes() == s2.images.tobytes()
        np.testing.assert_array_equal(s1.dates, s2.dates)
        np.testing.assert_array_equal(s1.semantic, s2.semantic)
    hist1 = np.bincount(np.concatenate([s.semantic.ravel() for s in D1]))
    hist2 = np.bincount(np.concatenate([s.semantic.ravel() for s in D2]))
    np.testing.assert_array_equal(hist1, hist2)


def test_generate_dataset_classes_in_folds():
    cfg = GenConfig(seed=0, H=16, W=16, T_range=(4, 4), n_classes=5, channels=1)
    samples = generate_dataset(cfg, 100)
    for fold in range(1, 6):
        classes = {
            p.crop_class for s in samples if s.fold == fold for p in s.valid_parcels()
        }
        assert classes == set(range(1, 6))


def test_void_semantic():
    cfg = GenConfig(seed=0, H=32, W=32, void_prob=1.0, border_margin=0)
    with pytest.raises(EmptyLayout):
        generate_layout(cfg, 0)
    cfg = GenConfig(seed=0, H=32, W=32, void_prob=0.5, n_classes=3)
    sample = generate_dataset(cfg, 1)[0]
    for parcel in sample.parcels:
        labels = np.unique(sample.semantic[parcel.mask])
        assert labels.tolist() == ([4] if parcel.is_void else [parcel.crop_class])
    assert np.all(sample.semantic[sample.instances == 0] == BACKGROUND)
