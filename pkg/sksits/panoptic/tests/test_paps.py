import json
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from ...core import ParcelRecord, SITSSample
from ...datasets import GenConfig, generate_dataset
from ...encoders import UTAEConfig, count_parameters
from ...exceptions import SizeError
from ...utils import gradient_check
from ..paps import (
    PanopticUTAE,
    PaPs,
    PaPsConfig,
    ShapeRefiner,
    assemble_shape,
    assign_centers,
    build_heatmap_target,
    center_loss,
    detect_centers,
    dump_proposals,
    extract_multiscale_features,
    rle_decode,
    rle_encode,
    size_loss,
)


def box_parcel(id, top, left, h, w, shape=(32, 32), crop_class=1, is_void=False):
    mask = np.zeros(shape, dtype=bool)
    mask[top : top + h, left : left + w] = True
    return ParcelRecord.from_mask(id, mask, crop_class, is_void=is_void)


def make_sample(parcels, shape=(16, 16), T=2):
    instances = np.zeros(shape, dtype=int)
    semantic = np.zeros(shape, dtype=int)
    for p in parcels:
        instances[p.mask] = p.id
        semantic[p.mask] = 19 if p.is_void else p.crop_class
    return SITSSample(
        images=np.zeros((T, 1) + shape, dtype=np.float32),
        dates=np.arange(T),
        semantic=semantic,
        instances=instances,
        parcels=parcels,
    )


def random_pyramid(widths=(32, 32, 64, 128), size=16, B=1, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return [
        torch.randn(B, w, size >> level, size >> level, generator=gen, dtype=dtype)
        for level, w in enumerate(widths)
    ]


def test_heatmap_single_parcel():
    p = box_parcel(1, 6, 12, 20, 40, shape=(32, 64))
    target = build_heatmap_target([p], 32, 64)
    assert target[p.center] == 1
    assert target.max() == 1
    i, j = p.center
    np.testing.assert_allclose(target[i + 1, j], np.exp(-0.5), rtol=1e-12)
    np.testing.assert_allclose(target[i, j + 2], np.exp(-0.5), rtol=1e-12)


def test_heatmap_two_parcels():
    p1, p2 = box_parcel(1, 2, 2, 10, 12), box_parcel(2, 16, 10, 14, 20)
    target = build_heatmap_target([p1, p2], 32, 32)
    k1 = build_heatmap_target([p1], 32, 32)
    k2 = build_heatmap_target([p2], 32, 32)
    np.testing.assert_array_equal(target, np.maximum(k1, k2))
    np.testing.assert_array_equal(target, build_heatmap_target([p2, p1], 32, 32))
    assert target[p1.center] == target[p2.center] == 1


def test_heatmap_void_and_empty():
    void = box_parcel(1, 2, 2, 10, 12, is_void=True)
    assert not build_heatmap_target([void], 32, 32).any()
    assert not build_heatmap_target([], 8, 8).any()


def test_center_loss_hand_value():
    loss = center_loss(torch.tensor([0.5]), torch.tensor([0.5]), 1)
    np.testing.assert_allclose(loss.item(), 0.5 ** 4 * np.log(2), rtol=1e-6)
    assert round(loss.item(), 4) == 0.0433


def test_center_loss_perfect():
    target = torch.zeros(5, 5, dtype=torch.float64)
    target[2, 2] = 1
    loss = center_loss(target.clone(), target, 1)
    assert loss.item() < 1e-5


def test_center_loss_no_parcel():
    m = torch.rand(4, 4, requires_grad=True)
    loss = center_loss(m, torch.zeros(4, 4), 0)
    loss.backward()
    assert loss.item() == 0
    assert torch.all(m.grad == 0)


def test_center_loss_duplicated_scene():
    p = box_parcel(1, 4, 4, 10, 8, shape=(16, 16))
    target = torch.as_tensor(build_heatmap_target([p], 16, 16))
    m = torch.rand(16, 16, dtype=torch.float64)
    single = center_loss(m, target, 1)
    double = center_loss(torch.cat([m, m], dim=1), torch.cat([target, target], dim=1), 2)
    torch.testing.assert_close(single, double)


def test_detect_single_bump():
    i, j = torch.meshgrid(torch.arange(20.0), torch.arange(20.0), indexing="ij")
    m = torch.exp(-((i - 7) ** 2 + (j - 12) ** 2) / 8)
    assert detect_centers(m) == [(7, 12, 1.0)]


def test_detect_plateau():
    centers = detect_centers(torch.full((3, 4), 0.2))
    assert len(centers) == 12
    assert [c[:2] for c in centers] == [(i, j) for i in range(3) for j in range(4)]


def _brute_force_maxima(m):
    H, W = m.shape
    out = list()
    for i in range(H):
        for j in range(W):
            neighbours = m[max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2]
            if m[i, j] >= neighbours.max():
                out.append((i, j, float(m[i, j])))
    return sorted(out, key=lambda c: (-c[2], c[0], c[1]))


@pytest.mark.parametrize("seed", range(3))
def test_detect_brute_force(seed):
    m = np.random.RandomState(seed).uniform(size=(64, 64))
    m[10:13, 20:23] = 0.999  # plateau
    assert detect_centers(torch.from_numpy(m)) == _brute_force_maxima(m)


def test_detect_isolated_true_centers():
    parcels = [box_parcel(1, 0, 0, 10, 10), box_parcel(2, 0, 20, 10, 10), box_parcel(3, 20, 5, 10, 10)]
    target = torch.from_numpy(build_heatmap_target(parcels, 32, 32))
    found = {c[:2] for c in detect_centers(target)}
    assert {p.center for p in parcels} <= found


def test_assign_centers():
    p1, p2 = box_parcel(1, 0, 0, 16, 12), box_parcel(2, 0, 16, 16, 14)
    pmap = np.zeros((32, 32), dtype=int)
    pmap[:, :14] = 1
    pmap[:, 14:] = 2
    centers = [(3, 3, 0.4), (5, 6, 0.9)]
    assert assign_centers([p1, p2], centers, pmap) == {1: (5, 6, 0.9)}
    assert assign_centers([p1, p2], [], pmap) == {}
    both = assign_centers([p1, p2], centers + [(8, 20, 0.1)], pmap)
    assert both == {1: (5, 6, 0.9), 2: (8, 20, 0.1)}


def test_multiscale_features():
    d = list()
    for level, w in enumerate((32, 32, 64, 128)):
        size = 128 >> level
        i, j = torch.meshgrid(torch.arange(size), torch.arange(size), indexing="ij")
        d.append((1000 * i + j).float()[None, None].expand(1, w, size, size))
    features = extract_multiscale_features(d, [(0, 0, 0), (0, 127, 127)])
    assert tuple(features.shape) == (2, 256)
    assert torch.all(features[0] == 0)
    assert torch.all(features[1, :32] == 127127)
    assert torch.all(features[1, 128:] == 15015)


def test_parameter_count():
    n = count_parameters(PaPs())
    assert n == 182905
    assert n == pytest.approx(190e3, rel=0.05)


def test_multiplicative_has_no_refiner():
    paps = PaPs(PaPsConfig(multiplicative_saliency=True))
    assert paps.refiner is None
    assert count_parameters(paps) == 182905 - 2657


def test_predict_heads():
    torch.manual_seed(0)
    paps = PaPs().eval()
    size, probs, shape = paps.predict_heads(10 * torch.randn(7, 256))
    assert torch.all(size > 0)
    torch.testing.assert_close(probs.sum(dim=1), torch.ones(7), atol=1e-6, rtol=0)
    assert tuple(shape.shape) == (7, 16, 16)


def test_single_proposal_in_train_mode():
    paps = PaPs().train()
    size, probs, shape = paps.predict_heads(torch.randn(1, 256))
    assert paps.training and paps.class_mlp.training
    assert tuple(probs.shape) == (1, 20)


def test_saliency_zero_weights():
    paps = PaPs().eval()
    with torch.no_grad():
        for param in paps.saliency_head.parameters():
            param.zero_()
        paps.saliency_head.out.bias.fill_(0.3)
    z = paps.saliency(torch.randn(2, 32, 12, 10))
    assert tuple(z.shape) == (2, 12, 10)
    torch.testing.assert_close(z, torch.full_like(z, 0.3))


def test_assemble_identity_resize():
    s = torch.randn(16, 16)
    mask, window = assemble_shape(s, torch.zeros(40, 40), (20, 20), (16.0, 16.0))
    assert window == (12, 12, 28, 28)
    torch.testing.assert_close(mask, torch.sigmoid(s))


def test_assemble_zero_refiner():
    s, z = torch.randn(16, 16), torch.randn(32, 32)
    refiner = ShapeRefiner()
    with torch.no_grad():
        for param in refiner.parameters():
            param.zero_()
    refined, _ = assemble_shape(s, z, (10, 14), (7.3, 11.2), refiner=refiner)
    plain, window = assemble_shape(s, z, (10, 14), (7.3, 11.2))
    assert tuple(refined.shape) == (8, 12)
    assert window == (6, 8, 14, 20)
    torch.testing.assert_close(refined, plain)


def test_assemble_corner():
    s = torch.arange(16.0).view(4, 4)
    z = torch.arange(64.0).view(8, 8)
    mask, window = assemble_shape(s, z, (0, 0), (4.0, 4.0))
    assert window == (0, 0, 2, 2)
    expected = torch.sigmoid(s[2:, 2:] + z[:2, :2])
    torch.testing.assert_close(mask, expected)

    mask, window = assemble_shape(s, z, (7, 7), (3.5, 4.0))
    assert window == (5, 5, 8, 8)
    assert tuple(mask.shape) == (3, 3)


def test_assemble_multiplicative():
    s, z = torch.randn(6, 6), torch.randn(10, 10)
    mask, (t0, l0, b0, r0) = assemble_shape(s, z, (5, 5), (6.0, 6.0), multiplicative=True)
    torch.testing.assert_close(mask, torch.sigmoid(s) * torch.sigmoid(z[t0:b0, l0:r0]))


@pytest.mark.parametrize(
    "center, size", [((3, 4), (7.3, 11.2)), ((0, 9), (20.0, 5.5)), ((9, 0), (2.2, 30.0)), ((5, 5), (3.0, 3.0))]
)
def test_assemble_matches_full_resize(center, size):
    torch.manual_seed(0)
    s = torch.randn(16, 16, dtype=torch.float64)
    mask, (t0, l0, b0, r0) = assemble_shape(s, torch.zeros(10, 10, dtype=torch.float64), center, size)
    Hb, Wb = math.ceil(size[0]), math.ceil(size[1])
    top, left = center[0] - Hb // 2, center[1] - Wb // 2
    full = F.interpolate(s[None, None], size=(Hb, Wb), mode="bilinear", align_corners=False)[0, 0]
    torch.testing.assert_close(mask, torch.sigmoid(full[t0 - top : b0 - top, l0 - left : r0 - left]))


def test_assemble_huge_size():
    """a diverging size prediction only costs the image window"""
    s, z = torch.randn(4, 4, dtype=torch.float64), torch.randn(8, 8, dtype=torch.float64)
    mask, window = assemble_shape(s, z, (4, 4), (1e12, 1e12))
    assert window == (0, 0, 8, 8)
    assert tuple(mask.shape) == (8, 8)
    # the window sits in the middle of the box, between the four central pixels of the patch
    torch.testing.assert_close(mask, torch.sigmoid(s[1:3, 1:3].mean() + z), atol=1e-6, rtol=0)


@pytest.mark.parametrize("size", [(0.0, 3.0), (-1.0, 2.0), (float("nan"), 1.0)])
def test_assemble_invalid_size(size):
    with pytest.raises(SizeError):
        assemble_shape(torch.zeros(4, 4), torch.zeros(8, 8), (4, 4), size)


def test_size_loss():
    loss = size_loss(torch.tensor([12.0, 20.0]), torch.tensor([10.0, 20.0]))
    np.testing.assert_allclose(loss.item(), 0.2, rtol=1e-6)
    assert size_loss(torch.tensor([3.0, 4.0]), torch.tensor([3.0, 4.0])).item() == 0


def test_loss_terms():
    torch.manual_seed(0)
    paps = PaPs().double().eval()
    parcels = [box_parcel(1, 1, 1, 6, 7, (16, 16), crop_class=3), box_parcel(2, 9, 4, 6, 10, (16, 16), crop_class=5)]
    loss = paps.loss(random_pyramid(B=2), [make_sample(parcels), make_sample(parcels[:1])])
    assert loss.n_parcels == 3
    assert 1 <= loss.n_detected <= 3
    torch.testing.assert_close(loss.total, loss.center + loss.classification + loss.size + loss.shape)
    assert all(np.isfinite(v) for v in loss.to_dict().values())


def test_loss_without_parcels():
    paps = PaPs().double().eval()
    d = [level.requires_grad_() for level in random_pyramid()]
    loss = paps.loss(d, [make_sample([])])
    assert loss.n_parcels == loss.n_detected == 0
    assert loss.total.item() == 0
    loss.total.backward()
    assert torch.all(d[0].grad == 0)


def test_loss_void_parcels_ignored():
    paps = PaPs().double().eval()
    void = box_parcel(1, 1, 1, 6, 7, (16, 16), is_void=True)
    loss = paps.loss(random_pyramid(), [make_sample([void])])
    assert loss.n_parcels == 0


def test_gradient_check():
    """
    five random entries of each parameter tensor of the heads

    The heads hold far more weights than the toy U-TAE, so unlike the
    encoder check not every entry is perturbed.
    """
    torch.manual_seed(1)
    paps = PaPs().double().eval()
    parcel = box_parcel(1, 3, 4, 8, 9, (16, 16), crop_class=2)
    d = random_pyramid(seed=2)
    err = gradient_check(
        lambda: paps.loss(d, [make_sample([parcel])]).total,
        paps.parameters(),
        max_entries=5,
        random_state=0,
    )
    assert err < 1e-4


def test_class_loss_decreases():
    torch.manual_seed(0)
    paps = PaPs().double().eval()
    features = torch.randn(1, 256, dtype=torch.float64)
    optimizer = torch.optim.SGD(paps.class_mlp.parameters(), lr=1e-3)
    losses = list()
    for _ in range(10):
        optimizer.zero_grad()
        _, class_logits, _ = paps._heads(features)
        loss = -torch.log_softmax(class_logits, dim=1)[0, 7]
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_propose():
    torch.manual_seed(0)
    paps = PaPs().eval()
    d = random_pyramid(B=2, dtype=torch.float32)
    sets = paps.propose(d, threshold=0.0, max_proposals=5, sample_ids=["a", "b"])
    assert [s.sample_id for s in sets] == ["a", "b"]
    for proposal_set in sets:
        assert 1 <= len(proposal_set) <= 5
        qualities = [p.quality for p in proposal_set]
        assert qualities == sorted(qualities, reverse=True)
        for p in proposal_set:
            t0, l0, b0, r0 = p.window
            assert p.mask.shape == (b0 - t0, r0 - l0)
            assert 0 <= p.mask.min() and p.mask.max() <= 1
            np.testing.assert_allclose(p.class_probs.sum(), 1, atol=1e-6)
            assert 1 <= p.crop_class <= 18

    m = paps.heatmap(d[0])
    best = sets[0].proposals[0]
    assert best.quality == pytest.approx(m[0][best.center].item())
    assert not paps.propose(d, threshold=1.01)[0].proposals


def test_panoptic_utae():
    config = UTAEConfig(
        input_dim=3,
        encoder_widths=(8, 8, 16),
        decoder_widths=(4, 8, 16),
        n_head=4,
        d_model=8,
        mlp=(8, 16),
    )
    torch.manual_seed(0)
    model = PanopticUTAE(config, PaPsConfig(n_classes=5))
    assert model.backbone.out_conv is None
    assert model.head.config.feature_dim == 28

    samples = generate_dataset(GenConfig(seed=1, H=16, W=16, T_range=(4, 5), channels=3, n_classes=3), 2)
    images = torch.zeros(2, 5, 3, 16, 16)
    pad_mask = torch.zeros(2, 5, dtype=torch.bool)
    dates = torch.zeros(2, 5, dtype=torch.long)
    for b, s in enumerate(samples):
        images[b, : s.T] = torch.from_numpy(s.images)
        pad_mask[b, : s.T] = True
        dates[b, : s.T] = torch.from_numpy(s.dates)
    d = model(images, dates, pad_mask)
    assert [tuple(level.shape[1:]) for level in d] == [(4, 16, 16), (8, 8, 8), (16, 4, 4)]
    loss = model.head.loss(d, samples)
    loss.total.backward()
    assert torch.isfinite(loss.total)


def test_rle():
    mask = np.random.RandomState(0).uniform(size=(7, 5)) > 0.5
    np.testing.assert_array_equal(rle_decode(rle_encode(mask), mask.shape), mask)
    assert rle_encode(np.ones((2, 2))) == [0, 4]


def test_dump_proposals(tmp_path):
    paps = PaPs().eval()
    sets = paps.propose(random_pyramid(dtype=torch.float32), max_proposals=3, sample_ids=["x"])
    path = tmp_path / "proposals.jsonl"
    assert dump_proposals(sets, path) == len(sets[0])
    with open(path) as f:
        records = [json.loads(line) for line in f]
    assert [r["rank"] for r in records] == list(range(len(sets[0])))
    for record, proposal in zip(records, sets[0]):
        assert record["sample_id"] == "x"
        mask = rle_decode(record["mask"]["counts"], record["mask"]["size"])
        np.testing.assert_array_equal(mask, proposal.mask >= 0.4)
