import numpy as np
import pytest
import torch

from ...exceptions import DegenerateSequence, ShapeError, UnknownAblation
from ...utils import gradient_check
from ..utae import (
    ABLATIONS,
    UTAE,
    UTAEConfig,
    count_parameters,
    interpolate_masks,
    semantic_loss,
    temporal_collapse,
)

TOY = dict(
    input_dim=3,
    encoder_widths=(8, 8, 16),
    decoder_widths=(4, 8, 16),
    out_conv=(4, 5),
    n_head=4,
    d_model=8,
    mlp=(8, 16),
)


def _toy(ablation="full", seed=0, **kwargs):
    torch.manual_seed(seed)
    params = dict(TOY, **kwargs)
    return UTAE(UTAEConfig(ablation=ablation, **params)).double().eval()


def _inputs(B=2, T=4, C=3, H=16, W=16, lengths=None, seed=0):
    gen = torch.Generator().manual_seed(seed)
    images = torch.randn(B, T, C, H, W, generator=gen, dtype=torch.float64)
    lengths = lengths or [T] * B
    pad_mask = torch.arange(T)[None] < torch.tensor(lengths)[:, None]
    images = images * pad_mask[:, :, None, None, None]
    dates = torch.cumsum(torch.randint(1, 20, (B, T), generator=gen), dim=1) * pad_mask
    return images, dates, pad_mask


def test_default_pyramid_shapes():
    torch.manual_seed(0)
    model = UTAE().eval()
    images, dates, pad_mask = _inputs(B=1, T=2, C=10, H=128, W=128)
    with torch.no_grad():
        logits, pyramid = model(images.float(), dates, pad_mask, return_pyramid=True)
    assert tuple(logits.shape) == (1, 20, 128, 128)
    assert [tuple(e.shape[2:]) for e in pyramid.e] == [
        (64, 128, 128),
        (64, 64, 64),
        (64, 32, 32),
        (128, 16, 16),
    ]
    assert [tuple(a.shape) for a in pyramid.a] == [(1, 16, 2, s, s) for s in (128, 64, 32, 16)]
    assert tuple(pyramid.d[0].shape) == (1, 32, 128, 128)
    assert tuple(pyramid.d[-1].shape) == (1, 128, 16, 16)


@pytest.mark.parametrize(
    "ablation, expected",
    [
        ("full", 1087220),
        ("mean_attention", 1087220),
        ("batchnorm_encoder", 1087220),
        ("skip_mean_conv", 1087220),
        ("skip_mean", 1074356),
        ("single_date", 1004020),
    ],
)
def test_parameter_count(ablation, expected):
    assert count_parameters(UTAE(UTAEConfig(ablation=ablation))) == expected


def test_default_size():
    assert count_parameters(UTAE()) == pytest.approx(1087e3, rel=0.05)


def test_attention_sums_to_one():
    model = _toy()
    images, dates, pad_mask = _inputs(lengths=[4, 2])
    _, pyramid = model(images, dates, pad_mask, return_pyramid=True)
    for a in pyramid.a:
        torch.testing.assert_close(a.sum(dim=2), torch.ones_like(a[:, :, 0]), atol=1e-5, rtol=0)
        assert torch.all(a[1, :, 2:] == 0)
        assert a.min() >= 0 and a.max() <= 1


@pytest.mark.parametrize("ablation", ABLATIONS)
def test_padding_invariance(ablation):
    """three padded acquisitions appended to random mixed-length batches change no level"""
    model = _toy(ablation)
    rng = np.random.RandomState(0)
    for seed in range(20):
        lengths = rng.randint(4, 13, size=3).tolist()
        images, dates, pad_mask = _inputs(B=3, T=max(lengths), lengths=lengths, seed=seed)
        _, ref = model(images, dates, pad_mask, return_pyramid=True)

        images = torch.cat([images, torch.zeros_like(images[:, :3])], dim=1)
        dates = torch.cat([dates, torch.zeros_like(dates[:, :3])], dim=1)
        pad_mask = torch.cat([pad_mask, torch.zeros_like(pad_mask[:, :3])], dim=1)
        _, padded = model(images, dates, pad_mask, return_pyramid=True)

        assert len(padded.d) == model.config.n_levels
        for f_ref, f_pad in zip(ref.f, padded.f):
            torch.testing.assert_close(f_pad, f_ref, atol=1e-5, rtol=0)
        for d_ref, d_pad in zip(ref.d, padded.d):
            torch.testing.assert_close(d_pad, d_ref, atol=1e-5, rtol=0)
        for a in padded.a:
            torch.testing.assert_close(a.sum(dim=2), torch.ones_like(a[:, :, 0]), atol=1e-5, rtol=0)
            assert torch.all(a.transpose(1, 2)[~pad_mask] == 0)


def test_batch_independence():
    model = _toy()
    images, dates, pad_mask = _inputs(lengths=[4, 3])
    out = model(images, dates, pad_mask)
    alone = model(images[1:, :3], dates[1:, :3], pad_mask[1:, :3])
    torch.testing.assert_close(out[1:], alone, atol=1e-5, rtol=0)


def test_single_acquisition_masks():
    model = _toy()
    images, dates, pad_mask = _inputs(T=1)
    _, pyramid = model(images, dates, pad_mask, return_pyramid=True)
    assert torch.all(pyramid.a[-1] == 1)
    for a in pyramid.a:
        torch.testing.assert_close(a, torch.ones_like(a))


def _collapse_oracle(e, a):
    B, T, C, H, W = e.shape
    G = a.shape[1]
    out = np.zeros((B, C, H, W))
    for b in range(B):
        for c in range(C):
            g = c // (C // G)
            for t in range(T):
                out[b, c] += a[b, g, t] * e[b, t, c]
    return out


def test_temporal_collapse_oracle():
    gen = torch.Generator().manual_seed(1)
    e = torch.randn(2, 4, 6, 3, 3, generator=gen, dtype=torch.float64)
    a = torch.softmax(torch.randn(2, 3, 4, 3, 3, generator=gen, dtype=torch.float64), dim=2)
    out = temporal_collapse(e, a)
    np.testing.assert_allclose(out.numpy(), _collapse_oracle(e.numpy(), a.numpy()), atol=1e-12)


def test_temporal_collapse_uniform_and_one_hot():
    e = torch.randn(1, 5, 4, 2, 2, dtype=torch.float64)
    uniform = torch.full((1, 2, 5, 2, 2), 0.2, dtype=torch.float64)
    torch.testing.assert_close(temporal_collapse(e, uniform), e.mean(dim=1))

    one_hot = torch.zeros(1, 2, 5, 2, 2, dtype=torch.float64)
    one_hot[:, :, 3] = 1
    torch.testing.assert_close(temporal_collapse(e, one_hot), e[:, 3])

    pad_mask = torch.tensor([[1, 1, 0, 0, 0]], dtype=torch.bool)
    torch.testing.assert_close(temporal_collapse(e, pad_mask=pad_mask), e[:, :2].mean(dim=1))


def test_temporal_collapse_broadcast_single_mask():
    e = torch.randn(1, 3, 4, 2, 2, dtype=torch.float64)
    a = torch.softmax(torch.randn(1, 1, 3, 2, 2, dtype=torch.float64), dim=2)
    torch.testing.assert_close(temporal_collapse(e, a), temporal_collapse(e, a.expand(1, 4, 3, 2, 2)))


def test_temporal_collapse_groups():
    with pytest.raises(ShapeError):
        temporal_collapse(torch.zeros(1, 2, 6, 2, 2), torch.zeros(1, 4, 2, 2, 2))


def test_interpolate_constant():
    a = torch.full((1, 2, 3, 4, 4), 0.25)
    for out, size in zip(interpolate_masks(a, [(32, 32), (8, 16)]), [(32, 32), (8, 16)]):
        assert tuple(out.shape) == (1, 2, 3) + size
        torch.testing.assert_close(out, torch.full_like(out, 0.25))


def test_interpolate_smooth_round_trip():
    i, j = torch.meshgrid(torch.arange(16.0), torch.arange(16.0), indexing="ij")
    t = torch.arange(3.0)[:, None, None]
    a = torch.softmax(t * (i + 2 * j) / 80, dim=0)[None, None].double()
    (up,) = interpolate_masks(a, [(128, 128)])
    down = up.view(1, 1, 3, 16, 8, 16, 8).mean(dim=(4, 6))
    assert (down - a).abs().max() < 1e-2


def test_zero_weights_finite():
    model = _toy()
    with torch.no_grad():
        for param in model.parameters():
            param.zero_()
    out = model(*_inputs())
    assert torch.isfinite(out).all()


def test_semantic_loss_uniform():
    rng = np.random.RandomState(0)
    target = torch.from_numpy(rng.randint(0, 20, size=(2, 4, 4)))
    loss = semantic_loss(torch.zeros(2, 20, 4, 4), target, void_label=19)
    np.testing.assert_allclose(loss.item(), np.log(20), rtol=1e-6)


def test_semantic_loss_all_void():
    logits = torch.randn(1, 20, 4, 4, requires_grad=True)
    loss = semantic_loss(logits, torch.full((1, 4, 4), 19), void_label=19)
    loss.backward()
    assert loss.item() == 0
    assert torch.all(logits.grad == 0)


def _gradient_toy(**kwargs):
    """U-TAE with T=3, C=8, 8x8 inputs, two levels and two heads, in double precision"""
    torch.manual_seed(3)
    config = UTAEConfig(
        input_dim=8,
        encoder_widths=(8, 8),
        decoder_widths=(4, 8),
        out_conv=(),
        n_head=2,
        d_k=4,
        d_model=8,
        mlp=(8, 8),
        **kwargs,
    )
    model = UTAE(config).double()
    images, dates, pad_mask = _inputs(B=1, T=3, C=8, H=8, W=8, lengths=[3])
    weights = torch.randn(1, 4, 8, 8, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    return model, lambda: (model(images, dates, pad_mask) * weights).sum()


def test_gradient_check():
    """every entry of every parameter, in evaluation mode"""
    model, func = _gradient_toy()
    model.eval()
    assert gradient_check(func, model.parameters()) < 1e-4


def test_gradient_check_train_mode():
    """batch statistics in the normalizations, no dropout"""
    model, func = _gradient_toy(dropout=0.0)
    model.train()
    assert gradient_check(func, model.parameters()) < 1e-4


def test_no_head_outputs_decoder():
    model = _toy(out_conv=())
    assert model.config.n_classes is None
    out, pyramid = model(*_inputs(), return_pyramid=True)
    assert out is pyramid.d[0]
    assert out.shape[1] == 4


def test_skip_mean_conv_single_date_equivalence():
    full = _toy()
    variant = UTAE(full.config.variant("skip_mean_conv")).double().eval()
    variant.load_state_dict(full.state_dict())
    images, dates, pad_mask = _inputs(T=1)
    torch.testing.assert_close(variant(images, dates, pad_mask), full(images, dates, pad_mask))


def test_batchnorm_encoder_modules():
    full = dict(_toy().named_modules())
    variant = dict(_toy("batchnorm_encoder").named_modules())
    assert full.keys() == variant.keys()
    for name, module in full.items():
        if type(module) is type(variant[name]):
            continue
        assert name.startswith("encoder.")
        assert isinstance(module, torch.nn.GroupNorm)
        assert isinstance(variant[name], torch.nn.BatchNorm2d)


def test_single_date_picks_middle():
    model = _toy("single_date")
    images, dates, pad_mask = _inputs(T=6, lengths=[6, 5])
    out, pyramid = model(images, dates, pad_mask, return_pyramid=True)
    assert pyramid.a == []
    for b, index in enumerate([2, 2]):
        alone = model(images[b : b + 1, index : index + 1], dates[b : b + 1, :1], pad_mask[b : b + 1, :1])
        torch.testing.assert_close(out[b : b + 1], alone)


def test_single_date_fixed_index():
    model = _toy("single_date", single_date=4)
    images, dates, pad_mask = _inputs(T=6, lengths=[6, 3])
    out = model(images, dates, pad_mask)
    last = model(images[1:, 2:3], dates[1:, :1], pad_mask[1:, :1])
    torch.testing.assert_close(out[1:], last)


@pytest.mark.parametrize("ablation", ABLATIONS)
def test_ablations_run(ablation):
    out = _toy(ablation)(*_inputs(lengths=[4, 1]))
    assert tuple(out.shape) == (2, 5, 16, 16)
    assert torch.isfinite(out).all()


def test_unknown_ablation():
    with pytest.raises(UnknownAblation):
        UTAEConfig(ablation="no_attention")


@pytest.mark.parametrize("size", [(18, 16), (4, 4)])
def test_invalid_spatial_shape(size):
    model = _toy()
    with pytest.raises(ShapeError):
        model(*_inputs(H=size[0], W=size[1]))


def test_invalid_config():
    with pytest.raises(ShapeError):
        UTAEConfig(decoder_widths=(32, 32, 64, 64))
    with pytest.raises(ShapeError):
        UTAEConfig(n_head=3, mlp=(256, 128))


def test_degenerate_sequence():
    model = _toy()
    images, dates, pad_mask = _inputs()
    pad_mask[1] = False
    with pytest.raises(DegenerateSequence):
        model(images, dates, pad_mask)
