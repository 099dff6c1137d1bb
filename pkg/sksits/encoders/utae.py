"""
U-Net with Temporal Attention Encoder (U-TAE)

Each acquisition is encoded separately by a convolutional encoder. At the
lowest resolution, a pixel-wise temporal attention module computes one
attention mask per head, which is then interpolated to every resolution
to collapse the temporal dimension of the skip connections. A convolutional
decoder finally maps the collapsed pyramid to dense features.
"""
from dataclasses import asdict, dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import ShapeError, UnknownAblation
from .ltae import LTAE2d

ABLATIONS = (
    "full",
    "mean_attention",
    "skip_mean",
    "skip_mean_conv",
    "batchnorm_encoder",
    "single_date",
)


@dataclass(frozen=True)
class UTAEConfig:
    """
    Architecture of a U-TAE network

    Defaults reproduce the reference semantic segmentation configuration.

    Parameters
    ----------
    input_dim: int, default=10
        number of spectral bands
    encoder_widths: tuple of int, default=(64, 64, 64, 128)
        width of the encoder feature maps at each level, the number of levels
        being the length of this tuple
    decoder_widths: tuple of int, default=(32, 32, 64, 128)
        width of the decoder feature maps, last one equal to the last encoder width
    out_conv: tuple of int, default=(32, 20)
        widths of the semantic head on top of the decoder, the last one being
        the number of classes to predict. If empty, the network outputs the
        first decoder map, e.g. to be fed to a panoptic head
    n_head: int, default=16
        number of attention heads, or groups of channels
    d_k: int, default=4
        key-query dimension of the attention
    d_model: int, default=256
    mlp: tuple of int, default=(256, 128)
    dropout: float, default=0.2
    positional_period: int, default=1000
    encoder_norm: str, default="group"
        "group", "batch" or "none"
    n_groups: int, default=4
        number of groups of the encoder group normalisation
    decoder_norm: str, default="batch"
    padding_mode: str, default="reflect"
    str_conv_k, str_conv_s, str_conv_p: int, default=4, 2, 1
        kernel, stride and padding of the strided convolutions
    ablation: str, default="full"
        one of "full", "mean_attention", "skip_mean", "skip_mean_conv",
        "batchnorm_encoder", "single_date"
    single_date: int, default=None
        index of the acquisition kept by the "single_date" ablation,
        the middle real acquisition of each sequence if None
    """

    input_dim: int = 10
    encoder_widths: tuple = (64, 64, 64, 128)
    decoder_widths: tuple = (32, 32, 64, 128)
    out_conv: tuple = (32, 20)
    n_head: int = 16
    d_k: int = 4
    d_model: int = 256
    mlp: tuple = (256, 128)
    dropout: float = 0.2
    positional_period: int = 1000
    encoder_norm: str = "group"
    n_groups: int = 4
    decoder_norm: str = "batch"
    padding_mode: str = "reflect"
    str_conv_k: int = 4
    str_conv_s: int = 2
    str_conv_p: int = 1
    ablation: str = "full"
    single_date: int = None

    def __post_init__(self):
        for name in ("encoder_widths", "decoder_widths", "out_conv", "mlp"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.ablation not in ABLATIONS:
            raise UnknownAblation(f"unknown ablation {self.ablation!r}, expected one of {ABLATIONS}")
        L = len(self.encoder_widths)
        if L < 2 or len(self.decoder_widths) != L:
            raise ShapeError("encoder and decoder should have the same number of levels, at least 2")
        if min(self.encoder_widths + self.decoder_widths + self.out_conv) <= 0:
            raise ShapeError("widths should be strictly positive")
        if self.decoder_widths[-1] != self.encoder_widths[-1]:
            raise ShapeError("the last decoder width should equal the last encoder width")
        if self.encoder_widths[-1] % self.n_head:
            raise ShapeError(
                f"the last encoder width ({self.encoder_widths[-1]}) should be "
                f"divisible by the number of heads ({self.n_head})"
            )
        if self.mlp[-1] != self.encoder_widths[-1]:
            raise ShapeError("the attention perceptron should output the last encoder width")

    @property
    def n_levels(self):
        return len(self.encoder_widths)

    @property
    def n_classes(self):
        """number of output channels of the semantic head, None without head"""
        return self.out_conv[-1] if self.out_conv else None

    @property
    def effective_encoder_norm(self):
        return "batch" if self.ablation == "batchnorm_encoder" else self.encoder_norm

    def variant(self, ablation):
        """same configuration, under another ablation"""
        return replace(self, ablation=ablation)

    def to_dict(self):
        return asdict(self)


@dataclass
class FeaturePyramid:
    """
    Intermediate maps of a forward pass, one entry per level, highest resolution first

    Attributes
    ----------
    e: list of torch.Tensor of shape (B, T, C_l, H_l, W_l)
        encoder maps, zero on padded acquisitions
    a: list of torch.Tensor of shape (B, G, T, H_l, W_l)
        attention masks
    f: list of torch.Tensor of shape (B, C_l, H_l, W_l)
        temporally collapsed maps
    d: list of torch.Tensor of shape (B, D_l, H_l, W_l)
        decoder maps
    pad_mask: torch.Tensor of shape (B, T)
    """

    e: list = field(default_factory=list)
    a: list = field(default_factory=list)
    f: list = field(default_factory=list)
    d: list = field(default_factory=list)
    pad_mask: torch.Tensor = None


def _norm_layer(norm, channels, n_groups=4):
    if norm == "group":
        return nn.GroupNorm(num_groups=n_groups, num_channels=channels)
    if norm == "batch":
        return nn.BatchNorm2d(channels)
    if norm == "none":
        return nn.Identity()
    raise ValueError(f"unknown normalisation {norm!r}")


def conv_layer(d_in, d_out, norm="batch", n_groups=4, padding_mode="reflect", k=3, s=1, p=1):
    """convolution, normalisation and ReLU"""
    return nn.Sequential(
        nn.Conv2d(d_in, d_out, kernel_size=k, stride=s, padding=p, padding_mode=padding_mode),
        _norm_layer(norm, d_out, n_groups),
        nn.ReLU(),
    )


class EncoderBlock(nn.Module):
    """
    Two 3x3 convolutions, after an optional strided one

    The second convolution is residual on downsampling blocks only.
    """

    def __init__(self, d_in, d_out, norm, n_groups, padding_mode, down=None):
        super().__init__()
        self.down = None
        if down is not None:
            k, s, p = down
            self.down = conv_layer(d_in, d_in, norm, n_groups, padding_mode, k=k, s=s, p=p)
        self.conv1 = conv_layer(d_in, d_out, norm, n_groups, padding_mode)
        self.conv2 = conv_layer(d_out, d_out, norm, n_groups, padding_mode)

    def forward(self, x):
        if self.down is None:
            return self.conv2(self.conv1(x))
        out = self.conv1(self.down(x))
        return out + self.conv2(out)


class DecoderBlock(nn.Module):
    """transposed convolution, concatenation with the skip connection, then a residual block"""

    def __init__(self, d_in, d_out, d_skip, norm, padding_mode, k=4, s=2, p=1):
        super().__init__()
        self.up = nn.Sequential(
            nn.ConvTranspose2d(d_in, d_out, kernel_size=k, stride=s, padding=p),
            _norm_layer(norm, d_out),
            nn.ReLU(),
        )
        self.conv1 = conv_layer(d_out + d_skip, d_out, norm, padding_mode=padding_mode)
        self.conv2 = conv_layer(d_out, d_out, norm, padding_mode=padding_mode)

    def forward(self, x, skip):
        out = torch.cat([self.up(x), skip], dim=1)
        out = self.conv1(out)
        return out + self.conv2(out)


def interpolate_masks(attn, sizes):
    """
    Bilinearly resize attention masks to every target size

    Half-pixel aligned, so constants are preserved, and so are
    per-pixel sums over time. Values are clamped to [0, 1].

    Parameters
    ----------
    attn: torch.Tensor of shape (B, G, T, h, w)
    sizes: list of tuple (H_l, W_l)

    Returns
    -------
    list of torch.Tensor of shape (B, G, T, H_l, W_l)
    """
    B, G, T, h, w = attn.shape
    flat = attn.reshape(B, G * T, h, w)
    out = list()
    for size in sizes:
        if tuple(size) == (h, w):
            resized = flat
        else:
            resized = F.interpolate(flat, size=tuple(size), mode="bilinear", align_corners=False)
        out.append(resized.clamp(0, 1).view(B, G, T, *size))
    return out


def temporal_collapse(e, attn=None, pad_mask=None):
    """
    Collapse the temporal dimension of a feature map sequence

    Channels are split into as many contiguous groups as there are masks,
    each group being averaged over time with the weights of its mask.
    A single mask applies to all channels.
    Without masks, a plain average over real acquisitions is computed.

    Parameters
    ----------
    e: torch.Tensor of shape (B, T, C, H, W)
    attn: torch.Tensor of shape (B, G, T, H, W), default=None
    pad_mask: torch.Tensor of shape (B, T), default=None
        required when ``attn`` is None

    Returns
    -------
    torch.Tensor of shape (B, C, H, W)

    Raises
    ------
    ShapeError
        if C is not divisible by the number of masks
    """
    B, T, C, H, W = e.shape
    if attn is None:
        weights = pad_mask.to(e.dtype)
        weights = weights / weights.sum(dim=1, keepdim=True)
        return (e * weights[:, :, None, None, None]).sum(dim=1)
    G = attn.shape[1]
    if C % G:
        raise ShapeError(f"{C} channels cannot be split into {G} groups")
    groups = e.view(B, T, G, C // G, H, W)
    weights = attn.permute(0, 2, 1, 3, 4).unsqueeze(3)
    return (groups * weights).sum(dim=1).reshape(B, C, H, W)


def _single_date_index(pad_mask, index=None):
    lengths = pad_mask.sum(dim=1)
    if index is None:
        return (lengths - 1) // 2
    return torch.clamp(lengths - 1, max=int(index))


class UTAE(nn.Module):
    """
    U-TAE network

    Parameters
    ----------
    config: UTAEConfig, default=None
        the reference configuration if None

    Examples
    --------
    >>> import torch
    >>> from sksits.encoders import UTAE, UTAEConfig, count_parameters
    >>> count_parameters(UTAE())
    1087220
    >>> cfg = UTAEConfig(input_dim=3, encoder_widths=(8, 8), decoder_widths=(4, 8),
    ...                  out_conv=(4, 5), n_head=2, d_model=8, mlp=(8, 8))
    >>> model = UTAE(cfg).eval()
    >>> x = torch.randn(1, 4, 3, 16, 16)
    >>> model(x, torch.arange(4)[None], torch.ones(1, 4, dtype=torch.bool)).shape
    torch.Size([1, 5, 16, 16])
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or UTAEConfig()
        enc, dec = config.encoder_widths, config.decoder_widths
        norm = config.effective_encoder_norm
        down = (config.str_conv_k, config.str_conv_s, config.str_conv_p)

        self.encoder = nn.ModuleList(
            [
                EncoderBlock(
                    config.input_dim if level == 0 else enc[level - 1],
                    enc[level],
                    norm,
                    config.n_groups,
                    config.padding_mode,
                    down=None if level == 0 else down,
                )
                for level in range(config.n_levels)
            ]
        )
        self.temporal_encoder = None
        if config.ablation != "single_date":
            self.temporal_encoder = LTAE2d(
                in_channels=enc[-1],
                n_head=config.n_head,
                d_k=config.d_k,
                d_model=config.d_model,
                mlp=config.mlp,
                dropout=config.dropout,
                positional_period=config.positional_period,
            )
        skip_conv = config.ablation != "skip_mean"
        self.skip_convs = nn.ModuleList(
            [
                conv_layer(enc[level], enc[level], config.decoder_norm, k=1, p=0)
                if skip_conv
                else nn.Identity()
                for level in range(config.n_levels - 1)
            ]
        )
        self.decoder = nn.ModuleList(
            [
                DecoderBlock(
                    dec[level + 1],
                    dec[level],
                    enc[level],
                    config.decoder_norm,
                    config.padding_mode,
                    *down,
                )
                for level in range(config.n_levels - 1)
            ]
        )
        self.out_conv = None
        if config.out_conv:
            widths = (dec[0],) + config.out_conv
            layers = [
                conv_layer(d_in, d_out, config.decoder_norm, padding_mode=config.padding_mode)
                for d_in, d_out in zip(widths[:-2], widths[1:-1])
            ]
            layers.append(
                nn.Conv2d(widths[-2], widths[-1], 3, padding=1, padding_mode=config.padding_mode)
            )
            self.out_conv = nn.Sequential(*layers)

    def _check_input(self, images):
        factor = 2 ** (self.config.n_levels - 1)
        H, W = images.shape[-2:]
        if H % factor or W % factor or H // factor < 2 or W // factor < 2:
            raise ShapeError(
                f"spatial shape {(H, W)} should be divisible by {factor}, "
                f"with at least 2 pixels at the lowest resolution"
            )
        if images.shape[2] != self.config.input_dim:
            raise ShapeError(f"expected {self.config.input_dim} channels, got {images.shape[2]}")

    def spatial_encode(self, images, pad_mask):
        """
        Encode every real acquisition independently

        Parameters
        ----------
        images: torch.Tensor of shape (B, T, C, H, W)
        pad_mask: torch.Tensor of shape (B, T)

        Returns
        -------
        list of torch.Tensor of shape (B, T, C_l, H_l, W_l)
            zero on padded acquisitions
        """
        self._check_input(images)
        B, T = images.shape[:2]
        pad_mask = pad_mask.bool()
        x = images[pad_mask]
        maps = list()
        for block in self.encoder:
            x = block(x)
            out = x.new_zeros((B, T) + tuple(x.shape[1:]))
            out[pad_mask] = x
            maps.append(out)
        return maps

    def temporal_attention(self, e_last, dates, pad_mask):
        """attention-weighted lowest level map and attention masks, see ``LTAE2d``"""
        return self.temporal_encoder(e_last, dates, pad_mask)

    def _collapse(self, level, e, attn, pad_mask):
        ablation = self.config.ablation
        if ablation in ("skip_mean", "skip_mean_conv"):
            collapsed = temporal_collapse(e, pad_mask=pad_mask)
        elif ablation == "mean_attention":
            collapsed = temporal_collapse(e, attn.mean(dim=1, keepdim=True))
        else:
            collapsed = temporal_collapse(e, attn)
        return self.skip_convs[level](collapsed)

    def decode(self, f):
        """
        Decode a collapsed pyramid, lowest resolution first

        Parameters
        ----------
        f: list of torch.Tensor of shape (B, C_l, H_l, W_l)

        Returns
        -------
        list of torch.Tensor of shape (B, D_l, H_l, W_l)
            highest resolution first, the last one being ``f[-1]``
        """
        d = [f[-1]]
        for level in reversed(range(self.config.n_levels - 1)):
            d.insert(0, self.decoder[level](d[0], f[level]))
        return d

    def _single_date_pyramid(self, images, pad_mask):
        B = images.shape[0]
        index = _single_date_index(pad_mask.bool(), self.config.single_date)
        frame = images[torch.arange(B, device=images.device), index][:, None]
        mask = torch.ones((B, 1), dtype=torch.bool, device=images.device)
        e = self.spatial_encode(frame, mask)
        f = [self.skip_convs[level](e[level][:, 0]) for level in range(self.config.n_levels - 1)]
        f.append(e[-1][:, 0])
        return FeaturePyramid(e=e, a=[], f=f, pad_mask=mask)

    def forward(self, images, dates, pad_mask, return_pyramid=False):
        """
        Parameters
        ----------
        images: torch.Tensor of shape (B, T, C, H, W)
        dates: torch.Tensor of shape (B, T)
        pad_mask: torch.Tensor of shape (B, T)
        return_pyramid: bool, default=False

        Returns
        -------
        torch.Tensor of shape (B, K, H, W)
            class scores, or the first decoder map if the network has no semantic head
        FeaturePyramid
            only if ``return_pyramid`` is True
        """
        pad_mask = pad_mask.bool()
        if self.config.ablation == "single_date":
            pyramid = self._single_date_pyramid(images, pad_mask)
        else:
            e = self.spatial_encode(images, pad_mask)
            f_last, a_last = self.temporal_attention(e[-1], dates, pad_mask)
            sizes = [tuple(m.shape[-2:]) for m in e[:-1]]
            a = interpolate_masks(a_last, sizes) + [a_last]
            f = [self._collapse(level, e[level], a[level], pad_mask) for level in range(len(sizes))]
            pyramid = FeaturePyramid(e=e, a=a, f=f + [f_last], pad_mask=pad_mask)

        pyramid.d = self.decode(pyramid.f)
        out = pyramid.d[0] if self.out_conv is None else self.out_conv(pyramid.d[0])
        if return_pyramid:
            return out, pyramid
        return out


def semantic_loss(logits, target, void_label):
    """
    Pixel-wise cross entropy, averaged over non-void pixels

    Parameters
    ----------
    logits: torch.Tensor of shape (B, K, H, W)
    target: torch.Tensor of shape (B, H, W)
    void_label: int
        ignored label

    Returns
    -------
    torch.Tensor
        scalar, zero if all pixels are void
    """
    target = target.long()
    total = F.cross_entropy(logits, target, ignore_index=void_label, reduction="sum")
    n_valid = (target != void_label).sum().clamp(min=1)
    return total / n_valid


def count_parameters(module):
    """number of trainable parameters of a torch module"""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
