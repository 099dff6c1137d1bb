"""
Parcels-as-Points (PaPs) panoptic head

Parcels are detected as local maxima of a centerness heatmap. For each
detected center, a multi-scale feature vector is read from the decoder
pyramid, from which three perceptrons predict a bounding box size,
a class distribution and a coarse shape patch. The patch is resized
to the box, combined with a saliency map shared by all proposals, and
refined by a small residual network into an instance mask.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import kernel_exponents, pixel_to_parcel_map
from ..encoders.utae import UTAE, UTAEConfig, conv_layer
from ..exceptions import ShapeError, SizeError

logger = logging.getLogger(__name__)

POSITIVE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PaPsConfig:
    """
    Architecture and loss settings of the PaPs head

    Parameters
    ----------
    decoder_widths: tuple of int, default=(32, 32, 64, 128)
        widths of the decoder maps the head reads, highest resolution first
    n_classes: int, default=20
        width of the class head, background and void label included
    shape_size: int, default=16
        side of the predicted shape patches
    hidden: int, default=128
        hidden width of the perceptrons
    class_hidden: tuple of int, default=(128, 64)
        hidden widths of the class perceptron
    multiplicative_saliency: bool, default=False
        combine shape patch and saliency as a product of sigmoids,
        without refinement network
    beta: float, default=4
        exponent of the center loss on negative pixels
    eps: float, default=1e-7
        heatmap clamp before logarithms
    """

    decoder_widths: tuple = (32, 32, 64, 128)
    n_classes: int = 20
    shape_size: int = 16
    hidden: int = 128
    class_hidden: tuple = (128, 64)
    multiplicative_saliency: bool = False
    beta: float = 4.0
    eps: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "decoder_widths", tuple(int(v) for v in self.decoder_widths))
        object.__setattr__(self, "class_hidden", tuple(int(v) for v in self.class_hidden))
        if self.n_classes < 3:
            raise ShapeError("n_classes counts background and void, it should be at least 3")
        if self.shape_size < 1:
            raise ShapeError("shape_size should be strictly positive")

    @property
    def feature_dim(self):
        return sum(self.decoder_widths)

    @property
    def n_crop_classes(self):
        return self.n_classes - 2

    def to_dict(self):
        return asdict(self)


@dataclass
class Proposal:
    """
    A detected parcel

    Attributes
    ----------
    center: tuple of int
        (i, j) pixel of the centerpoint
    quality: float
        heatmap value at the center
    size: tuple of float
        predicted box height and width
    class_probs: np.ndarray of shape (n_classes,)
    shape_patch: np.ndarray of shape (S, S)
        shape logits
    mask: np.ndarray
        assembled mask in [0, 1], covering ``window``
    window: tuple of int
        (top, left, bottom, right) of the box, clipped to the image
    """

    center: tuple
    quality: float
    size: tuple
    class_probs: np.ndarray
    shape_patch: np.ndarray
    mask: np.ndarray
    window: tuple

    @property
    def crop_class(self):
        """most likely class, background and void excluded"""
        return 1 + int(np.argmax(self.class_probs[1:-1]))


@dataclass
class ProposalSet:
    """proposals of one image, by decreasing quality"""

    proposals: list
    shape: tuple
    sample_id: str = ""

    def __len__(self):
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)


@dataclass
class PaPsLoss:
    """terms of the PaPs loss for one batch, per-parcel terms averaged over detected parcels"""

    total: torch.Tensor
    center: torch.Tensor
    classification: torch.Tensor
    size: torch.Tensor
    shape: torch.Tensor
    n_parcels: int = 0
    n_detected: int = 0

    def to_dict(self):
        out = {k: float(getattr(self, k)) for k in ("total", "center", "classification", "size", "shape")}
        out.update(n_parcels=self.n_parcels, n_detected=self.n_detected)
        return out


def build_heatmap_target(parcels, H, W):
    """
    Centerness target, maximum over parcels of their Gaussian kernels

    Parameters
    ----------
    parcels: list of ParcelRecord
        void parcels are skipped
    H, W: int

    Returns
    -------
    np.ndarray of shape (H, W)
        1 at every parcel center, all zeros without parcels

    Examples
    --------
    >>> import numpy as np
    >>> from sksits.core import ParcelRecord
    >>> mask = np.zeros((32, 64), dtype=bool)
    >>> mask[6:26, 12:52] = True
    >>> target = build_heatmap_target([ParcelRecord.from_mask(1, mask, 1)], 32, 64)
    >>> float(target[16, 32]), round(float(target[17, 32]), 4)
    (1.0, 0.6065)
    """
    target = np.zeros((H, W))
    for parcel in parcels:
        if parcel.is_void:
            continue
        np.maximum(target, np.exp(-kernel_exponents(parcel, (H, W))), out=target)
    return target


def center_loss(m, target, n_parcels, beta=4.0, eps=1e-7):
    """
    Focal-type loss of a predicted heatmap, normalised by the number of parcels

    Parameters
    ----------
    m: torch.Tensor
        predicted heatmap in [0, 1]
    target: torch.Tensor
        target heatmap, same shape as ``m``
    n_parcels: int
    beta: float, default=4
    eps: float, default=1e-7

    Returns
    -------
    torch.Tensor
        scalar, zero with zero gradient if ``n_parcels`` is 0
    """
    if n_parcels == 0:
        return m.sum() * 0
    m = m.clamp(eps, 1 - eps)
    positive = target >= 1 - POSITIVE_TOLERANCE
    pixel = torch.where(positive, torch.log(m), (1 - target) ** beta * torch.log(1 - m))
    return -pixel.sum() / n_parcels


def detect_centers(m):
    """
    Local maxima of a heatmap

    A pixel is a maximum if it equals the maximum of its 3x3
    neighbourhood, borders being replicated. Plateaus therefore
    yield all of their pixels.

    Parameters
    ----------
    m: torch.Tensor of shape (H, W)

    Returns
    -------
    list of tuple (i, j, q)
        sorted by decreasing q, then by i and j
    """
    with torch.no_grad():
        padded = F.pad(m[None, None], (1, 1, 1, 1), mode="replicate")
        pooled = F.max_pool2d(padded, kernel_size=3, stride=1)[0, 0]
        ii, jj = torch.nonzero(m == pooled, as_tuple=True)
        values = m[ii, jj]
    centers = [(int(i), int(j), float(q)) for i, j, q in zip(ii.tolist(), jj.tolist(), values.tolist())]
    return sorted(centers, key=lambda c: (-c[2], c[0], c[1]))


def assign_centers(parcels, centers, parcel_map):
    """
    Assign to each parcel its most central detection

    Parameters
    ----------
    parcels: list of ParcelRecord
    centers: list of tuple (i, j, q)
        as returned by ``detect_centers``
    parcel_map: np.ndarray of shape (H, W)
        as returned by ``sksits.core.pixel_to_parcel_map``

    Returns
    -------
    dict
        parcel id -> (i, j, q), undetected parcels being absent
    """
    ids = {p.id for p in parcels}
    assigned = dict()
    for i, j, q in sorted(centers, key=lambda c: (-c[2], c[0], c[1])):
        pid = int(parcel_map[i, j])
        if pid in ids and pid not in assigned:
            assigned[pid] = (i, j, q)
    return assigned


def extract_multiscale_features(d, positions):
    """
    Concatenate decoder features at each position, highest resolution first

    Parameters
    ----------
    d: list of torch.Tensor of shape (B, D_l, H_l, W_l)
    positions: list of tuple (b, i, j)
        batch index and full-resolution coordinates

    Returns
    -------
    torch.Tensor of shape (len(positions), sum(D_l))
    """
    H, W = d[0].shape[-2:]
    b = torch.tensor([p[0] for p in positions], dtype=torch.long, device=d[0].device)
    i = torch.tensor([p[1] for p in positions], dtype=torch.long, device=d[0].device)
    j = torch.tensor([p[2] for p in positions], dtype=torch.long, device=d[0].device)
    features = list()
    for level in d:
        si, sj = H // level.shape[-2], W // level.shape[-1]
        features.append(level[b, :, i // si, j // sj])
    return torch.cat(features, dim=1)


def box_window(center, size, shape):
    """
    Box of ``ceil(size)`` pixels around ``center``, and its part inside the image

    Returns
    -------
    box: tuple of int
        (top, left, height, width), possibly out of the image
    window: tuple of int
        (top, left, bottom, right), clipped to the image
    """
    i, j = center
    h, w = size
    if not (h > 0 and w > 0):
        raise SizeError(f"predicted size {(h, w)} should be strictly positive")
    Hb, Wb = int(math.ceil(h)), int(math.ceil(w))
    top, left = i - Hb // 2, j - Wb // 2
    window = (max(top, 0), max(left, 0), min(top + Hb, shape[0]), min(left + Wb, shape[1]))
    return (top, left, Hb, Wb), window


class ShapeRefiner(nn.Module):
    """residual network refining assembled shape logits"""

    def __init__(self, width=16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, width, 3, padding=1),
            nn.GroupNorm(width, width),
            nn.ReLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(width, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x[None, None])[0, 0]


def _resize_window(patch, size, rows, cols):
    """
    Rows and columns of the bilinear resize of ``patch`` to ``size``

    Same values as ``F.interpolate(..., mode="bilinear", align_corners=False)``
    followed by a crop, without building the whole resized patch.
    """
    coords = list()
    for (start, stop), n_out in zip((rows, cols), size):
        out = torch.arange(start, stop, dtype=torch.float64, device=patch.device)
        coords.append((out + 0.5) * (2.0 / n_out) - 1.0)
    ii, jj = torch.meshgrid(*coords, indexing="ij")
    grid = torch.stack([jj, ii], dim=-1).to(patch.dtype)
    return F.grid_sample(
        patch[None, None], grid[None], mode="bilinear", padding_mode="border", align_corners=False
    )[0, 0]


def assemble_shape(shape_patch, z, center, size, refiner=None, multiplicative=False):
    """
    Build the mask of a proposal from its shape patch and the saliency map

    Parameters
    ----------
    shape_patch: torch.Tensor of shape (S, S)
        shape logits
    z: torch.Tensor of shape (H, W)
        saliency logits
    center: tuple of int
    size: tuple of float
        predicted box height and width
    refiner: ShapeRefiner, default=None
        residual refinement of the summed logits, skipped if None
    multiplicative: bool, default=False
        return the product of the sigmoids of patch and saliency instead

    Returns
    -------
    mask: torch.Tensor
        values in [0, 1], covering ``window``
    window: tuple of int
        (top, left, bottom, right)

    Raises
    ------
    SizeError
        if the predicted size is not strictly positive
    """
    (top, left, Hb, Wb), window = box_window(center, size, z.shape)
    t0, l0, b0, r0 = window
    if tuple(shape_patch.shape) == (Hb, Wb):
        resized = shape_patch[t0 - top : b0 - top, l0 - left : r0 - left]
    else:
        resized = _resize_window(shape_patch, (Hb, Wb), (t0 - top, b0 - top), (l0 - left, r0 - left))
    crop = z[t0:b0, l0:r0]
    if multiplicative:
        return torch.sigmoid(resized) * torch.sigmoid(crop), window
    logits = resized + crop
    if refiner is not None:
        logits = logits + refiner(logits)
    return torch.sigmoid(logits), window


def size_loss(pred, target):
    """normalised L1 distance between box sizes"""
    return (torch.abs(pred - target) / target).sum()


def _mlp(widths):
    layers = list()
    for d_in, d_out in zip(widths[:-2], widths[1:-1]):
        layers.extend([nn.Linear(d_in, d_out), nn.BatchNorm1d(d_out), nn.ReLU()])
    layers.append(nn.Linear(widths[-2], widths[-1]))
    return nn.Sequential(*layers)


class ConvHead(nn.Module):
    """3x3 convolution, residual 3x3 convolution, then a single-channel 3x3 convolution"""

    def __init__(self, d_in, width=32):
        super().__init__()
        self.conv1 = conv_layer(d_in, width, "batch")
        self.conv2 = conv_layer(width, width, "batch")
        self.out = nn.Conv2d(width, 1, 3, padding=1, padding_mode="reflect")

    def forward(self, x):
        out = self.conv1(x)
        return self.out(out + self.conv2(out))[:, 0]


class PaPs(nn.Module):
    """
    Parcels-as-Points panoptic head

    Parameters
    ----------
    config: PaPsConfig, default=None
        reference configuration if None

    Examples
    --------
    >>> from sksits.encoders import count_parameters
    >>> count_parameters(PaPs())
    182905
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or PaPsConfig()
        d_in = config.decoder_widths[0]
        S = config.shape_size
        self.heatmap_head = ConvHead(d_in)
        self.saliency_head = ConvHead(d_in)
        self.shape_mlp = _mlp((config.feature_dim, config.hidden, S * S))
        self.size_mlp = _mlp((config.feature_dim, config.hidden, 2))
        self.class_mlp = _mlp((config.feature_dim,) + config.class_hidden + (config.n_classes,))
        self.refiner = None if config.multiplicative_saliency else ShapeRefiner()

    def heatmap(self, d1):
        """(B, D_1, H, W) -> (B, H, W) centerness in [0, 1]"""
        return torch.sigmoid(self.heatmap_head(d1))

    def saliency(self, d1):
        """(B, D_1, H, W) -> (B, H, W) saliency logits"""
        return self.saliency_head(d1)

    def _heads(self, features):
        mlps = (self.shape_mlp, self.size_mlp, self.class_mlp)
        # batch statistics are undefined for a single proposal
        single = self.training and features.shape[0] == 1
        if single:
            for mlp in mlps:
                mlp.eval()
        try:
            S = self.config.shape_size
            shape = self.shape_mlp(features).view(-1, S, S)
            size = F.softplus(self.size_mlp(features))
            class_logits = self.class_mlp(features)
        finally:
            if single:
                for mlp in mlps:
                    mlp.train()
        return size, class_logits, shape

    def predict_heads(self, features):
        """
        Parameters
        ----------
        features: torch.Tensor of shape (N, feature_dim)

        Returns
        -------
        size: torch.Tensor of shape (N, 2)
            strictly positive box height and width
        class_probs: torch.Tensor of shape (N, n_classes)
        shape_patch: torch.Tensor of shape (N, S, S)
            shape logits
        """
        size, class_logits, shape = self._heads(features)
        return size, F.softmax(class_logits, dim=1), shape

    def assemble(self, shape_patch, z, center, size):
        """``assemble_shape`` with the refinement network and settings of this head"""
        return assemble_shape(
            shape_patch,
            z,
            center,
            size,
            refiner=self.refiner,
            multiplicative=self.config.multiplicative_saliency,
        )

    def loss(self, d, samples):
        """
        PaPs loss of a batch

        Parameters
        ----------
        d: list of torch.Tensor of shape (B, D_l, H_l, W_l)
            decoder maps, highest resolution first
        samples: list of SITSSample
            annotations of the B images

        Returns
        -------
        PaPsLoss
        """
        d1 = d[0]
        B, _, H, W = d1.shape
        m = self.heatmap(d1)
        z = self.saliency(d1)

        center_sum = m.sum() * 0
        n_parcels = 0
        positions, targets = list(), list()
        for b, sample in enumerate(samples):
            parcels = sorted(sample.valid_parcels(), key=lambda p: p.id)
            target = torch.as_tensor(build_heatmap_target(parcels, H, W), dtype=m.dtype, device=m.device)
            # unnormalised here, the batch is normalised by its total parcel count
            center_sum = center_sum + center_loss(
                m[b], target, 1, beta=self.config.beta, eps=self.config.eps
            )
            n_parcels += len(parcels)
            assigned = assign_centers(parcels, detect_centers(m[b]), pixel_to_parcel_map(parcels, H, W))
            for parcel in parcels:
                if parcel.id in assigned:
                    i, j, _ = assigned[parcel.id]
                    positions.append((b, i, j))
                    targets.append(parcel)
        l_center = center_sum / n_parcels if n_parcels else m.sum() * 0

        zero = m.sum() * 0
        l_class, l_size, l_shape = zero, zero, zero
        if positions:
            size, class_logits, shape = self._heads(extract_multiscale_features(d, positions))
            log_probs = F.log_softmax(class_logits, dim=1)
            class_terms, size_terms, shape_terms = list(), list(), list()
            for k, ((b, i, j), parcel) in enumerate(zip(positions, targets)):
                class_terms.append(-log_probs[k, parcel.crop_class])
                size_target = torch.as_tensor(parcel.bbox_size, dtype=size.dtype, device=size.device)
                size_terms.append(size_loss(size[k], size_target))
                mask, (t0, l0, b0, r0) = self.assemble(shape[k], z[b], (i, j), size[k].tolist())
                shape_target = torch.as_tensor(
                    parcel.mask[t0:b0, l0:r0], dtype=mask.dtype, device=mask.device
                )
                shape_terms.append(F.binary_cross_entropy(mask, shape_target))
            l_class = torch.stack(class_terms).mean()
            l_size = torch.stack(size_terms).mean()
            l_shape = torch.stack(shape_terms).mean()

        logger.debug("%d of %d parcels detected", len(positions), n_parcels)
        return PaPsLoss(
            total=l_center + l_class + l_size + l_shape,
            center=l_center,
            classification=l_class,
            size=l_size,
            shape=l_shape,
            n_parcels=n_parcels,
            n_detected=len(positions),
        )

    def propose(self, d, threshold=0.0, max_proposals=None, sample_ids=None):
        """
        Detect parcels and predict their class and mask

        Parameters
        ----------
        d: list of torch.Tensor of shape (B, D_l, H_l, W_l)
        threshold: float, default=0
            centers of lower quality are discarded
        max_proposals: int, default=None
            keep at most this many proposals per image
        sample_ids: list of str, default=None

        Returns
        -------
        list of ProposalSet
        """
        d1 = d[0]
        B, _, H, W = d1.shape
        sample_ids = sample_ids or [""] * B
        out = list()
        with torch.no_grad():
            m = self.heatmap(d1)
            z = self.saliency(d1)
            for b in range(B):
                centers = [c for c in detect_centers(m[b]) if c[2] >= threshold]
                if max_proposals is not None:
                    centers = centers[:max_proposals]
                proposals = list()
                if centers:
                    features = extract_multiscale_features(d, [(b, i, j) for i, j, _ in centers])
                    size, probs, shape = self.predict_heads(features)
                    for k, (i, j, q) in enumerate(centers):
                        mask, window = self.assemble(shape[k], z[b], (i, j), size[k].tolist())
                        proposals.append(
                            Proposal(
                                center=(i, j),
                                quality=q,
                                size=tuple(size[k].tolist()),
                                class_probs=probs[k].double().cpu().numpy(),
                                shape_patch=shape[k].cpu().numpy(),
                                mask=mask.cpu().numpy(),
                                window=window,
                            )
                        )
                logger.debug("%d proposals on image %d", len(proposals), b)
                out.append(ProposalSet(proposals, (H, W), sample_ids[b]))
        return out


class PanopticUTAE(nn.Module):
    """
    U-TAE backbone without semantic head, followed by a PaPs head

    Parameters
    ----------
    utae_config: UTAEConfig, default=None
        its ``out_conv`` is dropped
    paps_config: PaPsConfig, default=None
        its decoder widths are taken from the backbone
    """

    def __init__(self, utae_config=None, paps_config=None):
        super().__init__()
        utae_config = utae_config or UTAEConfig()
        paps_config = paps_config or PaPsConfig()
        utae_config = replace(utae_config, out_conv=())
        paps_config = replace(paps_config, decoder_widths=utae_config.decoder_widths)
        self.backbone = UTAE(utae_config)
        self.head = PaPs(paps_config)

    def forward(self, images, dates, pad_mask):
        """decoder maps, highest resolution first"""
        _, pyramid = self.backbone(images, dates, pad_mask, return_pyramid=True)
        return pyramid.d


def rle_encode(mask):
    """
    Run lengths of a binary mask in row-major order, starting with a run of zeros

    >>> rle_encode(np.array([[0, 1, 1], [1, 0, 0]]))
    [1, 3, 2]
    """
    flat = np.asarray(mask, dtype=bool).ravel()
    changes = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return counts


def rle_decode(counts, shape):
    """inverse of ``rle_encode``"""
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(shape)


def dump_proposals(proposal_sets, path, binary_threshold=0.4):
    """
    Write proposals as JSON lines, one proposal per line

    Masks are binarised with ``binary_threshold`` and run-length encoded
    over their window.
    """
    n_lines = 0
    with open(path, "w") as f:
        for proposal_set in proposal_sets:
            for rank, p in enumerate(proposal_set):
                t0, l0, b0, r0 = p.window
                record = dict(
                    sample_id=proposal_set.sample_id,
                    rank=rank,
                    center=list(p.center),
                    quality=p.quality,
                    size=list(p.size),
                    crop_class=p.crop_class,
                    window=list(p.window),
                    mask=dict(
                        size=[b0 - t0, r0 - l0],
                        counts=rle_encode(p.mask >= binary_threshold),
                    ),
                )
                f.write(json.dumps(record) + "\n")
                n_lines += 1
    logger.info("%d proposals written to %s", n_lines, path)
    return n_lines
