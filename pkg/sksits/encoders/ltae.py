"""Lightweight temporal attention encoder, applied pixel-wise.

Every pixel of the lowest resolution feature map carries its own sequence.
A learned master query per head attends to keys computed from the sequence,
so that one temporal attention mask per head and per pixel comes out,
along with the attention-weighted sequence embedding.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import DegenerateSequence, ShapeError


class PositionalEncoder(nn.Module):
    """Sinusoidal encoding of acquisition days

    Parameters
    ----------
    d: int
        encoding dimension for one head
    period: int, default=1000
        base period, in days
    repeat: int, default=1
        number of copies concatenated along the feature axis, one per head
    """

    def __init__(self, d, period=1000, repeat=1):
        super().__init__()
        self.d = d
        self.period = period
        self.repeat = repeat
        denom = torch.pow(float(period), 2 * (torch.arange(d) // 2).double() / d)
        self.register_buffer("denom", denom, persistent=False)

    def forward(self, days):
        """(B, T) day offsets -> (B, T, d * repeat) encodings"""
        table = days[..., None].to(self.denom.dtype) / self.denom
        even = torch.arange(self.d, device=table.device) % 2 == 0
        table = torch.where(even, torch.sin(table), torch.cos(table))
        return torch.cat([table] * self.repeat, dim=-1)


def masked_group_norm(x, pad_mask, norm):
    """
    Group normalisation of sequences, with statistics over real timesteps only

    Parameters
    ----------
    x: torch.Tensor of shape (N, T, C)
    pad_mask: torch.Tensor of shape (N, T)
        True on real timesteps
    norm: nn.GroupNorm
        provides the number of groups, epsilon, and affine parameters

    Returns
    -------
    torch.Tensor of shape (N, T, C)
        zero on padded timesteps
    """
    N, T, C = x.shape
    G = norm.num_groups
    groups = x.view(N, T, G, C // G)
    mask = pad_mask.view(N, T, 1, 1).to(x.dtype)
    count = mask.sum(dim=1, keepdim=True) * (C // G)
    mean = (groups * mask).sum(dim=(1, 3), keepdim=True) / count
    var = (((groups - mean) * mask) ** 2).sum(dim=(1, 3), keepdim=True) / count
    out = ((groups - mean) / torch.sqrt(var + norm.eps)).view(N, T, C)
    if norm.affine:
        out = out * norm.weight + norm.bias
    return out * mask.view(N, T, 1)


class MasterQueryAttention(nn.Module):
    """Multi-head attention with one learned query per head

    Parameters
    ----------
    n_head: int
    d_k: int
        key-query dimension
    d_in: int
        input dimension, split evenly between heads to form values
    """

    def __init__(self, n_head, d_k, d_in):
        super().__init__()
        self.n_head = n_head
        self.d_k = d_k
        self.Q = nn.Parameter(torch.zeros((n_head, d_k)))
        nn.init.normal_(self.Q, mean=0, std=np.sqrt(2.0 / d_k))
        self.fc1_k = nn.Linear(d_in, n_head * d_k)
        nn.init.normal_(self.fc1_k.weight, mean=0, std=np.sqrt(2.0 / d_k))
        self.temperature = float(np.sqrt(d_k))

    def forward(self, v, pad_mask):
        """
        v: (N, T, d_in), pad_mask: (N, T) -> output (N, d_in), attention (N, n_head, T)
        """
        N, T, d_in = v.shape
        k = self.fc1_k(v).view(N, T, self.n_head, self.d_k)
        logits = torch.einsum("gd,ntgd->ngt", self.Q, k) / self.temperature
        logits = logits.masked_fill(~pad_mask[:, None, :], float("-inf"))
        attn = F.softmax(logits, dim=-1)
        values = v.view(N, T, self.n_head, d_in // self.n_head)
        out = torch.einsum("ngt,ntgd->ngd", attn, values)
        return out.reshape(N, d_in), attn


class LTAE2d(nn.Module):
    """
    Lightweight Temporal Attention Encoder for image time series

    Parameters
    ----------
    in_channels: int, default=128
    n_head: int, default=16
    d_k: int, default=4
    d_model: int, default=256
        width of the attention input, after a 1x1 projection
    mlp: tuple of int, default=(256, 128)
        widths of the output perceptron, first one equal to ``d_model``
    dropout: float, default=0.2
    positional_period: int, default=1000

    References
    ----------
    .. [1] Garnot, V. S. F. and Landrieu, L.
       "Lightweight Temporal Self-Attention for Classifying Satellite Images Time Series", 2020
    """

    def __init__(
        self,
        in_channels=128,
        n_head=16,
        d_k=4,
        d_model=256,
        mlp=(256, 128),
        dropout=0.2,
        positional_period=1000,
    ):
        super().__init__()
        if mlp[0] != d_model or d_model % n_head or in_channels % n_head:
            raise ShapeError(
                f"attention widths are not compatible: in_channels={in_channels}, "
                f"d_model={d_model}, n_head={n_head}, mlp={mlp}"
            )
        self.n_head = n_head
        self.in_norm = nn.GroupNorm(num_groups=n_head, num_channels=in_channels)
        self.inconv = nn.Conv1d(in_channels, d_model, 1)
        self.positional_encoder = PositionalEncoder(
            d_model // n_head, period=positional_period, repeat=n_head
        )
        self.attention_heads = MasterQueryAttention(n_head=n_head, d_k=d_k, d_in=d_model)

        layers = list()
        for d_in, d_out in zip(mlp[:-1], mlp[1:]):
            layers.extend([nn.Linear(d_in, d_out), nn.BatchNorm1d(d_out), nn.ReLU()])
        self.mlp = nn.Sequential(*layers)
        self.dropout = nn.Dropout(dropout)
        self.out_norm = nn.GroupNorm(num_groups=n_head, num_channels=mlp[-1])

    def forward(self, x, dates, pad_mask):
        """
        Parameters
        ----------
        x: torch.Tensor of shape (B, T, C, H, W)
        dates: torch.Tensor of shape (B, T)
        pad_mask: torch.Tensor of shape (B, T), True on real acquisitions

        Returns
        -------
        out: torch.Tensor of shape (B, mlp[-1], H, W)
        attn: torch.Tensor of shape (B, n_head, T, H, W)
            sums to 1 over real acquisitions, 0 on padded ones

        Raises
        ------
        DegenerateSequence
            if a sample has no real acquisition
        """
        B, T, C, H, W = x.shape
        pad_mask = pad_mask.bool()
        if not pad_mask.any(dim=1).all():
            empty = torch.nonzero(~pad_mask.any(dim=1)).flatten().tolist()
            raise DegenerateSequence(f"samples {empty} have no real acquisition")

        seq = x.permute(0, 3, 4, 1, 2).reshape(B * H * W, T, C)
        mask = pad_mask[:, None, None, :].expand(B, H, W, T).reshape(B * H * W, T)

        seq = masked_group_norm(seq, mask, self.in_norm)
        seq = self.inconv(seq.transpose(1, 2)).transpose(1, 2)
        positions = self.positional_encoder(dates).to(seq.dtype)
        seq = seq + positions[:, None, None].expand(B, H, W, T, -1).reshape(B * H * W, T, -1)

        out, attn = self.attention_heads(seq, mask)
        out = self.out_norm(self.dropout(self.mlp(out)))

        out = out.view(B, H, W, -1).permute(0, 3, 1, 2)
        attn = attn.view(B, H, W, self.n_head, T).permute(0, 3, 4, 1, 2)
        return out, attn
