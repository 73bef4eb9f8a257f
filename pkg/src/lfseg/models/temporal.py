"""Satellite time-series branch: U-shaped network with temporal attention.

Every frame passes through one shared convolutional encoder. A lightweight
temporal attention module with a learnable master query per head collapses the
time axis at the lowest resolution; its attention masks are bilinearly
upsampled and reused to collapse every higher level via channel groups. A
convolutional decoder with skip connections then produces class logits at the
input resolution. `align_to_aerial` maps those outputs onto the aerial grid by
center-cropping the corresponding footprint and upsampling.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange, repeat

from ..core import ScaleProfile


@dataclass
class TemporalBranchConfig:
    in_channels: int = 10
    widths: tuple[int, ...] = (64, 64, 128, 128)
    n_heads: int = 16
    d_k: int = 4
    d_model: int = 512
    mlp_widths: tuple[int, ...] = (512, 128)
    n_classes: int = 13
    pad_value: float = 0.0
    encoder_groups: int = 4

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)
        if not self.widths:
            raise ValueError("widths must be non-empty")
        if self.mlp_widths and self.mlp_widths[-1] != self.widths[-1]:
            raise ValueError(
                f"attention output width {self.mlp_widths[-1]} must equal the "
                f"deepest encoder width {self.widths[-1]}"
            )
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide evenly over heads")
        for w in self.widths:
            if w % self.n_heads:
                raise ValueError(
                    f"every width must divide over {self.n_heads} heads, got {w}"
                )

    @property
    def n_levels(self) -> int:
        return len(self.widths)

    @classmethod
    def toy(cls, **overrides) -> "TemporalBranchConfig":
        kw = dict(
            widths=(16, 16, 32, 32),
            n_heads=4,
            d_k=4,
            d_model=64,
            mlp_widths=(32,),
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["widths"] = list(self.widths)
        d["mlp_widths"] = list(self.mlp_widths)
        return d

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class TemporalBatch:
    """Padded frame sequences with their acquisition days and validity flags."""

    frames: torch.Tensor      # [B, T, C, h, w] float
    day_of_year: torch.Tensor  # [B, T] integer in [1, 366]
    validity: torch.Tensor    # [B, T] bool, False at padded positions

    def __post_init__(self):
        if self.frames.ndim != 5:
            raise ValueError(f"frames must be [B,T,C,h,w], got {tuple(self.frames.shape)}")
        b, t = self.frames.shape[:2]
        if self.day_of_year.shape != (b, t) or self.validity.shape != (b, t):
            raise ValueError("day_of_year and validity must both be [B, T]")
        doy_valid = self.day_of_year[self.validity]
        if doy_valid.numel() and (doy_valid.min() < 1 or doy_valid.max() > 366):
            raise ValueError("day_of_year outside [1, 366]")
        if not bool(self.validity.any(dim=1).all()):
            raise ValueError("every sample needs at least one valid frame")


def _conv_layer(nkernels: Sequence[int], norm: str, groups: int = 4,
                k: int = 3, s: int = 1, p: int = 1) -> nn.Sequential:
    layers: list[nn.Module] = []
    for c_in, c_out in zip(nkernels, nkernels[1:]):
        layers.append(nn.Conv2d(c_in, c_out, k, stride=s, padding=p))
        if norm == "group":
            layers.append(nn.GroupNorm(min(groups, c_out), c_out))
        elif norm == "batch":
            layers.append(nn.BatchNorm2d(c_out))
        layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class DownBlock(nn.Module):
    """Strided halving conv, then a residual pair of 3x3 convs."""

    def __init__(self, d_in: int, d_out: int, groups: int):
        super().__init__()
        self.down = _conv_layer([d_in, d_in], "group", groups, k=4, s=2, p=1)
        self.conv1 = _conv_layer([d_in, d_out], "group", groups)
        self.conv2 = _conv_layer([d_out, d_out], "group", groups)

    def forward(self, x):
        x = self.conv1(self.down(x))
        return x + self.conv2(x)


class UpBlock(nn.Module):
    """Transposed-conv doubling plus skip concatenation and a residual pair."""

    def __init__(self, d_in: int, d_out: int, d_skip: int):
        super().__init__()
        self.skip_conv = nn.Sequential(
            nn.Conv2d(d_skip, d_skip, 1), nn.BatchNorm2d(d_skip), nn.ReLU()
        )
        self.up = nn.Sequential(
            nn.ConvTranspose2d(d_in, d_out, 4, stride=2, padding=1),
            nn.BatchNorm2d(d_out),
            nn.ReLU(),
        )
        self.conv1 = _conv_layer([d_out + d_skip, d_out], "batch")
        self.conv2 = _conv_layer([d_out, d_out], "batch")

    def forward(self, x, skip):
        x = torch.cat([self.up(x), self.skip_conv(skip)], dim=1)
        x = self.conv1(x)
        return x + self.conv2(x)


class SinusoidalDayEncoding(nn.Module):
    """Sinusoidal positional table indexed by day of year."""

    def __init__(self, dim: int, period: float = 1000.0):
        super().__init__()
        denom = torch.pow(
            torch.tensor(period), 2.0 * (torch.arange(dim) // 2).float() / dim
        )
        self.register_buffer("denom", denom, persistent=False)

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        table = positions[..., None].to(self.denom.dtype) / self.denom
        enc = torch.empty_like(table)
        enc[..., 0::2] = torch.sin(table[..., 0::2])
        enc[..., 1::2] = torch.cos(table[..., 1::2])
        return enc


class MasterQueryAttention(nn.Module):
    """Per-pixel temporal attention with one learnable query per head.

    Keys come from a linear map of the (positional-encoded) embeddings; values
    are the embeddings themselves, split across heads. Invalid timesteps get
    exactly zero weight so padded frames cannot influence the output.
    """

    def __init__(self, cfg: TemporalBranchConfig):
        super().__init__()
        self.cfg = cfg
        d_in = cfg.widths[-1]
        self.in_norm = nn.GroupNorm(cfg.n_heads, d_in)
        self.inconv = nn.Conv1d(d_in, cfg.d_model, 1)
        self.pos_enc = SinusoidalDayEncoding(cfg.d_model)
        self.query = nn.Parameter(torch.empty(cfg.n_heads, cfg.d_k))
        nn.init.normal_(self.query, mean=0.0, std=math.sqrt(2.0 / cfg.d_k))
        self.to_keys = nn.Linear(cfg.d_model, cfg.n_heads * cfg.d_k)
        dims = (cfg.d_model,) + cfg.mlp_widths
        mlp: list[nn.Module] = []
        for a, b in zip(dims, dims[1:]):
            mlp += [nn.Linear(a, b), nn.BatchNorm1d(b), nn.ReLU()]
        self.mlp = nn.Sequential(*mlp)
        self.out_norm = nn.GroupNorm(cfg.n_heads, cfg.mlp_widths[-1])

    def forward(self, seq: torch.Tensor, day_of_year: torch.Tensor,
                validity: torch.Tensor):
        b, t, c, h, w = seq.shape
        tokens = rearrange(seq, "b t c h w -> (b h w) c t")
        tokens = self.inconv(self.in_norm(tokens))
        tokens = rearrange(tokens, "n d t -> n t d")
        doy = repeat(day_of_year, "b t -> (b h w) t", h=h, w=w)
        tokens = tokens + self.pos_enc(doy)

        valid = repeat(validity, "b t -> (b h w) t", h=h, w=w)
        keys = rearrange(self.to_keys(tokens), "n t (g d) -> g n t d",
                         g=self.cfg.n_heads)
        scores = torch.einsum("gd,gntd->gnt", self.query, keys)
        scores = scores / math.sqrt(self.cfg.d_k)
        scores = scores.masked_fill(~valid.unsqueeze(0), float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        weights = torch.where(valid.unsqueeze(0), weights,
                              torch.zeros((), dtype=weights.dtype,
                                          device=weights.device))

        values = rearrange(tokens, "n t (g d) -> g n t d", g=self.cfg.n_heads)
        heads = torch.einsum("gnt,gntd->gnd", weights, values)
        out = self.out_norm(self.mlp(rearrange(heads, "g n d -> n (g d)")))
        out = rearrange(out, "(b h w) c -> b c h w", b=b, h=h, w=w)
        attn = rearrange(weights, "g (b h w) t -> b g t h w", b=b, h=h, w=w)
        return out, attn


def _collapse_with_attention(seq: torch.Tensor, attn: torch.Tensor,
                             n_heads: int) -> torch.Tensor:
    """Collapse [B,T,C,h,w] with upsampled attention, one weight set per
    contiguous channel group."""
    b, t, c, h, w = seq.shape
    flat = rearrange(attn, "b g t hl wl -> b (g t) hl wl")
    up = F.interpolate(flat, size=(h, w), mode="bilinear", align_corners=False)
    up = rearrange(up, "b (g t) h w -> b g t h w", g=n_heads)
    groups = rearrange(seq, "b t (g d) h w -> b g t d h w", g=n_heads)
    out = torch.einsum("bgthw,bgtdhw->bgdhw", up, groups)
    return rearrange(out, "b g d h w -> b (g d) h w")


class TemporalBranch(nn.Module):
    def __init__(self, cfg: TemporalBranchConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        self.in_conv = _conv_layer(
            [cfg.in_channels, widths[0], widths[0]], "group", cfg.encoder_groups
        )
        self.down_blocks = nn.ModuleList(
            DownBlock(widths[i], widths[i + 1], cfg.encoder_groups)
            for i in range(len(widths) - 1)
        )
        self.temporal_attention = MasterQueryAttention(cfg)
        self.up_blocks = nn.ModuleList(
            UpBlock(d_in=widths[i + 1], d_out=widths[i], d_skip=widths[i])
            for i in reversed(range(len(widths) - 1))
        )
        self.out_conv = nn.Sequential(
            nn.Conv2d(widths[0], 32, 3, padding=1),
            nn.BatchNorm2d(32),
            nn.ReLU(),
            nn.Conv2d(32, cfg.n_classes, 3, padding=1),
        )

    def encode_frames(self, batch: TemporalBatch) -> list[torch.Tensor]:
        """Run the shared spatial encoder on every frame independently."""
        b, t, c, h, w = batch.frames.shape
        if c != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} bands, got {c}")
        if h != w:
            raise ValueError(f"expected square frames, got {h}x{w}")
        if h % (1 << (self.cfg.n_levels - 1)):
            raise ValueError(
                f"frame size {h} not divisible by 2^{self.cfg.n_levels - 1}"
            )
        x = rearrange(batch.frames, "b t c h w -> (b t) c h w")
        feats = [self.in_conv(x)]
        for down in self.down_blocks:
            feats.append(down(feats[-1]))
        return [rearrange(f, "(b t) c h w -> b t c h w", b=b) for f in feats]

    def collapse_temporal(self, level_sequences: Sequence[torch.Tensor],
                          day_of_year: torch.Tensor, validity: torch.Tensor):
        """Collapse every level's time axis; returns (maps, attention).

        Attention is computed once at the lowest resolution and reused,
        upsampled, for the higher levels. Padded frames are zeroed before
        aggregation so their stored contents can never reach the output.
        """
        if not bool(validity.any(dim=1).all()):
            bad = (~validity.any(dim=1)).nonzero().flatten().tolist()
            raise ValueError(f"all timesteps invalid for batch samples {bad}")
        gate = validity[:, :, None, None, None]
        zero = torch.zeros((), dtype=level_sequences[0].dtype,
                           device=level_sequences[0].device)
        seqs = [torch.where(gate, s, zero) for s in level_sequences]
        collapsed_low, attn = self.temporal_attention(
            seqs[-1], day_of_year, validity
        )
        maps = [
            _collapse_with_attention(s, attn, self.cfg.n_heads)
            for s in seqs[:-1]
        ]
        maps.append(collapsed_low)
        return maps, attn

    def decode_to_logits(self, maps: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(maps) != self.cfg.n_levels:
            raise ValueError(
                f"expected {self.cfg.n_levels} collapsed maps, got {len(maps)}"
            )
        x = maps[-1]
        for up, skip in zip(self.up_blocks, reversed(maps[:-1])):
            x = up(x, skip)
        return self.out_conv(x)

    def forward(self, batch: TemporalBatch) -> torch.Tensor:
        seqs = self.encode_frames(batch)
        maps, _ = self.collapse_temporal(seqs, batch.day_of_year, batch.validity)
        return self.decode_to_logits(maps)

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def align_to_aerial(x: torch.Tensor, profile: ScaleProfile,
                    renormalize: Optional[bool] = None) -> torch.Tensor:
    """Map SITS-resolution output onto the aerial grid.

    Center-crops to the pixels whose footprint matches the aerial patch, then
    bilinearly upsamples. Probability maps are renormalized per pixel after
    interpolation; pass `renormalize` explicitly to override the detection.
    """
    if x.ndim != 4:
        raise ValueError(f"expected [B,C,h,w], got {tuple(x.shape)}")
    b, c, h, w = x.shape
    if h != profile.sits_size or w != profile.sits_size:
        raise ValueError(
            f"spatial size {h}x{w} does not match profile sits_size "
            f"{profile.sits_size}"
        )
    crop = profile.center_crop
    if crop > h:
        raise ValueError(f"center crop {crop} larger than input {h}")
    start = (h - crop) // 2
    cropped = x[:, :, start:start + crop, start:start + crop]
    out = F.interpolate(cropped, size=(profile.aerial_size, profile.aerial_size),
                        mode="bilinear", align_corners=False)
    if renormalize is None:
        sums = x.sum(dim=1)
        renormalize = bool(x.min() >= 0) and bool(
            torch.allclose(sums, torch.ones_like(sums), atol=1e-4)
        )
    if renormalize:
        out = out.clamp_min(0.0)
        out = out / out.sum(dim=1, keepdim=True).clamp_min(
            torch.finfo(out.dtype).tiny
        )
    return out
