"""Aerial branch: hierarchical multi-axis attention encoder with a
global-local transformer decoder, emitting class logits at input resolution.

The encoder stem halves resolution with 3x3 convolutions; each of the four
body stages halves resolution again while doubling channels. Every stage block
chains an MBConv unit, windowed block attention over non-overlapping PxP
partitions, and grid attention over a dilated GxG partition. The decoder runs
blocks with a parallel attentional global path and convolutional local path,
merging encoder skips through learnable scalar weighted sums, and a final head
upsamples to full resolution.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange


@dataclass
class AerialBranchConfig:
    in_channels: int = 5
    stem_channels: int = 64
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    blocks_per_stage: tuple[int, ...] = (2, 2, 5, 2)
    attention_window: int = 8
    head_dim: int = 32
    mlp_ratio: float = 4.0
    decoder_channels: int = 64
    n_classes: int = 13
    pretrained_weights_path: Optional[str] = None

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("expected 4 stages")
        for a, b in zip(self.stage_channels, self.stage_channels[1:]):
            if b != 2 * a:
                raise ValueError(f"stage channels must double, got {self.stage_channels}")
        if self.attention_window < 1 or self.attention_window & (self.attention_window - 1):
            raise ValueError("attention_window must be a power of two")
        if any(c % self.head_dim for c in self.stage_channels):
            raise ValueError("stage channels must be divisible by head_dim")

    @classmethod
    def toy(cls, **overrides) -> "AerialBranchConfig":
        """Desk-scale ladder: same halving/doubling rules, tiny widths."""
        kw = dict(
            stem_channels=32,
            stage_channels=(32, 64, 128, 256),
            blocks_per_stage=(1, 1, 1, 1),
            attention_window=4,
            decoder_channels=32,
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["stage_channels"] = list(self.stage_channels)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _init_weights(module: nn.Module):
    if isinstance(module, (nn.Linear,)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.BatchNorm2d, nn.LayerNorm, nn.GroupNorm)):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, rd_channels: int):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, rd_channels, 1)
        self.fc2 = nn.Conv2d(rd_channels, channels, 1)

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        s = self.fc2(F.silu(self.fc1(s)))
        return x * torch.sigmoid(s)


class MBConv(nn.Module):
    """Pre-norm inverted bottleneck with squeeze-excitation, stride 1 or 2."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1, expand: float = 4.0):
        super().__init__()
        mid = int(c_out * expand)
        self.pre_norm = nn.BatchNorm2d(c_in)
        self.conv_expand = nn.Conv2d(c_in, mid, 1, bias=False)
        self.norm1 = nn.BatchNorm2d(mid)
        self.conv_dw = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, groups=mid,
                                 bias=False)
        self.norm2 = nn.BatchNorm2d(mid)
        self.se = SqueezeExcite(mid, max(4, c_in // 4))
        self.conv_project = nn.Conv2d(mid, c_out, 1, bias=False)
        if stride == 2 or c_in != c_out:
            short = []
            if stride == 2:
                short.append(nn.AvgPool2d(2))
            short.append(nn.Conv2d(c_in, c_out, 1))
            self.shortcut = nn.Sequential(*short)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = self.pre_norm(x)
        h = F.gelu(self.norm1(self.conv_expand(h)))
        h = F.gelu(self.norm2(self.conv_dw(h)))
        h = self.se(h)
        h = self.conv_project(h)
        return h + self.shortcut(x)


class RelPosBias(nn.Module):
    """Learned relative position bias over square token windows.

    The table covers the configured window; smaller (clamped) windows reuse
    its central entries through cached index maps.
    """

    def __init__(self, window: int, n_heads: int):
        super().__init__()
        self.window = window
        self.n_heads = n_heads
        self.table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, n_heads))
        nn.init.trunc_normal_(self.table, std=0.02)
        self._index_cache: dict[int, torch.Tensor] = {}

    def _index(self, size: int) -> torch.Tensor:
        idx = self._index_cache.get(size)
        if idx is None:
            coords = torch.stack(
                torch.meshgrid(
                    torch.arange(size), torch.arange(size), indexing="ij"
                )
            ).flatten(1)
            rel = coords[:, :, None] - coords[:, None, :] + self.window - 1
            idx = rel[0] * (2 * self.window - 1) + rel[1]
            self._index_cache[size] = idx
        return idx

    def forward(self, size: int) -> torch.Tensor:
        idx = self._index(size).to(self.table.device)
        n = size * size
        bias = self.table[idx.reshape(-1)].reshape(n, n, self.n_heads)
        return bias.permute(2, 0, 1).contiguous()


class WindowAttention(nn.Module):
    """Multi-head self-attention over flattened square windows."""

    def __init__(self, dim: int, head_dim: int, window: int):
        super().__init__()
        self.n_heads = dim // head_dim
        self.head_dim = head_dim
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.rel_pos = RelPosBias(window, self.n_heads)

    def forward(self, tokens: torch.Tensor, size: int) -> torch.Tensor:
        b, n, c = tokens.shape
        qkv = self.qkv(tokens).reshape(b, n, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        bias = self.rel_pos(size).unsqueeze(0)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=bias)
        out = out.transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def _effective_window(window: int, size: int) -> int:
    w = min(window, size)
    if size % w:
        raise ValueError(f"feature size {size} not tiled by window {w}")
    return w


class AxisAttention(nn.Module):
    """One attention + MLP pair, on either the block axis or the grid axis.

    Block mode partitions the map into non-overlapping PxP windows; grid mode
    attends over a dilated GxG partition spanning the whole map.
    """

    def __init__(self, dim: int, head_dim: int, window: int, grid: bool,
                 mlp_ratio: float):
        super().__init__()
        self.window = window
        self.grid = grid
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, head_dim, window)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, hh, ww = x.shape
        w = _effective_window(self.window, hh)
        if self.grid:
            tokens = rearrange(x, "b c (g1 p1) (g2 p2) -> (b p1 p2) (g1 g2) c",
                               g1=w, g2=w)
        else:
            tokens = rearrange(x, "b c (p1 w1) (p2 w2) -> (b p1 p2) (w1 w2) c",
                               w1=w, w2=w)
        tokens = tokens + self.attn(self.norm1(tokens), w)
        tokens = tokens + self.mlp(self.norm2(tokens))
        if self.grid:
            return rearrange(tokens, "(b p1 p2) (g1 g2) c -> b c (g1 p1) (g2 p2)",
                             b=b, p1=hh // w, p2=ww // w, g1=w)
        return rearrange(tokens, "(b p1 p2) (w1 w2) c -> b c (p1 w1) (p2 w2)",
                         b=b, p1=hh // w, p2=ww // w, w1=w)


class MultiAxisBlock(nn.Module):
    """MBConv followed by block attention and grid attention."""

    def __init__(self, c_in: int, c_out: int, stride: int, window: int,
                 head_dim: int, mlp_ratio: float):
        super().__init__()
        self.mbconv = MBConv(c_in, c_out, stride=stride)
        self.block_attn = AxisAttention(c_out, head_dim, window, grid=False,
                                        mlp_ratio=mlp_ratio)
        self.grid_attn = AxisAttention(c_out, head_dim, window, grid=True,
                                       mlp_ratio=mlp_ratio)

    def forward(self, x):
        x = self.mbconv(x)
        x = self.block_attn(x)
        x = self.grid_attn(x)
        return x


class MultiAxisEncoder(nn.Module):
    """Stem plus four stages; each stage halves resolution, doubles channels."""

    def __init__(self, cfg: AerialBranchConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.in_channels, cfg.stem_channels, 3, stride=2, padding=1),
            nn.BatchNorm2d(cfg.stem_channels),
            nn.GELU(),
            nn.Conv2d(cfg.stem_channels, cfg.stem_channels, 3, padding=1),
        )
        stages = []
        c_prev = cfg.stem_channels
        for c_out, depth in zip(cfg.stage_channels, cfg.blocks_per_stage):
            blocks = []
            for i in range(depth):
                blocks.append(
                    MultiAxisBlock(
                        c_prev if i == 0 else c_out,
                        c_out,
                        stride=2 if i == 0 else 1,
                        window=cfg.attention_window,
                        head_dim=cfg.head_dim,
                        mlp_ratio=cfg.mlp_ratio,
                    )
                )
            stages.append(nn.Sequential(*blocks))
            c_prev = c_out
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        b, c, h, w = x.shape
        if h != w:
            raise ValueError(f"expected square input, got {h}x{w}")
        if h % 32:
            raise ValueError(f"input size {h} must be divisible by 32")
        if c != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} channels, got {c}")
        x = self.stem(x)
        pyramid = []
        for stage in self.stages:
            x = stage(x)
            pyramid.append(x)
        return pyramid


class LocalConvPath(nn.Module):
    """Convolutional local context: parallel 3x3 and 1x1 paths, summed."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv3 = nn.Conv2d(dim, dim, 3, padding=1, bias=False)
        self.conv1 = nn.Conv2d(dim, dim, 1, bias=False)
        self.norm = nn.BatchNorm2d(dim)

    def forward(self, x):
        return self.norm(self.conv3(x) + self.conv1(x))


class GlobalAttentionPath(nn.Module):
    """Windowed attention global context for the decoder blocks."""

    def __init__(self, dim: int, head_dim: int, window: int):
        super().__init__()
        self.window = window
        self.attn = WindowAttention(dim, max(head_dim // 2, 16), window)

    def forward(self, x):
        b, c, hh, ww = x.shape
        w = _effective_window(self.window, hh)
        tokens = rearrange(x, "b c (p1 w1) (p2 w2) -> (b p1 p2) (w1 w2) c",
                           w1=w, w2=w)
        tokens = self.attn(tokens, w)
        return rearrange(tokens, "(b p1 p2) (w1 w2) c -> b c (p1 w1) (p2 w2)",
                         b=b, p1=hh // w, p2=ww // w, w1=w)


class GlobalLocalBlock(nn.Module):
    """Decoder block: attentional global path + convolutional local path."""

    def __init__(self, dim: int, head_dim: int, window: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.BatchNorm2d(dim)
        self.global_path = GlobalAttentionPath(dim, head_dim, window)
        self.local_path = LocalConvPath(dim)
        self.norm2 = nn.BatchNorm2d(dim)
        hidden = int(dim * mlp_ratio)
        self.ffn = nn.Sequential(
            nn.Conv2d(dim, hidden, 1), nn.GELU(), nn.Conv2d(hidden, dim, 1)
        )

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.global_path(h) + self.local_path(h)
        x = x + self.ffn(self.norm2(x))
        return x


class WeightedSkipFusion(nn.Module):
    """Learnable scalar weighted sum of decoder and projected skip features."""

    def __init__(self, skip_channels: int, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(skip_channels, dim, 1)
        self.weights = nn.Parameter(torch.ones(2))

    def forward(self, dec, skip):
        return self.weights[0] * dec + self.weights[1] * self.proj(skip)


class GlobalLocalDecoder(nn.Module):
    def __init__(self, cfg: AerialBranchConfig):
        super().__init__()
        d = cfg.decoder_channels
        c1, c2, c3, c4 = cfg.stage_channels
        self.pre = nn.Conv2d(c4, d, 1)
        self.block4 = GlobalLocalBlock(d, cfg.head_dim, cfg.attention_window,
                                       cfg.mlp_ratio)
        self.fuse3 = WeightedSkipFusion(c3, d)
        self.block3 = GlobalLocalBlock(d, cfg.head_dim, cfg.attention_window,
                                       cfg.mlp_ratio)
        self.fuse2 = WeightedSkipFusion(c2, d)
        self.block2 = GlobalLocalBlock(d, cfg.head_dim, cfg.attention_window,
                                       cfg.mlp_ratio)
        self.fuse1 = WeightedSkipFusion(c1, d)
        self.refine = nn.Sequential(
            nn.Conv2d(d, d, 3, padding=1, bias=False),
            nn.BatchNorm2d(d),
            nn.GELU(),
        )
        self.head = nn.Conv2d(d, cfg.n_classes, 1)

    def forward(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(pyramid) != 4:
            raise ValueError(f"expected a 4-level pyramid, got {len(pyramid)}")
        s1, s2, s3, s4 = pyramid
        x = self.block4(self.pre(s4))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.block3(self.fuse3(x, s3))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.block2(self.fuse2(x, s2))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.refine(self.fuse1(x, s1))
        logits = self.head(x)
        return F.interpolate(logits, scale_factor=4, mode="bilinear",
                             align_corners=False)


class AerialBranch(nn.Module):
    """Full aerial segmentation network: encoder pyramid + decoder head."""

    def __init__(self, cfg: AerialBranchConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = MultiAxisEncoder(cfg)
        self.decoder = GlobalLocalDecoder(cfg)
        self.apply(_init_weights)
        if cfg.pretrained_weights_path:
            self.load_pretrained(cfg.pretrained_weights_path)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.encoder(x)

    def decode(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.decoder(pyramid)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def load_pretrained(self, path: str):
        """Load externally supplied weights; a 3-channel stem is widened."""
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        key = "encoder.stem.0.weight"
        if key in state and state[key].shape[1] == 3 and self.cfg.in_channels == 5:
            state[key] = adapt_input_layer(state[key], self.cfg.in_channels)
        missing, unexpected = self.load_state_dict(state, strict=False)
        if missing or unexpected:
            raise ValueError(
                f"pretrained weights mismatch: missing={missing[:3]} "
                f"unexpected={unexpected[:3]}"
            )


def adapt_input_layer(weights_3ch: torch.Tensor, target_channels: int = 5,
                      generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Widen a pretrained 3-channel first conv to `target_channels`.

    RGB kernel slices are copied verbatim; the added channels are drawn from
    the same truncated-normal family used when training from scratch.
    """
    if weights_3ch.ndim != 4 or weights_3ch.shape[1] != 3:
        raise ValueError(f"expected [C_out, 3, k, k] weights, got {tuple(weights_3ch.shape)}")
    if target_channels < 3:
        raise ValueError("target_channels must be at least 3")
    c_out, _, kh, kw = weights_3ch.shape
    extra = torch.empty(c_out, target_channels - 3, kh, kw,
                        dtype=weights_3ch.dtype)
    nn.init.trunc_normal_(extra, std=0.02, generator=generator)
    return torch.cat([weights_3ch.clone(), extra], dim=1)
