"""
Conformer blocks: half feed-forward, self-attention, depthwise convolution module,
half feed-forward, final layer norm. Padded frames are excluded via masks.
"""

import math
from typing import Optional

import torch
import torch.nn as nn


class SinusoidalPositions(nn.Module):
    """Fixed sine/cosine absolute position table."""

    def __init__(self, d_model: int, max_len: int = 4096):
        super().__init__()
        position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * -(math.log(10000.0) / d_model))
        pe = torch.zeros(max_len, d_model, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(position * div)
        pe[:, 1::2] = torch.cos(position * div)[:, : d_model // 2]
        self.register_buffer("pe", pe, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[1]
        if t > self.pe.shape[0]:
            self._extend(t)
        return x + self.pe[:t].to(x.dtype).unsqueeze(0)

    def _extend(self, max_len: int) -> None:
        fresh = SinusoidalPositions(self.pe.shape[1], max_len)
        self.pe = fresh.pe.to(self.pe.device)


class FeedForwardModule(nn.Module):
    def __init__(self, d_model: int, expansion: int = 4, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(d_model),
            nn.Linear(d_model, d_model * expansion),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(d_model * expansion, d_model),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ConvModule(nn.Module):
    """LayerNorm, pointwise conv + GLU, depthwise conv, LayerNorm, SiLU, pointwise conv."""

    def __init__(self, d_model: int, kernel_size: int = 7, dropout: float = 0.0):
        super().__init__()
        assert kernel_size % 2 == 1, "kernel_size must be odd for same padding"
        self.norm = nn.LayerNorm(d_model)
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, kernel_size=1)
        self.depthwise = nn.Conv1d(
            d_model, d_model, kernel_size, padding=kernel_size // 2, groups=d_model
        )
        # per-frame norm: outputs must not depend on batch composition
        self.mid_norm = nn.LayerNorm(d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, kernel_size=1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.norm(x).transpose(1, 2)
        h = nn.functional.glu(self.pointwise_in(h), dim=1)
        if mask is not None:
            h = h * mask.unsqueeze(1)
        h = self.depthwise(h).transpose(1, 2)
        h = nn.functional.silu(self.mid_norm(h))
        h = self.pointwise_out(h.transpose(1, 2)).transpose(1, 2)
        return self.dropout(h)


class ConformerBlock(nn.Module):
    def __init__(
        self,
        d_model: int,
        n_heads: int = 4,
        conv_kernel: int = 7,
        ff_expansion: int = 4,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.ff1 = FeedForwardModule(d_model, ff_expansion, dropout)
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, dropout=dropout, batch_first=True)
        self.attn_dropout = nn.Dropout(dropout)
        self.conv = ConvModule(d_model, conv_kernel, dropout)
        self.ff2 = FeedForwardModule(d_model, ff_expansion, dropout)
        self.out_norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """x: (B, T, d); mask: (B, T) with 1 on valid frames."""
        x = x + 0.5 * self.ff1(x)
        h = self.attn_norm(x)
        padding = None if mask is None else mask < 0.5
        h, _ = self.attn(h, h, h, key_padding_mask=padding, need_weights=False)
        x = x + self.attn_dropout(h)
        x = x + self.conv(x, mask)
        x = x + 0.5 * self.ff2(x)
        x = self.out_norm(x)
        if mask is not None:
            x = x * mask.unsqueeze(-1)
        return x


class ConformerStack(nn.Module):
    """Input projection, positions, then a stack of Conformer blocks."""

    def __init__(
        self,
        d_in: int,
        d_model: int,
        n_blocks: int = 2,
        n_heads: int = 4,
        conv_kernel: int = 7,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.proj = nn.Linear(d_in, d_model)
        self.positions = SinusoidalPositions(d_model)
        self.blocks = nn.ModuleList(
            ConformerBlock(d_model, n_heads, conv_kernel, dropout=dropout) for _ in range(n_blocks)
        )

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.positions(self.proj(x))
        if mask is not None:
            h = h * mask.unsqueeze(-1)
        for block in self.blocks:
            h = block(h, mask)
        return h
