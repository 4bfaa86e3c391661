"""
Content Encoder
Toy stand-in for a large pretrained speech encoder: one stride-1 and one stride-2
convolution followed by residual feed-forward blocks, mapping 16 kHz log-mels to
content features at half the mel frame rate.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import torch
import torch.nn as nn

from src.audio.features import CONTENT_16K, FeatureSequence, read_feature_file, write_feature_file
from src.audio.frame_domains import FrameSpec, MelSpectrogram
from src.utils.errors import ArgumentError, DomainError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = {"gelu": nn.GELU, "relu": nn.ReLU, "silu": nn.SiLU}


@dataclass
class ContentEncoderConfig:
    n_mels: int = 80
    d_content: int = 64
    n_layers: int = 2
    kernel: int = 3
    activation: str = "gelu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_content < 1 or self.n_mels < 1:
            raise ArgumentError("encoder channel counts must be >= 1")
        if self.n_layers < 0:
            raise ArgumentError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ArgumentError(f"kernel must be a positive odd size, got {self.kernel}")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")


def encoded_length(t_mel: int) -> int:
    """ceil(T_mel / 2): the single stride-2 convolution."""
    return (int(t_mel) + 1) // 2


class FeedForwardBlock(nn.Module):
    def __init__(self, d: int, activation: str, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.net = nn.Sequential(
            nn.Linear(d, 4 * d),
            ACTIVATIONS[activation](),
            nn.Dropout(dropout),
            nn.Linear(4 * d, d),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.net(self.norm(x))


class ContentEncoder(nn.Module):
    def __init__(self, cfg: ContentEncoderConfig):
        super().__init__()
        self.cfg = cfg
        pad = cfg.kernel // 2
        act = ACTIVATIONS[cfg.activation]
        self.conv1 = nn.Conv1d(cfg.n_mels, cfg.d_content, cfg.kernel, stride=1, padding=pad)
        self.conv2 = nn.Conv1d(cfg.d_content, cfg.d_content, cfg.kernel, stride=2, padding=pad)
        self.act1 = act()
        self.act2 = act()
        self.blocks = nn.ModuleList(
            FeedForwardBlock(cfg.d_content, cfg.activation, cfg.dropout) for _ in range(cfg.n_layers)
        )
        self.norm = nn.LayerNorm(cfg.d_content)

    def forward(self, mel: torch.Tensor, lengths: Optional[List[int]] = None):
        """(B, T_mel, n_mels) -> ((B, ceil(T_mel/2), d_content), encoded lengths)."""
        if mel.shape[-1] != self.cfg.n_mels:
            raise ShapeError(f"encoder expects {self.cfg.n_mels} mel bins, got {mel.shape[-1]}")
        b, t = mel.shape[0], mel.shape[1]
        if lengths is None:
            lengths = [t] * b
        in_mask = _mask(lengths, t, mel.device).unsqueeze(1)
        h = mel.transpose(1, 2) * in_mask
        h = self.act1(self.conv1(h)) * in_mask
        h = self.act2(self.conv2(h))
        out_lengths = [encoded_length(n) for n in lengths]
        out_mask = _mask(out_lengths, h.shape[-1], mel.device)
        h = h.transpose(1, 2) * out_mask.unsqueeze(-1)
        for block in self.blocks:
            h = block(h)
        h = self.norm(h) * out_mask.unsqueeze(-1)
        return h, out_lengths


def _mask(lengths: List[int], max_len: int, device) -> torch.Tensor:
    idx = torch.arange(max_len, device=device)
    return (idx.unsqueeze(0) < torch.as_tensor(lengths, device=device).unsqueeze(1)).float()


def encode_content(mel16: MelSpectrogram, encoder: ContentEncoder) -> FeatureSequence:
    """Encode one 16 kHz log-mel into a content-16k feature sequence."""
    expected = FrameSpec.analysis_16k(n_mels=encoder.cfg.n_mels)
    if mel16.spec.sample_rate != expected.sample_rate or mel16.spec.hop != expected.hop:
        raise DomainError(
            f"content encoder needs {expected.sample_rate} Hz / hop {expected.hop} mels, "
            f"got {mel16.spec.sample_rate} Hz / hop {mel16.spec.hop}"
        )
    param = next(encoder.parameters())
    x = torch.as_tensor(mel16.frames, dtype=param.dtype, device=param.device).unsqueeze(0)
    h, _ = encoder(x)
    return FeatureSequence(h.squeeze(0), domain=CONTENT_16K, utt_id=mel16.utt_id)


def import_features(path: Union[str, Path]) -> FeatureSequence:
    """Load precomputed content features (any d) from a W2SF container."""
    matrix = read_feature_file(path)
    if matrix.shape[0] < 1:
        raise ShapeError(f"{path}: feature file holds no frames")
    return FeatureSequence(torch.from_numpy(matrix), domain=CONTENT_16K, utt_id=Path(path).stem)


def export_features(seq: FeatureSequence, path: Union[str, Path]) -> str:
    out = write_feature_file(seq.numpy(), path)
    logger.debug("wrote %dx%d %s features to %s", seq.T, seq.d, seq.domain, out)
    return out
