"""
Length-Channel Aligner
Deterministic bridge from the 16 kHz content-feature domain to the 22.05 kHz mel frame
domain: exact length mapping, endpoint-aligned linear interpolation and a two-layer
convolutional channel projection.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn

from src.audio.features import ALIGNED_22K, CONTENT_16K, FeatureSequence
from src.audio.frame_domains import FrameSpec
from src.utils.errors import ArgumentError, ShapeError


@dataclass
class AlignerConfig:
    d_in: int = 64
    d_mid: int = 96
    n_feat: int = 48
    spec16: FrameSpec = field(default_factory=FrameSpec.analysis_16k)
    spec22: FrameSpec = field(default_factory=FrameSpec.synthesis_22k)

    def __post_init__(self):
        for name in ("d_in", "d_mid", "n_feat"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")


@dataclass(frozen=True)
class LengthMap:
    t_enc: int
    t22: int


def target_length(t_enc: int, spec16: FrameSpec, spec22: FrameSpec) -> int:
    """T22 = floor((2 T_enc - 1) h16 f22 / (f16 h22)) + 1, in exact integer arithmetic."""
    if t_enc < 1:
        raise ArgumentError(f"t_enc must be >= 1, got {t_enc}")
    numerator = (2 * int(t_enc) - 1) * spec16.hop * spec22.sample_rate
    denominator = spec16.sample_rate * spec22.hop
    return numerator // denominator + 1


def length_map(t_enc: int, spec16: FrameSpec, spec22: FrameSpec) -> LengthMap:
    return LengthMap(t_enc=t_enc, t22=target_length(t_enc, spec16, spec22))


def interpolate_frames(x: torch.Tensor, t22: int) -> torch.Tensor:
    """(T, d) -> (t22, d); output j samples source position j (T - 1) / (t22 - 1)."""
    t = x.shape[0]
    if t22 < 1:
        raise ArgumentError(f"t22 must be >= 1, got {t22}")
    if t == t22:
        return x
    if t == 1 or t22 == 1:
        return x[:1].expand(t22, x.shape[1]).clone()
    # multiply before dividing so the last position is exactly T - 1
    pos = torch.arange(t22, dtype=torch.float64) * (t - 1) / (t22 - 1)
    left = pos.floor().long().clamp(max=t - 1)
    right = (left + 1).clamp(max=t - 1)
    frac = (pos - left.to(torch.float64)).to(x.dtype).unsqueeze(1)
    return x[left] * (1 - frac) + x[right] * frac


def upsample_time(x: FeatureSequence, t22: int) -> FeatureSequence:
    return FeatureSequence(
        interpolate_frames(x.frames, t22), domain=x.domain, pair_id=x.pair_id, utt_id=x.utt_id
    )


class LengthChannelAligner(nn.Module):
    """5x1 conv (d_in -> d_mid) + ReLU, then 3x1 conv (d_mid -> n_feat), same padding."""

    def __init__(self, cfg: AlignerConfig):
        super().__init__()
        self.cfg = cfg
        self.conv1 = nn.Conv1d(cfg.d_in, cfg.d_mid, kernel_size=5, padding=2)
        self.conv2 = nn.Conv1d(cfg.d_mid, cfg.n_feat, kernel_size=3, padding=1)

    def target_length(self, t_enc: int) -> int:
        return target_length(t_enc, self.cfg.spec16, self.cfg.spec22)

    def project(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """(B, T, d_in) -> (B, T, n_feat); padded frames are zeroed like same-padding."""
        if x.shape[-1] != self.cfg.d_in:
            raise ShapeError(f"aligner expects {self.cfg.d_in} channels, got {x.shape[-1]}")
        h = x.transpose(1, 2)
        if mask is not None:
            h = h * mask.unsqueeze(1)
        h = torch.relu(self.conv1(h))
        if mask is not None:
            h = h * mask.unsqueeze(1)
        h = self.conv2(h)
        return h.transpose(1, 2)

    def upsample_batch(self, x: torch.Tensor, lengths: List[int]):
        """Interpolate each item to its duration-preserving target length and re-pad; returns (y, t22 list)."""
        items = []
        t22s = []
        for b, t_enc in enumerate(lengths):
            t22 = self.target_length(int(t_enc))
            items.append(interpolate_frames(x[b, : int(t_enc)], t22))
            t22s.append(t22)
        y = nn.utils.rnn.pad_sequence(items, batch_first=True)
        return y, t22s

    def forward(self, x: torch.Tensor, lengths: List[int]):
        """(B, T_enc, d_in) content features -> ((B, T22, n_feat), T22 lengths)."""
        y, t22s = self.upsample_batch(x, lengths)
        mask = lengths_to_mask(t22s, y.shape[1], y.device)
        out = self.project(y, mask) * mask.unsqueeze(-1)
        return out, t22s


def lengths_to_mask(lengths: List[int], max_len: int, device=None) -> torch.Tensor:
    """(B, max_len) float mask with ones on valid frames."""
    idx = torch.arange(max_len, device=device)
    lens = torch.as_tensor(list(lengths), device=device)
    return (idx.unsqueeze(0) < lens.unsqueeze(1)).float()


def project_channels(x: FeatureSequence, aligner: LengthChannelAligner) -> FeatureSequence:
    if x.d != aligner.cfg.d_in:
        raise ShapeError(f"aligner expects {aligner.cfg.d_in} channels, got {x.d}")
    out = aligner.project(x.frames.unsqueeze(0)).squeeze(0)
    return FeatureSequence(out, domain=x.domain, pair_id=x.pair_id, utt_id=x.utt_id)


def align(x: FeatureSequence, aligner: LengthChannelAligner) -> FeatureSequence:
    """Upsample to the duration-preserving target length, then project; output tagged aligned-22k."""
    if x.domain != CONTENT_16K:
        raise ArgumentError(f"aligner input must be {CONTENT_16K} features, got {x.domain}")
    up = upsample_time(x, aligner.target_length(x.T))
    out = project_channels(up, aligner)
    return FeatureSequence(out.frames, domain=ALIGNED_22K, pair_id=x.pair_id, utt_id=x.utt_id)
