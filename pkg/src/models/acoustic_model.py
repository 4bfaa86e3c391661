"""
Acoustic Model
Duration-free FastSpeech-2 style mel predictor for Stage 2. Aligned 22.05 kHz
features are conditioned on a 256-d speaker embedding, passed through feed-forward
transformer blocks with a pitch/energy variance adaptor, and projected to mel bins.
Output length always equals input length.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from src.audio.features import ALIGNED_22K, FeatureSequence
from src.audio.frame_domains import PREDICTED, FrameSpec, MelSpectrogram
from src.audio.prosody import F0_MIN, ProsodyTargets
from src.models.conformer import SinusoidalPositions
from src.utils.errors import ArgumentError, DomainError, ShapeError

logger = logging.getLogger(__name__)

SPEAKER_DIM = 256
SPEAKER_SOURCES = ("lookup", "external", "stats-pool")
TRAIN = "train"
INFER = "infer"


@dataclass
class SpeakerEmbedding:
    """256-d speaker vector; providers return it L2-normalised."""

    vector: np.ndarray
    source: str = "lookup"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if self.vector.shape[0] != SPEAKER_DIM:
            raise ShapeError(f"speaker embedding must have {SPEAKER_DIM} dims, got {self.vector.shape[0]}")
        if self.source not in SPEAKER_SOURCES:
            raise ArgumentError(f"unknown speaker embedding source {self.source!r}")
        if not np.all(np.isfinite(self.vector)):
            raise ArgumentError("speaker embedding contains non-finite values")

    def normalized(self) -> "SpeakerEmbedding":
        norm = float(np.linalg.norm(self.vector))
        if norm == 0:
            raise ArgumentError("cannot normalise a zero speaker embedding")
        return SpeakerEmbedding(self.vector / norm, self.source)

    def cosine(self, other: "SpeakerEmbedding") -> float:
        a, b = self.vector, other.vector
        denom = float(np.linalg.norm(a) * np.linalg.norm(b))
        return float(a @ b) / denom if denom > 0 else 0.0

    def tensor(self, like: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor(self.vector, dtype=like.dtype, device=like.device)


@dataclass
class AcousticConfig:
    n_feat: int = 48
    d_model: int = 128
    n_encoder_blocks: int = 2
    n_decoder_blocks: int = 2
    n_heads: int = 2
    d_ff: int = 256
    ff_kernel: int = 9
    predictor_channels: int = 128
    predictor_kernel: int = 3
    n_mels: int = 80
    dropout: float = 0.0
    pitch_weight: float = 0.1
    energy_weight: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ArgumentError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.pitch_weight < 0 or self.energy_weight < 0:
            raise ArgumentError("prosody loss weights must be >= 0")


class ProsodyBatch(NamedTuple):
    """Pitch (log-Hz), log1p(energy) and voicing as tensors of shape (..., T)."""

    pitch: torch.Tensor
    log_energy: torch.Tensor
    voicing: torch.Tensor

    @classmethod
    def from_targets(cls, targets: ProsodyTargets, like: Optional[torch.Tensor] = None) -> "ProsodyBatch":
        dtype = like.dtype if like is not None else torch.float32
        device = like.device if like is not None else None
        pitch = torch.as_tensor(targets.pitch, dtype=dtype, device=device)
        energy = torch.as_tensor(targets.energy, dtype=dtype, device=device)
        voicing = torch.as_tensor(targets.voicing, dtype=torch.bool, device=device)
        return cls(pitch, torch.log1p(energy), voicing)

    def to_targets(self) -> ProsodyTargets:
        """Single-utterance predictions as ProsodyTargets (energy back on the linear scale)."""
        pitch = self.pitch.detach().cpu().numpy().reshape(-1)
        energy = torch.expm1(self.log_energy.detach().clamp(min=0)).cpu().numpy().reshape(-1)
        voicing = self.voicing.detach().cpu().numpy().reshape(-1)
        return ProsodyTargets(pitch=pitch, energy=energy, voicing=voicing)


@dataclass
class Stage2LossBreakdown:
    mel_l1: float
    mel_l2: float
    pitch_mse: float
    energy_mse: float
    total: float

    @classmethod
    def combine(cls, mel_l1, mel_l2, pitch_mse, energy_mse, w_p: float, w_e: float) -> "Stage2LossBreakdown":
        total = mel_l1 + mel_l2 + w_p * pitch_mse + w_e * energy_mse
        return cls(float(mel_l1), float(mel_l2), float(pitch_mse), float(energy_mse), float(total))

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


class FFTBlock(nn.Module):
    """Self-attention + convolutional feed-forward, post-norm."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, kernel: int, dropout: float):
        super().__init__()
        self.attn = nn.MultiheadAttention(d_model, n_heads, dropout=dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(d_model)
        self.conv1 = nn.Conv1d(d_model, d_ff, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(d_ff, d_model, 1)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h, _ = self.attn(x, x, x, key_padding_mask=mask < 0.5, need_weights=False)
        x = self.norm1(x + self.dropout(h)) * mask.unsqueeze(-1)
        h = torch.relu(self.conv1(x.transpose(1, 2)))
        h = self.conv2(self.dropout(h)).transpose(1, 2)
        return self.norm2(x + self.dropout(h)) * mask.unsqueeze(-1)


class VariancePredictor(nn.Module):
    """[2 x (conv -> relu -> layer norm -> dropout)] -> linear, one scalar per frame."""

    def __init__(self, d_model: int, channels: int, kernel: int, dropout: float):
        super().__init__()
        self.conv1 = nn.Conv1d(d_model, channels, kernel, padding=kernel // 2)
        self.norm1 = nn.LayerNorm(channels)
        self.conv2 = nn.Conv1d(channels, channels, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(channels)
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(channels, 1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.conv1(x.transpose(1, 2))).transpose(1, 2)
        h = self.drop(self.norm1(h)) * mask.unsqueeze(-1)
        h = torch.relu(self.conv2(h.transpose(1, 2))).transpose(1, 2)
        h = self.drop(self.norm2(h))
        return self.head(h).squeeze(-1) * mask


class AcousticModel(nn.Module):
    def __init__(self, cfg: AcousticConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.n_feat, cfg.d_model)
        self.speaker_proj = nn.Linear(SPEAKER_DIM, cfg.d_model)
        self.positions = SinusoidalPositions(cfg.d_model)
        block = lambda: FFTBlock(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.ff_kernel, cfg.dropout)  # noqa: E731
        self.encoder = nn.ModuleList(block() for _ in range(cfg.n_encoder_blocks))
        self.pitch_predictor = VariancePredictor(cfg.d_model, cfg.predictor_channels, cfg.predictor_kernel, cfg.dropout)
        self.energy_predictor = VariancePredictor(cfg.d_model, cfg.predictor_channels, cfg.predictor_kernel, cfg.dropout)
        self.pitch_embed = nn.Linear(1, cfg.d_model)
        self.energy_embed = nn.Linear(1, cfg.d_model)
        self.decoder = nn.ModuleList(block() for _ in range(cfg.n_decoder_blocks))
        self.mel_head = nn.Linear(cfg.d_model, cfg.n_mels)

    def forward(
        self,
        x: torch.Tensor,
        speaker: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
        targets: Optional[ProsodyBatch] = None,
        mode: str = INFER,
    ) -> Tuple[torch.Tensor, ProsodyBatch]:
        """x (B, T, n_feat), speaker (B, 256) -> mel (B, T, n_mels) and predicted prosody."""
        if mode not in (TRAIN, INFER):
            raise ArgumentError(f"mode must be {TRAIN!r} or {INFER!r}, got {mode!r}")
        if mode == TRAIN and targets is None:
            raise ArgumentError("train mode needs prosody targets for teacher forcing")
        if x.shape[-1] != self.cfg.n_feat:
            raise ShapeError(f"acoustic model expects {self.cfg.n_feat} channels, got {x.shape[-1]}")
        if mask is None:
            mask = x.new_ones(x.shape[:2])

        h = self.input_proj(x) + self.speaker_proj(speaker).unsqueeze(1)
        h = self.positions(h) * mask.unsqueeze(-1)
        for block in self.encoder:
            h = block(h, mask)

        pitch_pred = self.pitch_predictor(h, mask)
        log_energy_pred = self.energy_predictor(h, mask)
        if mode == TRAIN:
            pitch_in, energy_in = targets.pitch, targets.log_energy
        else:
            pitch_in, energy_in = pitch_pred, log_energy_pred.clamp(min=0)
        h = h + self.pitch_embed(pitch_in.unsqueeze(-1)) + self.energy_embed(energy_in.unsqueeze(-1))
        h = h * mask.unsqueeze(-1)

        for block in self.decoder:
            h = block(h, mask)
        mel = self.mel_head(h) * mask.unsqueeze(-1)
        voicing = pitch_pred > math.log(F0_MIN)
        return mel, ProsodyBatch(pitch_pred, log_energy_pred, voicing)

    def parameter_audit(self) -> Dict[str, int]:
        counts = {name: sum(p.numel() for p in child.parameters()) for name, child in self.named_children()}
        assert not any("duration" in name for name, _ in self.named_parameters()), "duration path present"
        return counts


def _speaker_tensor(s: Union[SpeakerEmbedding, torch.Tensor], like: torch.Tensor) -> torch.Tensor:
    if isinstance(s, SpeakerEmbedding):
        return s.tensor(like)
    s = torch.as_tensor(s, dtype=like.dtype, device=like.device)
    if s.shape[-1] != SPEAKER_DIM:
        raise ShapeError(f"speaker embedding must have {SPEAKER_DIM} dims, got {s.shape[-1]}")
    return s


def acoustic_forward(
    aligned: FeatureSequence,
    s: Union[SpeakerEmbedding, torch.Tensor],
    model: AcousticModel,
    targets: Optional[ProsodyTargets] = None,
    mode: str = INFER,
) -> Tuple[MelSpectrogram, ProsodyTargets]:
    """Single-utterance forward: aligned features -> (predicted mel, predicted prosody)."""
    if aligned.domain != ALIGNED_22K:
        raise DomainError(f"acoustic model expects {ALIGNED_22K} features, got {aligned.domain}")
    param = next(model.parameters())
    x = aligned.frames.to(dtype=param.dtype, device=param.device).unsqueeze(0)
    speaker = _speaker_tensor(s, x).reshape(1, SPEAKER_DIM)
    batch_targets = None
    if targets is not None:
        if len(targets) != aligned.T:
            raise ShapeError(f"prosody targets have {len(targets)} frames, features have {aligned.T}")
        t = ProsodyBatch.from_targets(targets, like=x)
        batch_targets = ProsodyBatch(t.pitch.unsqueeze(0), t.log_energy.unsqueeze(0), t.voicing.unsqueeze(0))
    mel, prosody = model(x, speaker, targets=batch_targets, mode=mode)
    spec = FrameSpec.synthesis_22k(n_mels=model.cfg.n_mels)
    out = MelSpectrogram(mel.squeeze(0), spec, provenance=PREDICTED, utt_id=aligned.utt_id)
    predicted = ProsodyBatch(prosody.pitch.squeeze(0), prosody.log_energy.squeeze(0), prosody.voicing.squeeze(0))
    return out, predicted.to_targets()


def stage2_loss(
    pred_mel: torch.Tensor,
    target_mel: torch.Tensor,
    pred_prosody: ProsodyBatch,
    target_prosody: ProsodyBatch,
    cfg: AcousticConfig = AcousticConfig(),
    mask: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, Stage2LossBreakdown]:
    """L1 + L2 mel loss plus weighted pitch (voiced frames only) and log-energy MSE."""
    if pred_mel.shape != target_mel.shape:
        raise ShapeError(f"mel shapes differ: {tuple(pred_mel.shape)} vs {tuple(target_mel.shape)}")
    if pred_prosody.pitch.shape != target_prosody.pitch.shape:
        raise ShapeError(
            f"prosody shapes differ: {tuple(pred_prosody.pitch.shape)} vs {tuple(target_prosody.pitch.shape)}"
        )
    if mask is None:
        mask = pred_mel.new_ones(pred_mel.shape[:-1])
    n_frames = mask.sum().clamp(min=1.0)
    n_cells = n_frames * pred_mel.shape[-1]
    diff = (pred_mel - target_mel) * mask.unsqueeze(-1)
    mel_l1 = diff.abs().sum() / n_cells
    mel_l2 = (diff ** 2).sum() / n_cells

    voiced = target_prosody.voicing.to(pred_mel.dtype) * mask
    if float(voiced.sum()) > 0:
        pitch_mse = (((pred_prosody.pitch - target_prosody.pitch) ** 2) * voiced).sum() / voiced.sum()
    else:
        pitch_mse = pred_mel.new_zeros(())
    energy_mse = (((pred_prosody.log_energy - target_prosody.log_energy) ** 2) * mask).sum() / n_frames

    total = mel_l1 + mel_l2 + cfg.pitch_weight * pitch_mse + cfg.energy_weight * energy_mse
    breakdown = Stage2LossBreakdown.combine(
        mel_l1.item(), mel_l2.item(), pitch_mse.item(), energy_mse.item(), cfg.pitch_weight, cfg.energy_weight
    )
    return total, breakdown
