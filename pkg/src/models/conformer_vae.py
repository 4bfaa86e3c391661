"""
Conformer VAE
Stage-1 domain alignment: two Conformer encoders (whisper, normal) producing Gaussian
posteriors over a shared latent space, one shared Conformer decoder back to content
features, and the KL + reconstruction + soft-DTW objective.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn

from src.alignment.softdtw import SoftDTWLoss, SoftDtwConfig
from src.audio.features import CONTENT_16K, LATENT, FeatureSequence
from src.models.conformer import ConformerStack
from src.utils.errors import ArgumentError, DomainError, PairingError, ShapeError

logger = logging.getLogger(__name__)

WHISPER = "whisper"
NORMAL = "normal"
BRANCHES = (WHISPER, NORMAL)
LOG_VAR_MIN = -30.0
LOG_VAR_MAX = 20.0


@dataclass
class VAEConfig:
    d_content: int = 64
    d_latent: int = 32
    d_model: int = 64
    n_encoder_blocks: int = 2
    n_decoder_blocks: int = 2
    n_heads: int = 4
    conv_kernel: int = 7
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ArgumentError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if min(self.d_content, self.d_latent, self.d_model) < 1:
            raise ArgumentError("VAE dimensions must be >= 1")


@dataclass
class LatentPosterior:
    """Diagonal Gaussian posterior; log_var is clamped to [-30, 20]."""

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        self.mean = torch.as_tensor(self.mean)
        self.log_var = torch.as_tensor(self.log_var, dtype=self.mean.dtype)
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(f"mean {tuple(self.mean.shape)} vs log_var {tuple(self.log_var.shape)}")
        self.log_var = self.log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
        if not bool(torch.isfinite(self.mean).all()):
            raise ArgumentError("posterior mean contains non-finite values")


@dataclass(frozen=True)
class Stage1LossWeights:
    lambda_kl: float = 1e-2
    lambda_n: float = 1.0
    lambda_dtw: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ArgumentError(f"{name} must be >= 0, got {value}")


@dataclass
class Stage1LossBreakdown:
    kl_w: float
    kl_n: float
    recon_n: float
    dtw: float
    total: float

    @classmethod
    def combine(cls, weights: Stage1LossWeights, kl_w, kl_n, recon_n, dtw) -> "Stage1LossBreakdown":
        total = weights.lambda_kl * (kl_w + kl_n) + weights.lambda_n * recon_n + weights.lambda_dtw * dtw
        return cls(float(kl_w), float(kl_n), float(recon_n), float(dtw), float(total))

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


class PosteriorEncoder(nn.Module):
    """Conformer stack with a linear head producing (mean, log_var)."""

    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.body = ConformerStack(
            cfg.d_content, cfg.d_model, cfg.n_encoder_blocks, cfg.n_heads, cfg.conv_kernel, cfg.dropout
        )
        self.head = nn.Linear(cfg.d_model, 2 * cfg.d_latent)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None):
        mean, log_var = self.head(self.body(x, mask)).chunk(2, dim=-1)
        return mean, log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)


class SharedDecoder(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.body = ConformerStack(
            cfg.d_latent, cfg.d_model, cfg.n_decoder_blocks, cfg.n_heads, cfg.conv_kernel, cfg.dropout
        )
        self.head = nn.Linear(cfg.d_model, cfg.d_content)

    def forward(self, z: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        out = self.head(self.body(z, mask))
        if mask is not None:
            out = out * mask.unsqueeze(-1)
        return out


class ConformerVAE(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.cfg = cfg
        self.whisper_encoder = PosteriorEncoder(cfg)
        self.normal_encoder = PosteriorEncoder(cfg)
        self.decoder = SharedDecoder(cfg)

    def encode_tensor(self, x: torch.Tensor, branch: str, mask: Optional[torch.Tensor] = None):
        if branch == WHISPER:
            return self.whisper_encoder(x, mask)
        if branch == NORMAL:
            return self.normal_encoder(x, mask)
        raise ArgumentError(f"unknown branch {branch!r}; expected one of {BRANCHES}")

    def decode_tensor(self, z: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.decoder(z, mask)

    def parameter_audit(self) -> Dict[str, int]:
        """Parameter counts per submodule; raises if any tensor is shared between them."""
        seen: Dict[int, str] = {}
        counts: Dict[str, int] = {}
        for name in ("whisper_encoder", "normal_encoder", "decoder"):
            module = getattr(self, name)
            total = 0
            for p in module.parameters():
                if id(p) in seen:
                    raise AssertionError(f"parameter shared between {seen[id(p)]} and {name}")
                seen[id(p)] = name
                total += p.numel()
            counts[name] = total
        counts["total"] = sum(p.numel() for p in self.parameters())
        return counts


def _check_content(c: FeatureSequence, model: ConformerVAE) -> None:
    if c.domain != CONTENT_16K:
        raise DomainError(f"expected {CONTENT_16K} features, got {c.domain}")
    if c.d != model.cfg.d_content:
        raise ShapeError(f"VAE expects {model.cfg.d_content} channels, got {c.d}")


def _param_like(model: nn.Module, x: torch.Tensor) -> torch.Tensor:
    p = next(model.parameters())
    return x.to(dtype=p.dtype, device=p.device)


def conformer_encode(c: FeatureSequence, model: ConformerVAE, branch: str) -> LatentPosterior:
    if branch not in BRANCHES:
        raise ArgumentError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
    _check_content(c, model)
    mean, log_var = model.encode_tensor(_param_like(model, c.frames).unsqueeze(0), branch)
    return LatentPosterior(mean.squeeze(0), log_var.squeeze(0))


def sample_latent(mean: torch.Tensor, log_var: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype).to(mean.device)
    return mean + torch.exp(0.5 * log_var) * eps


def reparameterize(q: LatentPosterior, seed: int) -> FeatureSequence:
    """z = mean + exp(log_var / 2) * eps with eps drawn from a generator seeded by `seed`."""
    g = torch.Generator().manual_seed(int(seed))
    return FeatureSequence(sample_latent(q.mean, q.log_var, g), domain=LATENT)


def decode(z: FeatureSequence, model: ConformerVAE) -> FeatureSequence:
    if z.domain != LATENT:
        raise DomainError(f"decoder expects {LATENT} features, got {z.domain}")
    if z.d != model.cfg.d_latent:
        raise ShapeError(f"decoder expects {model.cfg.d_latent} channels, got {z.d}")
    out = model.decode_tensor(_param_like(model, z.frames).unsqueeze(0)).squeeze(0)
    return FeatureSequence(out, domain=CONTENT_16K, pair_id=z.pair_id, utt_id=z.utt_id)


def kl_standard_normal(q, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """0.5 * sum_d (mu^2 + exp(log_var) - 1 - log_var), averaged over (valid) frames.

    Accepts a LatentPosterior or a (mean, log_var) pair of (T, d) or (B, T, d) tensors.
    """
    mean, log_var = (q.mean, q.log_var) if isinstance(q, LatentPosterior) else q
    per_frame = 0.5 * (mean ** 2 + torch.exp(log_var) - 1.0 - log_var).sum(dim=-1)
    if mask is None:
        return per_frame.mean()
    return (per_frame * mask).sum() / mask.sum().clamp(min=1.0)


def lengths_mask(lengths: List[int], max_len: int, device=None) -> torch.Tensor:
    idx = torch.arange(max_len, device=device)
    return (idx.unsqueeze(0) < torch.as_tensor(lengths, device=device).unsqueeze(1)).float()


def stage1_batch_loss(
    model: ConformerVAE,
    c_w: torch.Tensor,
    w_lengths: List[int],
    c_n: torch.Tensor,
    n_lengths: List[int],
    weights: Stage1LossWeights,
    dtw: SoftDTWLoss,
    generator: torch.Generator,
) -> Tuple[torch.Tensor, Stage1LossBreakdown]:
    """Stage-1 objective over a padded batch; soft-DTW runs on each item's unpadded frames."""
    if c_w.shape[0] != c_n.shape[0]:
        raise PairingError(f"batch sizes differ: {c_w.shape[0]} whisper vs {c_n.shape[0]} normal")
    mask_w = lengths_mask(w_lengths, c_w.shape[1], c_w.device)
    mask_n = lengths_mask(n_lengths, c_n.shape[1], c_n.device)

    mean_w, log_var_w = model.encode_tensor(c_w, WHISPER, mask_w)
    mean_n, log_var_n = model.encode_tensor(c_n, NORMAL, mask_n)
    z_w = sample_latent(mean_w, log_var_w, generator)
    z_n = sample_latent(mean_n, log_var_n, generator)
    r_w = model.decode_tensor(z_w, mask_w)
    r_n = model.decode_tensor(z_n, mask_n)

    kl_w = kl_standard_normal((mean_w, log_var_w), mask_w)
    kl_n = kl_standard_normal((mean_n, log_var_n), mask_n)
    sq = ((r_n - c_n) ** 2) * mask_n.unsqueeze(-1)
    recon_n = sq.sum() / (mask_n.sum().clamp(min=1.0) * c_n.shape[-1])
    dtw_terms = [
        dtw(r_w[b, : w_lengths[b]], c_n[b, : n_lengths[b]]) for b in range(c_w.shape[0])
    ]
    dtw_value = torch.stack(dtw_terms).mean()

    total = (
        weights.lambda_kl * (kl_w + kl_n) + weights.lambda_n * recon_n + weights.lambda_dtw * dtw_value
    )
    breakdown = Stage1LossBreakdown.combine(
        weights, kl_w.item(), kl_n.item(), recon_n.item(), dtw_value.item()
    )
    return total, breakdown


def stage1_loss(
    c_w: FeatureSequence,
    c_n: FeatureSequence,
    model: ConformerVAE,
    weights: Stage1LossWeights = Stage1LossWeights(),
    dtw_cfg: SoftDtwConfig = SoftDtwConfig(),
    seed: int = 0,
) -> Tuple[torch.Tensor, Stage1LossBreakdown]:
    """Single-pair Stage-1 objective; returns the differentiable total and its breakdown."""
    if c_w.pair_id != c_n.pair_id:
        raise PairingError(f"whisper pair {c_w.pair_id!r} does not match normal pair {c_n.pair_id!r}")
    _check_content(c_w, model)
    _check_content(c_n, model)
    g = torch.Generator().manual_seed(int(seed))
    return stage1_batch_loss(
        model,
        _param_like(model, c_w.frames).unsqueeze(0),
        [c_w.T],
        _param_like(model, c_n.frames).unsqueeze(0),
        [c_n.T],
        weights,
        SoftDTWLoss(dtw_cfg),
        g,
    )


@torch.no_grad()
def infer_aligned(c_w: FeatureSequence, model: ConformerVAE, branch: str = WHISPER) -> FeatureSequence:
    """Branch encoder -> posterior mean -> shared decoder; no sampling.

    Conversion uses the whisper branch; the normal branch reconstructs r_n.
    """
    _check_content(c_w, model)
    mean, _ = model.encode_tensor(_param_like(model, c_w.frames).unsqueeze(0), branch)
    r_w = model.decode_tensor(mean).squeeze(0)
    return FeatureSequence(r_w, domain=CONTENT_16K, pair_id=c_w.pair_id, utt_id=c_w.utt_id)
