"""
Vocoder
HiFi-GAN style generator with multi-period and multi-scale discriminators,
least-squares adversarial, feature-matching and mel L1 losses, and the Stage-3
fine-tuning step on predicted mel-spectrograms.
"""

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.audio.frame_domains import FrameSpec, MelSpectrogram, MelTransform, Waveform, match_length
from src.utils.errors import ArgumentError, DomainError, PairingError

logger = logging.getLogger(__name__)

LRELU_SLOPE = 0.1


@dataclass
class VocoderConfig:
    upsample_factors: List[int] = field(default_factory=lambda: [8, 8, 4])
    upsample_initial_channel: int = 64
    resblock_kernels: List[int] = field(default_factory=lambda: [3, 7])
    resblock_dilations: List[List[int]] = field(default_factory=lambda: [[1, 3], [1, 3]])
    periods: List[int] = field(default_factory=lambda: [2, 3, 5, 7, 11])
    scales: int = 3
    disc_channels: List[int] = field(default_factory=lambda: [16, 32, 64, 64])
    n_mels: int = 80
    hop: int = 256
    sample_rate: int = 22050
    lambda_fm: float = 2.0
    lambda_mel: float = 45.0
    learning_rate: float = 2e-4
    betas: Tuple[float, float] = (0.8, 0.99)
    grad_clip: float = 1.0

    def __post_init__(self):
        product = int(np.prod(self.upsample_factors))
        if product != self.hop:
            raise ArgumentError(
                f"upsample factors {self.upsample_factors} multiply to {product}, hop is {self.hop}"
            )
        if self.upsample_initial_channel % (2 ** len(self.upsample_factors)):
            raise ArgumentError("upsample_initial_channel must halve cleanly at every stage")
        if len(self.resblock_kernels) != len(self.resblock_dilations):
            raise ArgumentError("resblock_kernels and resblock_dilations must pair up")
        if self.scales < 1 or not self.periods:
            raise ArgumentError("need at least one scale and one period discriminator")
        self.betas = tuple(self.betas)

    @classmethod
    def toy(cls, **overrides) -> "VocoderConfig":
        return cls(**overrides)

    @classmethod
    def desk_test(cls, **overrides) -> "VocoderConfig":
        params = dict(
            upsample_initial_channel=32,
            resblock_kernels=[3],
            resblock_dilations=[[1, 3]],
            periods=[2, 3],
            scales=2,
            disc_channels=[8, 16, 16, 16],
        )
        params.update(overrides)
        return cls(**params)

    @classmethod
    def full_scale(cls, **overrides) -> "VocoderConfig":
        params = dict(
            upsample_initial_channel=512,
            resblock_kernels=[3, 7, 11],
            resblock_dilations=[[1, 3, 5], [1, 3, 5], [1, 3, 5]],
            disc_channels=[32, 128, 512, 1024],
        )
        params.update(overrides)
        return cls(**params)

    @property
    def spec(self) -> FrameSpec:
        return FrameSpec.synthesis_22k(sample_rate=self.sample_rate, hop=self.hop, n_mels=self.n_mels)


@dataclass
class VocoderLossBreakdown:
    adv_g: float
    adv_d: float
    feature_match: float
    mel_recon: float
    total_g: float
    total_d: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int, dilations: List[int]):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel, dilation=d, padding=d * (kernel - 1) // 2)
            for d in dilations
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, LRELU_SLOPE))
        return x


class Generator(nn.Module):
    """mel (B, n_mels, T) -> waveform (B, 1, T * hop)."""

    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.upsample_initial_channel
        self.conv_pre = nn.Conv1d(cfg.n_mels, ch, 7, padding=3)
        self.ups = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        for i, s in enumerate(cfg.upsample_factors):
            c_in, c_out = ch // (2 ** i), ch // (2 ** (i + 1))
            # kernel 2s with this padding gives exactly L * s output samples
            self.ups.append(nn.ConvTranspose1d(c_in, c_out, 2 * s, s, padding=s // 2 + s % 2, output_padding=s % 2))
            for k, d in zip(cfg.resblock_kernels, cfg.resblock_dilations):
                self.resblocks.append(ResBlock(c_out, k, d))
        self.conv_post = nn.Conv1d(ch // (2 ** len(cfg.upsample_factors)), 1, 7, padding=3)
        self.num_kernels = len(cfg.resblock_kernels)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        x = self.conv_pre(mel)
        for i, up in enumerate(self.ups):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            blocks = self.resblocks[i * self.num_kernels : (i + 1) * self.num_kernels]
            x = sum(block(x) for block in blocks) / self.num_kernels
        return torch.tanh(self.conv_post(F.leaky_relu(x)))


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: List[int], kernel: int = 5, stride: int = 3):
        super().__init__()
        self.period = period
        pad = (kernel - 1) // 2
        dims = [1] + list(channels)
        self.convs = nn.ModuleList(
            nn.Conv2d(dims[i], dims[i + 1], (kernel, 1), (stride, 1), padding=(pad, 0))
            for i in range(len(channels))
        )
        self.convs.append(nn.Conv2d(dims[-1], dims[-1], (kernel, 1), 1, padding=(pad, 0)))
        self.conv_post = nn.Conv2d(dims[-1], 1, (3, 1), 1, padding=(1, 0))

    def forward(self, x: torch.Tensor):
        b, c, t = x.shape
        if t % self.period:
            n_pad = self.period - t % self.period
            mode = "reflect" if n_pad < t else "replicate"
            x = F.pad(x, (0, n_pad), mode)
            t += n_pad
        x = x.view(b, c, t // self.period, self.period)
        fmap = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class ScaleDiscriminator(nn.Module):
    def __init__(self, channels: List[int]):
        super().__init__()
        layers = [nn.Conv1d(1, channels[0], 15, 1, padding=7)]
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            layers.append(nn.Conv1d(c_in, c_out, 41, 4, groups=4, padding=20))
        layers.append(nn.Conv1d(channels[-1], channels[-1], 5, 1, padding=2))
        self.convs = nn.ModuleList(layers)
        self.conv_post = nn.Conv1d(channels[-1], 1, 3, 1, padding=1)

    def forward(self, x: torch.Tensor):
        fmap = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.conv_post(x)
        fmap.append(x)
        return torch.flatten(x, 1, -1), fmap


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.discriminators = nn.ModuleList(PeriodDiscriminator(p, cfg.disc_channels) for p in cfg.periods)

    def forward(self, x: torch.Tensor):
        outs, fmaps = [], []
        for d in self.discriminators:
            o, f = d(x)
            outs.append(o)
            fmaps.append(f)
        return outs, fmaps


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.discriminators = nn.ModuleList(ScaleDiscriminator(cfg.disc_channels) for _ in range(cfg.scales))
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def forward(self, x: torch.Tensor):
        outs, fmaps = [], []
        for i, d in enumerate(self.discriminators):
            if i > 0:
                x = self.pool(x)
            o, f = d(x)
            outs.append(o)
            fmaps.append(f)
        return outs, fmaps


class Vocoder(nn.Module):
    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.cfg = cfg
        self.generator = Generator(cfg)
        self.mpd = MultiPeriodDiscriminator(cfg)
        self.msd = MultiScaleDiscriminator(cfg)
        self.mel = MelTransform(cfg.spec)

    def discriminate(self, audio: torch.Tensor):
        """(B, 1, L) -> (list of score tensors, list of feature-map lists) over MPD then MSD."""
        p_outs, p_fmaps = self.mpd(audio)
        s_outs, s_fmaps = self.msd(audio)
        return p_outs + s_outs, p_fmaps + s_fmaps


def discriminator_adv_loss(real_outs: List[torch.Tensor], fake_outs: List[torch.Tensor]) -> torch.Tensor:
    return sum(torch.mean((1 - r) ** 2) + torch.mean(f ** 2) for r, f in zip(real_outs, fake_outs))


def generator_adv_loss(fake_outs: List[torch.Tensor]) -> torch.Tensor:
    return sum(torch.mean((1 - f) ** 2) for f in fake_outs)


def feature_matching_loss(real_fmaps, fake_fmaps) -> torch.Tensor:
    """Mean L1 distance, averaged over every feature map of every discriminator."""
    terms = [
        torch.mean(torch.abs(r.detach() - f))
        for r_maps, f_maps in zip(real_fmaps, fake_fmaps)
        for r, f in zip(r_maps, f_maps)
    ]
    return torch.stack(terms).mean()


def _audio_tensor(w: Union[Waveform, torch.Tensor, np.ndarray], like: torch.Tensor) -> torch.Tensor:
    if isinstance(w, Waveform):
        w = w.samples
    t = torch.as_tensor(w, dtype=like.dtype, device=like.device)
    while t.dim() < 3:
        t = t.unsqueeze(0)
    return t


def generator_terms(vocoder: Vocoder, real: torch.Tensor, fake: torch.Tensor):
    """(adv_g, feature_match, mel_recon) for (B, 1, L) real/fake audio of equal length."""
    real_outs, real_fmaps = vocoder.discriminate(real)
    fake_outs, fake_fmaps = vocoder.discriminate(fake)
    adv_g = generator_adv_loss(fake_outs)
    fm = feature_matching_loss(real_fmaps, fake_fmaps)
    mel_recon = F.l1_loss(vocoder.mel(fake.squeeze(1)), vocoder.mel(real.squeeze(1)))
    return adv_g, fm, mel_recon


def discriminator_terms(vocoder: Vocoder, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    real_outs, _ = vocoder.discriminate(real)
    fake_outs, _ = vocoder.discriminate(fake.detach())
    return discriminator_adv_loss(real_outs, fake_outs)


def vocoder_losses(real, fake, vocoder: Vocoder) -> VocoderLossBreakdown:
    """Loss breakdown for a real/fake waveform pair, cropped to the shorter length."""
    param = next(vocoder.parameters())
    real_t, fake_t = _audio_tensor(real, param), _audio_tensor(fake, param)
    n = min(real_t.shape[-1], fake_t.shape[-1])
    real_t, fake_t = real_t[..., :n], fake_t[..., :n]
    with torch.no_grad():
        adv_g, fm, mel_recon = generator_terms(vocoder, real_t, fake_t)
        adv_d = discriminator_terms(vocoder, real_t, fake_t)
    cfg = vocoder.cfg
    total_g = adv_g + cfg.lambda_fm * fm + cfg.lambda_mel * mel_recon
    return VocoderLossBreakdown(
        adv_g=float(adv_g),
        adv_d=float(adv_d),
        feature_match=float(fm),
        mel_recon=float(mel_recon),
        total_g=float(total_g),
        total_d=float(adv_d),
    )


def _check_mel(mel22: MelSpectrogram, cfg: VocoderConfig) -> None:
    if mel22.spec.sample_rate != cfg.sample_rate or mel22.spec.hop != cfg.hop:
        raise DomainError(
            f"vocoder expects {cfg.sample_rate} Hz / hop {cfg.hop} mels, "
            f"got {mel22.spec.sample_rate} Hz / hop {mel22.spec.hop}"
        )
    if mel22.spec.n_mels != cfg.n_mels:
        raise DomainError(f"vocoder expects {cfg.n_mels} mel bins, got {mel22.spec.n_mels}")


def _mel_tensor(mel22: MelSpectrogram, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(mel22.frames.T, dtype=like.dtype, device=like.device).unsqueeze(0)


@torch.no_grad()
def generate(mel22: MelSpectrogram, vocoder: Vocoder) -> Waveform:
    """Waveform of exactly T * hop samples at the vocoder's sample rate."""
    _check_mel(mel22, vocoder.cfg)
    param = next(vocoder.parameters())
    audio = vocoder.generator(_mel_tensor(mel22, param)).reshape(-1)
    return Waveform(audio.double().cpu().numpy(), vocoder.cfg.sample_rate)


@dataclass
class VocoderState:
    vocoder: Vocoder
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0

    @classmethod
    def create(cls, vocoder: Vocoder, learning_rate: Optional[float] = None) -> "VocoderState":
        lr = vocoder.cfg.learning_rate if learning_rate is None else learning_rate
        betas = vocoder.cfg.betas
        opt_g = torch.optim.AdamW(vocoder.generator.parameters(), lr=lr, betas=betas)
        d_params = list(vocoder.mpd.parameters()) + list(vocoder.msd.parameters())
        opt_d = torch.optim.AdamW(d_params, lr=lr, betas=betas)
        return cls(vocoder=vocoder, opt_g=opt_g, opt_d=opt_d)

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return copy.deepcopy(self.vocoder.state_dict())


def finetune_step(
    pred_mel: MelSpectrogram, reference: Waveform, state: VocoderState
) -> Tuple[VocoderState, VocoderLossBreakdown]:
    """One discriminator update followed by one generator update."""
    vocoder, cfg = state.vocoder, state.vocoder.cfg
    _check_mel(pred_mel, cfg)
    if reference.sample_rate != cfg.sample_rate:
        raise DomainError(f"reference is {reference.sample_rate} Hz, vocoder runs at {cfg.sample_rate} Hz")
    expected = pred_mel.num_frames * cfg.hop
    if abs(len(reference) - expected) > cfg.hop:
        raise PairingError(
            f"reference has {len(reference)} samples, mel implies {expected} (more than one hop apart)"
        )
    vocoder.train()
    param = next(vocoder.parameters())
    real = _audio_tensor(match_length(reference.samples, expected), param)
    fake = vocoder.generator(_mel_tensor(pred_mel, param))

    state.opt_d.zero_grad()
    adv_d = discriminator_terms(vocoder, real, fake)
    adv_d.backward()
    d_params = [p for group in state.opt_d.param_groups for p in group["params"]]
    nn.utils.clip_grad_norm_(d_params, cfg.grad_clip)
    state.opt_d.step()

    state.opt_g.zero_grad()
    adv_g, fm, mel_recon = generator_terms(vocoder, real, fake)
    total_g = adv_g + cfg.lambda_fm * fm + cfg.lambda_mel * mel_recon
    total_g.backward()
    nn.utils.clip_grad_norm_(vocoder.generator.parameters(), cfg.grad_clip)
    state.opt_g.step()
    # discriminator grads from the generator pass are stale; drop them
    state.opt_d.zero_grad()

    state.step += 1
    breakdown = VocoderLossBreakdown(
        adv_g=adv_g.item(),
        adv_d=adv_d.item(),
        feature_match=fm.item(),
        mel_recon=mel_recon.item(),
        total_g=total_g.item(),
        total_d=adv_d.item(),
    )
    return state, breakdown
