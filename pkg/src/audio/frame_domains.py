"""
Frame Domains
The two frame domains used by the pipeline (16 kHz analysis, 22.05 kHz synthesis),
waveform I/O, resampling and log-mel extraction.
"""

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from math import gcd
from pathlib import Path
from typing import Optional, Union

import librosa
import numpy as np
import soundfile as sf
import torch
from scipy.signal import resample_poly

from src.utils.errors import ArgumentError, DomainError, FormatError, InputTooShortError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-5

# provenance tags carried by mel spectrograms
GROUND_TRUTH = "ground_truth"
PREDICTED = "predicted"


@dataclass(frozen=True)
class FrameSpec:
    """Sampling rate plus STFT/mel parameters defining one frame domain."""

    sample_rate: int
    hop: int
    win: int
    n_fft: int
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if self.sample_rate < 1:
            raise ArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.hop < 1:
            raise ArgumentError(f"hop must be >= 1, got {self.hop}")
        if self.win > self.n_fft:
            raise ArgumentError(f"win ({self.win}) must not exceed n_fft ({self.n_fft})")
        if self.n_mels < 1:
            raise ArgumentError(f"n_mels must be >= 1, got {self.n_mels}")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ArgumentError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, fmax={self.fmax}"
            )

    @classmethod
    def analysis_16k(cls, **overrides) -> "FrameSpec":
        params = dict(sample_rate=16000, hop=160, win=400, n_fft=400, n_mels=80, fmin=0.0, fmax=8000.0)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def synthesis_22k(cls, **overrides) -> "FrameSpec":
        params = dict(sample_rate=22050, hop=256, win=1024, n_fft=1024, n_mels=80, fmin=0.0, fmax=8000.0)
        params.update(overrides)
        return cls(**params)

    @property
    def frame_period(self) -> float:
        """Seconds between frames."""
        return self.hop / self.sample_rate


@dataclass
class Waveform:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ArgumentError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ArgumentError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass
class MelSpectrogram:
    """T x n_mels log-mel matrix tagged with its frame domain."""

    frames: np.ndarray
    spec: FrameSpec
    provenance: str = GROUND_TRUTH
    utt_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        frames = self.frames
        if isinstance(frames, torch.Tensor):
            frames = frames.detach().cpu().numpy()
        self.frames = np.asarray(frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ArgumentError(f"mel frames must be (T>=1, n_mels), got {self.frames.shape}")
        if self.frames.shape[1] != self.spec.n_mels:
            raise DomainError(
                f"mel has {self.frames.shape[1]} bins but spec declares {self.spec.n_mels}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ArgumentError("mel spectrogram contains non-finite values")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


def num_frames(n_samples: int, spec: FrameSpec) -> int:
    """Frame count under centre padding: floor(n / hop) + 1."""
    if n_samples < spec.win:
        raise InputTooShortError(
            f"{n_samples} samples is shorter than one {spec.win}-sample window"
        )
    return n_samples // spec.hop + 1


@lru_cache(maxsize=16)
def mel_basis(spec: FrameSpec) -> np.ndarray:
    """Unnormalised triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    with warnings.catch_warnings():
        # narrow low filters can fall between FFT bins at 16 kHz / 400 points
        warnings.simplefilter("ignore", UserWarning)
        basis = librosa.filters.mel(
            sr=spec.sample_rate,
            n_fft=spec.n_fft,
            n_mels=spec.n_mels,
            fmin=spec.fmin,
            fmax=spec.fmax,
            norm=None,
            dtype=np.float64,
        )
    empty = int(np.sum(basis.sum(axis=1) == 0))
    if empty:
        logger.debug("%d empty mel filters for %s", empty, spec)
    return basis


def mel_center_frequencies(spec: FrameSpec) -> np.ndarray:
    """Centre frequency (Hz) of each mel filter."""
    return librosa.mel_frequencies(n_mels=spec.n_mels + 2, fmin=spec.fmin, fmax=spec.fmax)[1:-1]


def power_spectrogram(samples: np.ndarray, spec: FrameSpec, pad_mode: str = "reflect") -> np.ndarray:
    """|STFT|^2 with centre padding, shape (n_fft // 2 + 1, T)."""
    stft = librosa.stft(
        samples,
        n_fft=spec.n_fft,
        hop_length=spec.hop,
        win_length=spec.win,
        window="hann",
        center=True,
        pad_mode=pad_mode,
    )
    return np.abs(stft) ** 2


def compute_mel(w: Waveform, spec: FrameSpec) -> MelSpectrogram:
    """Log mel energies, log(mel + 1e-5), one row per frame."""
    if w.sample_rate != spec.sample_rate:
        raise DomainError(
            f"waveform is {w.sample_rate} Hz but the frame spec expects {spec.sample_rate} Hz"
        )
    expected = num_frames(len(w), spec)
    power = power_spectrogram(w.samples, spec)
    mel = mel_basis(spec) @ power
    frames = np.log(mel + LOG_FLOOR).T
    assert frames.shape[0] == expected, (frames.shape, expected)
    return MelSpectrogram(frames=frames, spec=spec)


def mel_to_linear_energy(mel: MelSpectrogram) -> np.ndarray:
    """Invert the log floor: exp(log-mel) - eps, clamped at zero."""
    return np.maximum(np.exp(mel.frames) - LOG_FLOOR, 0.0)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase band-limited resampling to round(len * target / source) samples."""
    if target_rate < 1:
        raise ArgumentError(f"target rate must be >= 1, got {target_rate}")
    if len(w) == 0:
        raise ArgumentError("cannot resample an empty waveform")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)

    g = gcd(int(target_rate), int(w.sample_rate))
    up, down = target_rate // g, w.sample_rate // g
    out = resample_poly(w.samples, up, down)
    # round half up with integer arithmetic
    n_out = (2 * len(w) * target_rate + w.sample_rate) // (2 * w.sample_rate)
    out = librosa.util.fix_length(out, size=n_out)
    return Waveform(np.clip(out, -1.0, 1.0), target_rate)


def match_length(frames: Union[np.ndarray, torch.Tensor], length: int):
    """Crop or edge-pad along the time axis (axis 0) to `length` frames."""
    current = frames.shape[0]
    if current == length:
        return frames
    if current > length:
        return frames[:length]
    if isinstance(frames, torch.Tensor):
        tail = frames[-1:].expand(length - current, *frames.shape[1:])
        return torch.cat([frames, tail], dim=0)
    pad = [(0, length - current)] + [(0, 0)] * (frames.ndim - 1)
    return np.pad(frames, pad, mode="edge")


def load_wav(path: Union[str, Path], expected_rate: Optional[int] = None) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"WAV file not found: {path}")
    try:
        samples, rate = sf.read(str(path), dtype="float64", always_2d=False)
    except RuntimeError as e:
        raise FormatError(f"{path} is not a readable WAV file: {e}") from e
    if samples.ndim != 1:
        raise FormatError(f"{path} has {samples.shape[1]} channels; only mono is supported")
    if expected_rate is not None and rate != expected_rate:
        raise DomainError(f"{path} is {rate} Hz but {expected_rate} Hz was expected")
    return Waveform(samples, int(rate))


def save_wav(w: Waveform, path: Union[str, Path], subtype: str = "PCM_16") -> str:
    """Write a mono WAV (subtype PCM_16 or FLOAT)."""
    if subtype not in ("PCM_16", "FLOAT"):
        raise ArgumentError(f"unsupported WAV subtype {subtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.clip(w.samples, -1.0, 1.0), w.sample_rate, subtype=subtype)
    return str(path)


class MelTransform(torch.nn.Module):
    """Differentiable twin of compute_mel for batched torch waveforms."""

    def __init__(self, spec: FrameSpec):
        super().__init__()
        self.spec = spec
        self.register_buffer(
            "basis", torch.from_numpy(mel_basis(spec)).float(), persistent=False
        )
        self.register_buffer("window", torch.hann_window(spec.win), persistent=False)

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        """(B, L) waveform -> (B, T, n_mels) log-mel."""
        if audio.dim() == 1:
            audio = audio.unsqueeze(0)
        stft = torch.stft(
            audio,
            n_fft=self.spec.n_fft,
            hop_length=self.spec.hop,
            win_length=self.spec.win,
            window=self.window.to(audio.dtype),
            center=True,
            pad_mode="reflect" if audio.shape[-1] > self.spec.n_fft // 2 else "constant",
            return_complex=True,
        )
        # real^2 + imag^2 keeps the gradient finite at zero magnitude
        power = stft.real ** 2 + stft.imag ** 2
        mel = torch.matmul(self.basis.to(audio.dtype), power)
        return torch.log(mel + LOG_FLOOR).transpose(1, 2)
