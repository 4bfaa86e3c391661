"""
Griffin-Lim fallback vocoder: non-negative least-squares mel -> linear magnitude, then classic
alternating projections with a seeded random initial phase.
"""

import logging
from typing import List, Tuple

import librosa
import numpy as np

from src.audio.frame_domains import MelSpectrogram, Waveform, mel_to_linear_energy
from src.utils.errors import ArgumentError

logger = logging.getLogger(__name__)


def mel_to_magnitude(mel22: MelSpectrogram) -> np.ndarray:
    """Linear STFT magnitude (n_fft // 2 + 1, T) from a log-mel."""
    spec = mel22.spec
    # same unnormalised filterbank as compute_mel
    magnitude = librosa.feature.inverse.mel_to_stft(
        mel_to_linear_energy(mel22).T.astype(np.float64),
        sr=spec.sample_rate,
        n_fft=spec.n_fft,
        power=2.0,
        norm=None,
        fmin=spec.fmin,
        fmax=spec.fmax,
    )
    return magnitude.astype(np.float64)


def _bin_weights(n_bins: int, n_fft: int) -> np.ndarray:
    # one-sided spectrum: interior bins stand for two conjugate bins
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    if n_fft % 2 == 0:
        w[-1] = 1.0
    return w[:, None]


class _Projector:
    def __init__(self, mel22: MelSpectrogram):
        spec = mel22.spec
        self.spec = spec
        self.length = mel22.num_frames * spec.hop
        magnitude = mel_to_magnitude(mel22)
        # a length-(T * hop) signal has T + 1 centred frames
        self.target = np.concatenate([magnitude, magnitude[:, -1:]], axis=1)
        self.weights = _bin_weights(self.target.shape[0], spec.n_fft)
        self.target_norm = self._norm(self.target)

    def _norm(self, m: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.weights * m * m)))

    def stft(self, x: np.ndarray) -> np.ndarray:
        return librosa.stft(
            x,
            n_fft=self.spec.n_fft,
            hop_length=self.spec.hop,
            win_length=self.spec.win,
            window="hann",
            center=True,
            pad_mode="constant",
        )

    def istft(self, X: np.ndarray) -> np.ndarray:
        return librosa.istft(
            X,
            hop_length=self.spec.hop,
            win_length=self.spec.win,
            n_fft=self.spec.n_fft,
            window="hann",
            center=True,
            length=self.length,
        )

    def convergence(self, X: np.ndarray) -> float:
        if self.target_norm == 0:
            return 0.0
        return self._norm(np.abs(X) - self.target) / self.target_norm


def griffin_lim_history(mel22: MelSpectrogram, n_iters: int = 32, seed: int = 0) -> Tuple[Waveform, List[float]]:
    """Reconstruct a waveform; also returns spectral convergence after each iteration (index 0 = initial phase)."""
    if n_iters < 0:
        raise ArgumentError(f"n_iters must be >= 0, got {n_iters}")
    proj = _Projector(mel22)
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(proj.target.shape))
    x = proj.istft(proj.target * angles)
    X = proj.stft(x)
    history = [proj.convergence(X)]
    for _ in range(n_iters):
        mag = np.abs(X)
        angles = np.where(mag > 0, X / np.where(mag > 0, mag, 1.0), 1.0)
        x = proj.istft(proj.target * angles)
        X = proj.stft(x)
        history.append(proj.convergence(X))
    logger.debug("griffin-lim: %d iterations, convergence %.4f -> %.4f", n_iters, history[0], history[-1])
    return Waveform(x, mel22.spec.sample_rate), history


def griffin_lim(mel22: MelSpectrogram, n_iters: int = 32, seed: int = 0) -> Waveform:
    """T * hop samples at the mel's sample rate."""
    wave, _ = griffin_lim_history(mel22, n_iters, seed)
    return wave
