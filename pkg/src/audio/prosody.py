"""
Prosody targets for the acoustic model: frame-level pitch (log-Hz), voicing and energy.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import librosa
import numpy as np

from src.audio.features import read_feature_file, write_feature_file
from src.audio.frame_domains import (
    FrameSpec,
    MelSpectrogram,
    Waveform,
    match_length,
    mel_to_linear_energy,
    num_frames,
)
from src.utils.errors import DomainError, FormatError, ShapeError

F0_MIN = 50.0
F0_MAX = 600.0
VOICING_THRESHOLD = 0.5
# frames quieter than this (mean square) are never voiced
SILENCE_POWER = 1e-8


@dataclass
class ProsodyTargets:
    """Per-frame pitch (log-Hz, 0 when unvoiced), energy and voicing mask."""

    pitch: np.ndarray
    energy: np.ndarray
    voicing: np.ndarray

    def __post_init__(self):
        self.pitch = np.asarray(self.pitch, dtype=np.float32)
        self.energy = np.asarray(self.energy, dtype=np.float32)
        self.voicing = np.asarray(self.voicing, dtype=bool)
        n = len(self.pitch)
        if len(self.energy) != n or len(self.voicing) != n:
            raise ShapeError(
                f"prosody lengths differ: pitch {n}, energy {len(self.energy)}, voicing {len(self.voicing)}"
            )
        if not np.all(np.isfinite(self.pitch)):
            raise ShapeError("pitch contour contains non-finite values")
        if np.any(self.energy < 0):
            raise ShapeError("energy contour must be non-negative")

    def __len__(self) -> int:
        return len(self.pitch)

    def to_matrix(self) -> np.ndarray:
        return np.stack([self.pitch, self.energy, self.voicing.astype(np.float32)], axis=1)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "ProsodyTargets":
        if matrix.ndim != 2 or matrix.shape[1] != 3:
            raise FormatError(f"prosody matrix must be (T, 3), got {matrix.shape}")
        return cls(pitch=matrix[:, 0], energy=matrix[:, 1], voicing=matrix[:, 2] > 0.5)

    def crop_or_pad(self, length: int) -> "ProsodyTargets":
        return ProsodyTargets.from_matrix(match_length(self.to_matrix(), length))


def _frames(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    padded = np.pad(samples, spec.n_fft // 2, mode="constant")
    return librosa.util.frame(padded, frame_length=spec.n_fft, hop_length=spec.hop)


def normalized_autocorrelation(w: Waveform, spec: FrameSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Window-corrected normalised autocorrelation per frame over the F0 lag range.

    Returns (lags, corr of shape (n_lags, T), per-frame mean power).
    """
    n_frames = num_frames(len(w), spec)
    frames = _frames(w.samples, spec)[:, :n_frames]
    frames = frames - frames.mean(axis=0, keepdims=True)
    window = np.hanning(spec.n_fft + 2)[1:-1]
    windowed = frames * window[:, None]

    n_fft = 2 * spec.n_fft
    spectrum = np.fft.rfft(windowed, n=n_fft, axis=0)
    ac = np.fft.irfft(np.abs(spectrum) ** 2, n=n_fft, axis=0)[: spec.n_fft]
    w_spec = np.fft.rfft(window, n=n_fft)
    ac_window = np.fft.irfft(np.abs(w_spec) ** 2, n=n_fft)[: spec.n_fft]

    lag_min = int(np.floor(spec.sample_rate / F0_MAX))
    lag_max = min(int(np.ceil(spec.sample_rate / F0_MIN)), spec.n_fft - 1)
    lags = np.arange(lag_min, lag_max + 1)

    power = ac[0]
    safe = np.where(power > 0, power, 1.0)
    corr = (ac[lags] / safe) / (ac_window[lags] / ac_window[0])[:, None]
    return lags, corr, power / np.sum(window ** 2)


def extract_pitch(w: Waveform, spec22: FrameSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Autocorrelation F0 in log-Hz per frame, plus the voicing mask."""
    if w.sample_rate != spec22.sample_rate:
        raise DomainError(f"pitch extraction expects {spec22.sample_rate} Hz, got {w.sample_rate} Hz")
    lags, corr, frame_power = normalized_autocorrelation(w, spec22)
    n_frames = corr.shape[1]

    pitch = np.zeros(n_frames, dtype=np.float64)
    voicing = np.zeros(n_frames, dtype=bool)
    for t in range(n_frames):
        if frame_power[t] < SILENCE_POWER:
            continue
        r = corr[:, t]
        peak = float(r.max())
        if peak < VOICING_THRESHOLD:
            continue
        # first lag close to the global maximum avoids octave-down errors
        idx = int(np.argmax(r >= 0.9 * peak))
        while idx + 1 < len(r) and r[idx + 1] > r[idx]:
            idx += 1
        offset = 0.0
        if 0 < idx < len(r) - 1:
            a, b, c = r[idx - 1], r[idx], r[idx + 1]
            denom = a - 2 * b + c
            if denom < 0:
                offset = 0.5 * (a - c) / denom
        f0 = spec22.sample_rate / (lags[idx] + offset)
        if F0_MIN <= f0 <= F0_MAX:
            pitch[t] = np.log(f0)
            voicing[t] = True
    return pitch, voicing


def extract_energy(mel22: MelSpectrogram) -> np.ndarray:
    """Per-frame L2 norm of the linear mel energies."""
    return np.linalg.norm(mel_to_linear_energy(mel22), axis=1)


def extract_prosody(w: Waveform, mel22: MelSpectrogram) -> ProsodyTargets:
    pitch, voicing = extract_pitch(w, mel22.spec)
    energy = extract_energy(mel22)
    n = min(len(pitch), len(energy))
    return ProsodyTargets(pitch=pitch[:n], energy=energy[:n], voicing=voicing[:n])


def save_prosody(targets: ProsodyTargets, path: Union[str, Path]) -> str:
    return write_feature_file(targets.to_matrix(), path)


def load_prosody(path: Union[str, Path]) -> ProsodyTargets:
    return ProsodyTargets.from_matrix(read_feature_file(path))
