"""
Synthetic Paired Corpus
Source-filter generator for paired whisper/normal utterances. Normal speech is a
pulse train at the speaker's F0 through per-token formant resonators; the whisper
twin uses white-noise excitation through the same tokens with raised formants,
wider bandwidths, lower energy and a different tempo.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from scipy.signal import lfilter
from tqdm import tqdm

from src.audio.frame_domains import Waveform, save_wav
from src.utils.errors import ArgumentError

logger = logging.getLogger(__name__)

DEFAULT_PHONES: Dict[str, Tuple[float, float, float]] = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
    "y": (400.0, 1600.0, 2400.0),
}
BANDWIDTHS = (80.0, 100.0, 140.0)
NORMAL_RMS = 0.1
FADE_SECONDS = 0.01


@dataclass
class SynthSpec:
    """Corpus shape and whisper simulation parameters."""

    n_speakers: int = 2
    utterances_per_speaker: int = 20
    phone_inventory: Dict[str, Tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_PHONES))
    tokens_per_utterance: Tuple[int, int] = (4, 7)
    token_seconds: Tuple[float, float] = (0.09, 0.15)
    f0_ranges: List[Tuple[float, float]] = field(default_factory=list)
    formant_scales: List[float] = field(default_factory=list)
    token_f0_offset: float = 0.15
    whisper_energy_drop: float = 12.0
    whisper_formant_shift: float = 1.1
    whisper_bandwidth_scale: float = 2.0
    tempo_ratio_range: Tuple[float, float] = (0.85, 1.15)
    sample_rate: int = 22050
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise ArgumentError("need at least one speaker and one utterance per speaker")
        if not self.whisper_energy_drop > 0:
            raise ArgumentError(f"whisper_energy_drop must be > 0 dB, got {self.whisper_energy_drop}")
        if not self.whisper_formant_shift > 1:
            raise ArgumentError(f"whisper_formant_shift must be > 1, got {self.whisper_formant_shift}")
        lo, hi = self.tempo_ratio_range
        if not (0 < lo <= hi):
            raise ArgumentError(f"tempo ratios must be positive and ordered, got {self.tempo_ratio_range}")
        if not self.phone_inventory:
            raise ArgumentError("phone inventory is empty")
        self.tokens_per_utterance = tuple(self.tokens_per_utterance)
        self.token_seconds = tuple(self.token_seconds)
        self.tempo_ratio_range = tuple(self.tempo_ratio_range)
        self.phone_inventory = {k: tuple(v) for k, v in self.phone_inventory.items()}
        if not self.f0_ranges:
            self.f0_ranges = [_default_f0_range(k) for k in range(self.n_speakers)]
        if not self.formant_scales:
            self.formant_scales = [_default_formant_scale(k) for k in range(self.n_speakers)]
        self.f0_ranges = [tuple(r) for r in self.f0_ranges]
        if len(self.f0_ranges) != self.n_speakers or len(self.formant_scales) != self.n_speakers:
            raise ArgumentError("f0_ranges and formant_scales need one entry per speaker")

    @property
    def speakers(self) -> List[str]:
        return [speaker_name(k) for k in range(self.n_speakers)]

    def speaker_index(self, speaker: str) -> int:
        try:
            return self.speakers.index(speaker)
        except ValueError:
            raise ArgumentError(f"unknown speaker {speaker!r}; corpus has {self.speakers}") from None


def speaker_name(k: int) -> str:
    return f"spk{k:02d}"


def _default_f0_range(k: int) -> Tuple[float, float]:
    centre = 110.0 + (k * 67) % 160
    return (0.85 * centre, 1.15 * centre)


def _default_formant_scale(k: int) -> float:
    return 0.92 + 0.16 * ((k * 37) % 11) / 10.0


def _resonator(freq: float, bandwidth: float, sample_rate: int) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order resonator with unit gain at DC."""
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2 * np.pi * freq / sample_rate
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a


def _filter_tokens(
    excitation: np.ndarray,
    bounds: List[int],
    formants: List[Tuple[float, float, float]],
    bandwidth_scale: float,
    sample_rate: int,
) -> np.ndarray:
    """Cascade three resonators per token, carrying filter state across token boundaries."""
    out = np.zeros_like(excitation)
    states = [np.zeros(2) for _ in range(3)]
    for (start, stop), token_formants in zip(zip(bounds[:-1], bounds[1:]), formants):
        seg = excitation[start:stop]
        for k, (freq, bw) in enumerate(zip(token_formants, BANDWIDTHS)):
            freq = min(freq, 0.45 * sample_rate)
            b, a = _resonator(freq, bw * bandwidth_scale, sample_rate)
            seg, states[k] = lfilter(b, a, seg, zi=states[k])
        out[start:stop] = seg
    return out


def _token_bounds(durations: np.ndarray, sample_rate: int) -> List[int]:
    lengths = np.maximum(1, np.round(durations * sample_rate).astype(int))
    return [0] + np.cumsum(lengths).tolist()


def _fade(x: np.ndarray, sample_rate: int) -> np.ndarray:
    n = min(int(FADE_SECONDS * sample_rate), len(x) // 2)
    if n > 0:
        ramp = np.linspace(0.0, 1.0, n)
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def _set_rms(x: np.ndarray, target: float) -> np.ndarray:
    rms = float(np.sqrt(np.mean(x ** 2)))
    return x * (target / rms) if rms > 0 else x


def synth_pair(spec: SynthSpec, speaker: str, utt_index: int) -> Tuple[Waveform, Waveform, List[str]]:
    """
    Generate one normal/whisper pair.

    Args:
        spec: corpus parameters
        speaker: speaker name (spk00, spk01, ...)
        utt_index: utterance number within the speaker

    Returns:
        (normal, whisper, tokens), both waveforms at spec.sample_rate
    """
    k = spec.speaker_index(speaker)
    if utt_index < 0:
        raise ArgumentError(f"utt_index must be >= 0, got {utt_index}")
    sr = spec.sample_rate
    rng = np.random.default_rng([spec.seed, k, utt_index])

    phones = sorted(spec.phone_inventory)
    n_tokens = int(rng.integers(spec.tokens_per_utterance[0], spec.tokens_per_utterance[1] + 1))
    tokens = [phones[i] for i in rng.integers(0, len(phones), n_tokens)]
    durations = rng.uniform(spec.token_seconds[0], spec.token_seconds[1], n_tokens)
    f0_lo, f0_hi = spec.f0_ranges[k]
    base_f0 = rng.uniform(f0_lo, f0_hi)
    offsets = rng.uniform(-spec.token_f0_offset, spec.token_f0_offset, n_tokens)
    tempo = rng.uniform(*spec.tempo_ratio_range)
    noise_seed = int(rng.integers(0, 2 ** 31))
    scale = spec.formant_scales[k]

    # normal: pulse train at a per-token F0 target
    bounds = _token_bounds(durations, sr)
    f0 = np.concatenate([np.full(b - a, base_f0 * (1 + o)) for a, b, o in zip(bounds[:-1], bounds[1:], offsets)])
    phase = np.cumsum(f0 / sr)
    pulses = np.zeros_like(phase)
    pulses[1:][np.floor(phase[1:]) > np.floor(phase[:-1])] = 1.0
    normal_formants = [tuple(f * scale for f in spec.phone_inventory[t]) for t in tokens]
    normal = _filter_tokens(pulses, bounds, normal_formants, 1.0, sr)
    normal = _set_rms(_fade(normal, sr), NORMAL_RMS)

    # whisper: same tokens, stretched, noise-excited, raised formants
    w_bounds = _token_bounds(durations * tempo, sr)
    noise = np.random.default_rng(noise_seed).standard_normal(w_bounds[-1])
    whisper_formants = [tuple(f * spec.whisper_formant_shift for f in fs) for fs in normal_formants]
    whisper = _filter_tokens(noise, w_bounds, whisper_formants, spec.whisper_bandwidth_scale, sr)
    whisper = _set_rms(_fade(whisper, sr), NORMAL_RMS * 10 ** (-spec.whisper_energy_drop / 20))

    return Waveform(np.clip(normal, -1, 1), sr), Waveform(np.clip(whisper, -1, 1), sr), tokens


def pair_id_for(speaker: str, utt_index: int) -> str:
    return f"{speaker}_{utt_index:03d}"


def write_synthetic_corpus(spec: SynthSpec, out_dir: Union[str, Path], show_progress: bool = False) -> Path:
    """Write WAV masters and a manifest.jsonl; returns the manifest path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(s, i) for s in spec.speakers for i in range(spec.utterances_per_speaker)]
    lines = []
    for speaker, i in tqdm(jobs, desc="synthesising", disable=not show_progress):
        normal, whisper, tokens = synth_pair(spec, speaker, i)
        pair_id = pair_id_for(speaker, i)
        for style, wave in (("normal", normal), ("whisper", whisper)):
            rel = f"wavs/{pair_id}_{style}.wav"
            save_wav(wave, out_dir / rel, subtype="FLOAT")
            lines.append(
                {
                    "utt_id": f"{pair_id}_{style[0]}",
                    "pair_id": pair_id,
                    "speaker": speaker,
                    "style": style,
                    "path": rel,
                    "text": " ".join(tokens),
                    "sample_rate": spec.sample_rate,
                }
            )
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(json.dumps(line, ensure_ascii=False) + "\n")
    logger.info("wrote %d pairs (%d speakers) to %s", len(jobs), spec.n_speakers, out_dir)
    return manifest

