"""
Metric Harness
Objective evaluation of converted speech: mel-cepstral distortion against the
paired normal reference, speaker cosine, duration error against the aligner's
length law and harmonic-to-noise ratio, plus optional external scorers.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.fft import dct
from scipy.interpolate import interp1d

from src.alignment.length_channel_aligner import target_length
from src.analyzers.external_adapters import MetricAdapter
from src.audio.frame_domains import FrameSpec, MelSpectrogram, Waveform, compute_mel, load_wav, num_frames, resample
from src.audio.prosody import normalized_autocorrelation
from src.collectors.manifest import UtteranceRecord, pairs
from src.collectors.speaker_embedding import SpeakerEmbeddingProvider, StatsPoolProvider, make_provider
from src.models.content_encoder import encoded_length
from src.utils.config_manager import RunConfig
from src.utils.errors import ArgumentError, WhisperVCError

logger = logging.getLogger(__name__)

CONVERTED = "converted"
WHISPER_INPUT = "whisper_input"
PAIRED_NORMAL = "paired_normal"
INPUT_SPEAKER = "input_speaker"
INTERNAL_FIELDS = ("mel_cepstral_distortion", "speaker_cosine", "duration_error", "hnr_db")
# per-utterance failures that become error rows instead of aborting the report
SCORING_ERRORS = (FileNotFoundError, WhisperVCError, ValueError, RuntimeError)

# published full-scale results; a desk-scale run cannot reproduce them
REFERENCE_ROWS: Dict[str, Dict[str, float]] = {
    "whispered input": {"dnsmos": 1.10, "utmos": 1.30, "cer": 0.2578, "speaker_cosine": 0.58},
    "proposed system": {"dnsmos": 3.11, "utmos": 2.52, "cer": 0.1867, "speaker_cosine": 0.76},
    "ground truth": {"dnsmos": 3.14, "utmos": 2.87},
}
REFERENCE_NOTE = "full-scale reference values; not reproducible at desk scale"

N_CEPSTRA = 13
MCD_SCALE = 10.0 / math.log(10.0) * math.sqrt(2.0)
# frames more than this far below the loudest frame (in power) are ignored by the HNR
HNR_ACTIVITY_DB = 30.0
HNR_MAX_CORR = 0.999


def time_normalize(frames: np.ndarray, length: int) -> np.ndarray:
    """Linear interpolation along time to `length` frames, endpoints aligned."""
    if length < 1:
        raise ArgumentError(f"length must be >= 1, got {length}")
    t = frames.shape[0]
    if t == length:
        return frames
    if t == 1:
        return np.repeat(frames, length, axis=0)
    src = np.linspace(0.0, 1.0, t)
    dst = np.linspace(0.0, 1.0, length)
    return interp1d(src, frames, axis=0)(dst)


def mel_cepstrum(mel: MelSpectrogram, n_cepstra: int = N_CEPSTRA) -> np.ndarray:
    """Orthonormal DCT-II of the log-mel frames, first n_cepstra coefficients."""
    return dct(mel.frames, type=2, axis=1, norm="ortho")[:, :n_cepstra]


def mel_cepstral_distortion(converted: MelSpectrogram, reference: MelSpectrogram, n_cepstra: int = N_CEPSTRA) -> float:
    """MCD in dB over c1..c(n-1), after time-normalising `converted` to the reference length."""
    if converted.spec.n_mels != reference.spec.n_mels:
        raise ArgumentError("MCD needs mels with the same number of bins")
    c_ref = mel_cepstrum(reference, n_cepstra)[:, 1:]
    c_conv = time_normalize(mel_cepstrum(converted, n_cepstra), reference.num_frames)[:, 1:]
    per_frame = np.sqrt(np.sum((c_conv - c_ref) ** 2, axis=1))
    return float(MCD_SCALE * per_frame.mean())


def harmonic_to_noise_ratio(w: Waveform, spec: Optional[FrameSpec] = None) -> float:
    """Linear HNR r/(1-r) from the mean peak normalised autocorrelation of active frames."""
    spec = spec or FrameSpec.synthesis_22k()
    if w.sample_rate != spec.sample_rate:
        w = resample(w, spec.sample_rate)
    _, corr, power = normalized_autocorrelation(w, spec)
    if not np.any(power > 0):
        return 0.0
    active = power >= power.max() * 10 ** (-HNR_ACTIVITY_DB / 10)
    r = float(np.clip(corr[:, active].max(axis=0), 0.0, HNR_MAX_CORR).mean())
    return r / (1.0 - r)


def hnr_db(w: Waveform, spec: Optional[FrameSpec] = None) -> float:
    return 10.0 * math.log10(max(harmonic_to_noise_ratio(w, spec), 1e-10))


def predicted_frames(input_16k_samples: int, spec16: FrameSpec, spec22: FrameSpec) -> int:
    """Target-length output frame count for a 16 kHz input of the given length."""
    t_enc = encoded_length(num_frames(input_16k_samples, spec16))
    return target_length(t_enc, spec16, spec22)


def duration_error(output: Waveform, input_16k_samples: int, spec16: FrameSpec, spec22: FrameSpec) -> int:
    """|output frames - target_length prediction| with output frames = samples // hop22."""
    if output.sample_rate != spec22.sample_rate:
        output = resample(output, spec22.sample_rate)
    return abs(len(output) // spec22.hop - predicted_frames(input_16k_samples, spec16, spec22))


@dataclass
class UtteranceMetrics:
    pair_id: str
    system: str
    mel_cepstral_distortion: Optional[float] = None
    speaker_cosine: Optional[float] = None
    duration_error: Optional[float] = None
    hnr_db: Optional[float] = None
    external: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        row = {k: v for k, v in asdict(self).items() if k != "external"}
        row.update(self.external)
        return row


@dataclass
class MetricReport:
    """Per-utterance rows plus per-system means; errored rows are excluded from the means."""

    rows: List[UtteranceMetrics]
    cosine_reference: str = PAIRED_NORMAL
    generated_at: str = field(default_factory=lambda: datetime.now().isoformat())

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows])

    def external_fields(self) -> List[str]:
        names: List[str] = []
        for r in self.rows:
            for name in r.external:
                if name not in names:
                    names.append(name)
        return names

    def aggregate(self) -> Dict[str, Dict[str, float]]:
        df = self.frame()
        if df.empty:
            return {}
        ok = df[df["error"].isna()]
        fields = [f for f in INTERNAL_FIELDS + tuple(self.external_fields()) if f in ok.columns]
        summary = {}
        for system, group in ok.groupby("system", sort=False):
            means = group[fields].mean(numeric_only=True)
            entry = {f: float(means[f]) for f in fields if not pd.isna(means.get(f))}
            entry["n_utterances"] = int(len(group))
            summary[system] = entry
        return summary

    def errors(self) -> List[Dict[str, str]]:
        return [{"pair_id": r.pair_id, "system": r.system, "error": r.error} for r in self.rows if r.error]

    def header(self) -> Dict[str, Any]:
        return {
            "type": "header",
            "generated_at": self.generated_at,
            "cosine_reference": self.cosine_reference,
            "reference_rows": REFERENCE_ROWS,
            "reference_note": REFERENCE_NOTE,
        }

    def to_records(self) -> List[Dict[str, Any]]:
        """Header, one record per utterance, then one aggregate record per system."""
        records = [self.header()]
        records += [{"type": "utterance", **r.to_dict()} for r in self.rows]
        records += [{"type": "aggregate", "system": s, **v} for s, v in self.aggregate().items()]
        return records


class MetricHarness:
    """Computes the internal metrics for one (output, input, reference) triple."""

    def __init__(
        self,
        spec16: Optional[FrameSpec] = None,
        spec22: Optional[FrameSpec] = None,
        embedder: Optional[SpeakerEmbeddingProvider] = None,
        cosine_reference: str = PAIRED_NORMAL,
    ):
        if cosine_reference not in (PAIRED_NORMAL, INPUT_SPEAKER):
            raise ArgumentError(f"cosine_reference must be {PAIRED_NORMAL!r} or {INPUT_SPEAKER!r}")
        self.spec16 = spec16 or FrameSpec.analysis_16k()
        self.spec22 = spec22 or FrameSpec.synthesis_22k()
        self.embedder = embedder or StatsPoolProvider(spec=self.spec22)
        self.cosine_reference = cosine_reference

    def _at22(self, w: Waveform) -> Waveform:
        return w if w.sample_rate == self.spec22.sample_rate else resample(w, self.spec22.sample_rate)

    def score(self, pair_id: str, system: str, output: Waveform, whisper: Waveform, normal: Waveform) -> UtteranceMetrics:
        output22, normal22 = self._at22(output), self._at22(normal)
        speaker_ref = normal22 if self.cosine_reference == PAIRED_NORMAL else self._at22(whisper)
        n16 = len(resample(whisper, self.spec16.sample_rate))
        mcd = mel_cepstral_distortion(compute_mel(output22, self.spec22), compute_mel(normal22, self.spec22))
        cosine = self.embedder.embed(output22).cosine(self.embedder.embed(speaker_ref))
        return UtteranceMetrics(
            pair_id=pair_id,
            system=system,
            mel_cepstral_distortion=mcd,
            speaker_cosine=cosine,
            duration_error=float(duration_error(output22, n16, self.spec16, self.spec22)),
            hnr_db=hnr_db(output22, self.spec22),
        )


def output_path(outputs_dir: Union[str, Path], pair_id: str) -> Path:
    return Path(outputs_dir) / f"{pair_id}.wav"


def _apply_adapters(
    rows: List[UtteranceMetrics], paths: Dict[int, str], texts: Dict[int, Optional[str]], adapters: Sequence[MetricAdapter]
) -> None:
    order = sorted(paths)
    for adapter in adapters:
        scores = adapter.score([paths[i] for i in order], [texts[i] for i in order])
        for i in order:
            if paths[i] in scores:
                rows[i].external[adapter.name] = scores[paths[i]]


def evaluate(
    records: Sequence[UtteranceRecord],
    outputs_dir: Union[str, Path],
    harness: Optional[MetricHarness] = None,
    adapters: Sequence[MetricAdapter] = (),
    include_input_baseline: bool = False,
) -> MetricReport:
    """
    Score converted outputs (<outputs_dir>/<pair_id>.wav) against their paired normal references.

    Args:
        records: paired manifest records to evaluate
        outputs_dir: directory holding one converted WAV per pair_id
        harness: metric settings; defaults to a stats-pool embedder and paired-normal cosine
        adapters: external scorers; their fields are absent when none are configured
        include_input_baseline: also score the whispered inputs as their own system

    Returns:
        MetricReport; missing or unreadable outputs become per-utterance error entries
    """
    harness = harness or MetricHarness()
    rows: List[UtteranceMetrics] = []
    paths: Dict[int, str] = {}
    texts: Dict[int, Optional[str]] = {}
    pair_list = pairs(records)
    systems = (CONVERTED, WHISPER_INPUT) if include_input_baseline else (CONVERTED,)
    for whisper_rec, normal_rec in pair_list:
        pair_id = whisper_rec.pair_id
        try:
            whisper, normal = load_wav(whisper_rec.path), load_wav(normal_rec.path)
        except SCORING_ERRORS as e:
            logger.warning("pair %s: unreadable reference: %s", pair_id, e)
            rows.extend(UtteranceMetrics(pair_id=pair_id, system=s, error=str(e)) for s in systems)
            continue
        out_path = output_path(outputs_dir, pair_id)
        try:
            row = harness.score(pair_id, CONVERTED, load_wav(out_path), whisper, normal)
            paths[len(rows)] = str(out_path)
            texts[len(rows)] = normal_rec.text
        except SCORING_ERRORS as e:
            logger.warning("pair %s: %s", pair_id, e)
            row = UtteranceMetrics(pair_id=pair_id, system=CONVERTED, error=str(e))
        rows.append(row)
        if include_input_baseline:
            paths[len(rows)] = whisper_rec.path
            texts[len(rows)] = normal_rec.text
            rows.append(harness.score(pair_id, WHISPER_INPUT, whisper, whisper, normal))
    _apply_adapters(rows, paths, texts, adapters)
    report = MetricReport(rows, cosine_reference=harness.cosine_reference)
    logger.info("evaluated %d pairs (%d errors)", len(pair_list), len(report.errors()))
    return report


def build_harness(run: RunConfig) -> MetricHarness:
    evaluation = run.section("evaluation")
    kind = evaluation.get("embedder", "stats-pool")
    embedder = make_provider(kind, seed=int(run.section("speaker").get("seed", 0)), spec=run.spec22)
    return MetricHarness(run.spec16, run.spec22, embedder, evaluation.get("cosine_reference", PAIRED_NORMAL))
