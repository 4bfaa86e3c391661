"""
Utterance Store
Lazily loads manifest audio and caches the per-utterance views the trainers need:
the 22.05 kHz master, the 16 kHz analysis mel, the 22.05 kHz target mel and prosody.
"""

import logging
from typing import Dict, Iterable, Optional

from src.audio.frame_domains import FrameSpec, MelSpectrogram, Waveform, compute_mel, load_wav, resample
from src.audio.prosody import ProsodyTargets, extract_prosody
from src.collectors.manifest import UtteranceRecord

logger = logging.getLogger(__name__)


class UtteranceStore:
    """Per-utt_id cache of waveforms, mels and prosody targets."""

    def __init__(
        self,
        records: Iterable[UtteranceRecord] = (),
        spec16: Optional[FrameSpec] = None,
        spec22: Optional[FrameSpec] = None,
    ):
        self.spec16 = spec16 or FrameSpec.analysis_16k()
        self.spec22 = spec22 or FrameSpec.synthesis_22k()
        self.records: Dict[str, UtteranceRecord] = {r.utt_id: r for r in records}
        self._wave22: Dict[str, Waveform] = {}
        self._mel16: Dict[str, MelSpectrogram] = {}
        self._mel22: Dict[str, MelSpectrogram] = {}
        self._prosody: Dict[str, ProsodyTargets] = {}

    def add(self, record: UtteranceRecord) -> None:
        self.records[record.utt_id] = record

    def waveform22(self, record: UtteranceRecord) -> Waveform:
        if record.utt_id not in self._wave22:
            w = load_wav(record.path)
            if w.sample_rate != self.spec22.sample_rate:
                w = resample(w, self.spec22.sample_rate)
            self._wave22[record.utt_id] = w
        return self._wave22[record.utt_id]

    def waveform16(self, record: UtteranceRecord) -> Waveform:
        return resample(self.waveform22(record), self.spec16.sample_rate)

    def mel16(self, record: UtteranceRecord) -> MelSpectrogram:
        if record.utt_id not in self._mel16:
            mel = compute_mel(self.waveform16(record), self.spec16)
            mel.utt_id = record.utt_id
            self._mel16[record.utt_id] = mel
        return self._mel16[record.utt_id]

    def mel22(self, record: UtteranceRecord) -> MelSpectrogram:
        if record.utt_id not in self._mel22:
            mel = compute_mel(self.waveform22(record), self.spec22)
            mel.utt_id = record.utt_id
            self._mel22[record.utt_id] = mel
        return self._mel22[record.utt_id]

    def prosody(self, record: UtteranceRecord) -> ProsodyTargets:
        if record.utt_id not in self._prosody:
            self._prosody[record.utt_id] = extract_prosody(self.waveform22(record), self.mel22(record))
        return self._prosody[record.utt_id]

    def __len__(self) -> int:
        return len(self.records)
